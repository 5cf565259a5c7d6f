# This file makes the 'autodiff' folder a Python package.
# It holds the small tensor engine: Tensor/Tape (tensor.py), the
# differentiable operators (ops.py) and the optimizer (optim.py).
#   from autodiff.ops import conv2d, relu
