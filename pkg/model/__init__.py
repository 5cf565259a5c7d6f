# This file makes the 'model' folder a Python package.
#   from model.mpstn import ModelConfig, init_params, forward
