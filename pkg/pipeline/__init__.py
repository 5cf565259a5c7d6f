# This file makes the 'pipeline' folder a Python package.
# Data in, samples out:
#   synthgen.py  : synthetic stations, commuters, weather and flow counts
#   folding.py   : period folding, splits, normalization
