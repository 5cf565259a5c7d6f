# This file makes the 'utils' folder a Python package.
# Shared plumbing lives here: file formats (storage), config/logging helpers,
# and the error types every other package raises.
