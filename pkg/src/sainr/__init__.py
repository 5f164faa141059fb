# SA-INR: self-supervised spatial and zero-shot angular super-resolution
__version__ = "0.1.0"
