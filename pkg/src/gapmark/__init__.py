"""Hidden Markov model activity recognition for partially annotated smart-home logs."""

__version__ = "0.1.0"
