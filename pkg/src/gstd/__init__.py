"""gstd: gender-debiasing and evaluation toolkit for speech-translation training data."""

__version__ = "0.1.0"
