"""Facial-affect toolkit: a small from-scratch neural network stack with
frame and sequence models predicting arousal, valence, and categorical
expression, plus the data pipeline, trainer, metrics, and CLI around them.
"""

__version__ = "0.1.0"

from .errors import (DataFormatError, FckitError, InternalError, ShapeError,
                     ValidationError)
from .model import (CLASS_NAMES, DEFAULT_SEED, INPUT_SIZE, SEQ_LEN,
                    ModelGraph, PredictionBatch, PredictionTriple,
                    build_facechannel, build_facechannels, count_params)

__all__ = [
    "CLASS_NAMES",
    "DEFAULT_SEED",
    "DataFormatError",
    "FckitError",
    "INPUT_SIZE",
    "InternalError",
    "ModelGraph",
    "PredictionBatch",
    "PredictionTriple",
    "SEQ_LEN",
    "ShapeError",
    "ValidationError",
    "build_facechannel",
    "build_facechannels",
    "count_params",
    "__version__",
]
