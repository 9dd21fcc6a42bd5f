"""Converter from DEAP preprocessed subject archives to the EEGP format."""

from .convert import (
    BadVaqDistributionError,
    ConvertError,
    MissingSubjectError,
    OutOfRangeError,
    ShapeMismatchError,
    convert,
    read_vaq_map,
)

__version__ = "0.1.0"
