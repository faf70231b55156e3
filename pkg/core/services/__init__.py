"""
Core services for the transducer lab: lattice algebra, model, trainer,
decoder, synthetic corpus and their file formats
"""
from .errors import (
    CheckpointError,
    ConfigError,
    CorpusError,
    CorpusFormatError,
    DecodeAborted,
    DecodeBudgetExceeded,
    DecodeError,
    DegenerateLatticeError,
    LatticeError,
    ModelError,
    NonFiniteLossError,
    TransducerError,
)

__all__ = [
    'CheckpointError',
    'ConfigError',
    'CorpusError',
    'CorpusFormatError',
    'DecodeAborted',
    'DecodeBudgetExceeded',
    'DecodeError',
    'DegenerateLatticeError',
    'LatticeError',
    'ModelError',
    'NonFiniteLossError',
    'TransducerError',
]
