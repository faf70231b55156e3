"""
Exception hierarchy shared by the transducer services.

Management commands map these onto process exit codes; see
core.management.base.
"""
from typing import List, Optional


class TransducerError(ValueError):
    """Base class for every failure raised by core.services."""


class LatticeError(TransducerError):
    """Inconsistent lattice dimensions, bad target ids or non-finite entries."""


class DegenerateLatticeError(LatticeError):
    """Every alignment path has probability zero."""


class ModelError(TransducerError):
    """Length overflow, vocabulary overflow or shape mismatch in the model."""


class CheckpointError(TransducerError):
    """Unreadable checkpoint or checkpoint/config mismatch."""


class NonFiniteLossError(TransducerError):
    """Training diverged."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"Non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


class DecodeError(TransducerError):
    """Decoder precondition violated."""


class DecodeAborted(DecodeError):
    """Decoding stopped early; carries the partial output."""

    def __init__(self, reason: str, phoneme: int, y_out: List[int], durations: List[int]):
        super().__init__(f"{reason} at phoneme {phoneme} after {len(y_out)} tokens")
        self.reason = reason
        self.phoneme = phoneme
        self.y_out = list(y_out)
        self.durations = list(durations)


class DecodeBudgetExceeded(DecodeAborted):
    """A phoneme emitted more tokens than max_steps_per_phoneme allows."""

    def __init__(self, phoneme: int, y_out: List[int], durations: List[int]):
        super().__init__("Step budget exceeded", phoneme, y_out, durations)


class CorpusError(TransducerError):
    """A sequence pair or task spec breaks its invariants."""


class CorpusFormatError(CorpusError):
    """Malformed corpus file line."""

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line_number = line_number


class ConfigError(TransducerError):
    """Unknown key or unparsable value in an experiment config."""
