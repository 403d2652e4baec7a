"""
Exception hierarchy.

The CLI maps each family to an exit code: usage errors exit 1, data and format
errors exit 2, numerical failures exit 3.
"""

from __future__ import annotations


class DocMemError(Exception):
    """Base class for every error raised by docmem-nmt."""


class UsageError(DocMemError):
    """Invalid command line or inconsistent options."""


class DataFormatError(DocMemError, ValueError):
    """A corpus, vocabulary, config or checkpoint file is malformed."""

    def __init__(self, msg: str, *, path: str | None = None, line: int | None = None) -> None:
        self.path = path
        self.line = line
        location = ":".join(str(part) for part in (path, line) if part is not None)
        super().__init__(f"{location}: {msg}" if location else msg)


class ConfigError(DataFormatError):
    """Configuration file or value cannot be interpreted."""


class ShapeError(DocMemError, ValueError):
    """Tensor shapes do not conform to an operation's rule."""


class TapeError(DocMemError, ValueError):
    """Tensors from different tapes were mixed, or a gradient was requested off-tape."""


class ModelConfigError(DocMemError, ValueError):
    """Variant, memory selection and supplied contexts are inconsistent."""


class MemoryReadError(DocMemError, ValueError):
    """A memory read would have no admissible cell."""


class NumericalError(DocMemError, ArithmeticError):
    """Base class for numerical failures."""


class NonFiniteError(NumericalError):
    """An operation produced NaN or infinity."""

    def __init__(self, op: str, detail: str = "") -> None:
        self.op = op
        msg = f"non-finite output in op '{op}'"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class NonDeterministicError(NumericalError):
    """Two evaluations of the same function at the same point disagreed."""
