"""
Exception hierarchy for the Blockout library.
Every failure the library reports on purpose derives from BlockoutError.
"""

from typing import Optional, Sequence


class BlockoutError(Exception):
    """Base class for all library errors."""


class ShapeError(BlockoutError, ValueError):
    """Operand shapes are incompatible for the requested operation."""

    def __init__(self, operation: str, *shapes: Sequence[int]):
        self.operation = operation
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " and ".join("x".join(str(d) for d in s) for s in self.shapes)
        super().__init__(f"{operation}: incompatible shapes {rendered}")


class DomainError(BlockoutError, ValueError):
    """A value lies outside the domain an operation accepts."""


class LogicError(BlockoutError, RuntimeError):
    """The caller violated a sequencing contract (stale state, double sampling, wrong mode)."""


class ParseError(BlockoutError):
    """
    Structured error raised while decoding a binary file.

    Args:
        message: What was wrong
        byte_offset: Offset into the file where decoding stopped
        record_index: Index of the offending record, when applicable
    """

    def __init__(self, message: str, byte_offset: int, record_index: Optional[int] = None):
        self.message = message
        self.byte_offset = byte_offset
        self.record_index = record_index
        location = f"byte {byte_offset}"
        if record_index is not None:
            location += f", record {record_index}"
        super().__init__(f"{message} ({location})")


class NonFiniteLossError(BlockoutError, ArithmeticError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, iteration: int, layer: str, max_abs_grad: float):
        self.iteration = iteration
        self.layer = layer
        self.max_abs_grad = max_abs_grad
        super().__init__(
            f"non-finite loss at iteration {iteration}; " f"largest gradient in {layer} (max |grad| = {max_abs_grad!r})"
        )


class ConfigError(BlockoutError, ValueError):
    """A run configuration file is unreadable or fails validation."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.path = path
        self.line = line
        self.field = field
        self.message = message
        prefix = path if line is None else f"{path}:{line}"
        if field:
            prefix += f": field '{field}'"
        super().__init__(f"{prefix}: {message}")
