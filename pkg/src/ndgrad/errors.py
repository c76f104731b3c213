from typing import Sequence, Tuple


class NdgradError(Exception):
    """Base class for compute-backend errors."""


class ShapeError(NdgradError, ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, dims: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op = op
        self.dims = [tuple(d) for d in dims]
        message = f"{op}: incompatible shapes {self.dims}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class NonFiniteError(NdgradError, FloatingPointError):
    """An op, gradient or loss term produced NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        message = f"{op}: non-finite values"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class GraphError(NdgradError, RuntimeError):
    """Backward was requested on a graph that cannot provide it."""


class CheckpointFormatError(NdgradError, ValueError):
    """A tensor container file is malformed or has an unsupported version."""
