"""Exception types shared across the toolchain.

Everything domain-level derives from ToolchainError so the CLI can map it to
exit code 1; UsageError maps to exit code 2.
"""


class ToolchainError(Exception):
    """Base class for domain errors."""


class ParameterError(ToolchainError):
    """Invalid argument value (bad kernel/stride/expansion, empty sets, ...)."""


class GraphError(ToolchainError):
    """Structural or shape problem in a model graph."""


class DecodeError(ToolchainError):
    """Malformed image payload."""


class NumericError(ToolchainError):
    """Non-finite weights or guarded integer overflow."""


class WeightLookupError(ToolchainError):
    """A parameterized layer has no weights in the store."""


class QuantizationError(ToolchainError):
    """Model-level quantization failure; message names the offending layer."""


class MultiplierRangeError(ToolchainError):
    """Requested fixed-point multiplier outside the representable (0, 1)."""


class EstimatorError(ToolchainError):
    """Footprint estimation failure (unresolved shapes, zero baseline)."""


class CapacityError(ToolchainError):
    """Search space exceeds the enumeration cap; use sampling instead."""


class InfeasibleError(ToolchainError):
    """No architecture satisfies the budgets; carries the smallest candidate."""

    def __init__(self, message: str, smallest=None):
        super().__init__(message)
        self.smallest = smallest


class EmissionError(ToolchainError):
    """C emission failed (arena cap exceeded, unpackable schedule)."""


class UsageError(ToolchainError):
    """Bad CLI invocation; maps to exit code 2."""
