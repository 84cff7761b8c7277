"""Shared exception types."""


class SizeError(ValueError):
    """Shape or resolution mismatch."""


class DataError(ValueError):
    """Invalid data content (bad class ids, too few samples, ...)."""


class NumericError(ArithmeticError):
    """NaN/Inf or other numeric failure during training or evaluation."""


class StateError(RuntimeError):
    """Operation called in the wrong lifecycle state."""
