"""Shared exception types."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class TrainingDiverged(RuntimeError):
    """The training objective became non-finite; carries a diagnostic message."""
