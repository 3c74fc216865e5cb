"""Exception types shared across modules."""

__all__ = ["NumericalError"]


class NumericalError(RuntimeError):
    """Numerical failure (solver divergence, non-convergence, degenerate input).

    CLI commands translate this into exit code 3, distinct from usage/config
    errors (exit code 2).
    """
