"""Exception types shared across the toolkit."""


class StructuralError(ValueError):
    """A structural invariant is violated (rank, zero-row pattern, definiteness)."""


class DimensionError(ValueError):
    """An argument has the wrong length or shape."""


class NotAssignableError(ValueError):
    """The requested target is not an assignable equilibrium.

    Carries the norm of the unactuated residual that should have vanished.
    """

    def __init__(self, residual_norm: float, message: str | None = None):
        self.residual_norm = float(residual_norm)
        super().__init__(
            message or f"target is not assignable (residual norm {residual_norm:.3e})"
        )


class EquilibriumSolveError(RuntimeError):
    """The algebraic equilibrium solve failed to converge."""

    def __init__(self, message: str, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class NonphysicalEquilibriumError(EquilibriumSolveError):
    """The equilibrium solve converged to a negative temperature."""


class NoCertificateError(RuntimeError):
    """No diagonal stability certificate was found within the search budget.

    Not a proof of infeasibility, except when the matrix is not Hurwitz.
    """


class BlowUpError(RuntimeError):
    """A simulated trajectory left the admissible region or became non-finite."""

    def __init__(self, time: float, state, message: str | None = None):
        self.time = float(time)
        self.state = state
        super().__init__(
            message or f"state blow-up at t={time:.6g} (|x|={_safe_norm(state):.3e})"
        )


class ConfigError(ValueError):
    """A scenario configuration is malformed or inconsistent."""


def _safe_norm(state) -> float:
    try:
        import numpy as np

        return float(np.linalg.norm(np.asarray(state, dtype=float).ravel()))
    except Exception:
        return float("nan")
