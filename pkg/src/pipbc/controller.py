"""PI controllers fed by the incremental passive output.

Three variants share one step contract (x_a, z) -> (u, z_dot):

* robust:    u = -G2^{-1} Gamma_P Phit(x_a) + z, needs only the actuated
             block G2, the public phi family, and diagonal positive gains.
             It never touches the unknown weights D.
* ideal:     u = -K_P e + z with e = G2^T D Phit(x_a); oracle-only since e
             requires D.
* perturbed: the ideal law with D replaced by a constant estimate D0.

The congruences Lambda_P = G2^{-1} Gamma_P D^{-1} G2^{-T} and
Lambda_I = G2^T D Gamma_I^{-1} G2 tie the robust law to an equivalent ideal
one and build the Lyapunov function W = U + 0.5 zt^T Lambda_I zt used by the
simulation audits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StructuralError
from .storage import DiagonalWeights, PhiFamily, SeparableStorage, incremental_storage, passive_output

__all__ = [
    "RobustGains",
    "IdealGains",
    "ControllerState",
    "PerturbedEstimate",
    "WValue",
    "robust_pi_step",
    "ideal_pi_step",
    "perturbed_pi_step",
    "lambda_P",
    "lambda_I",
    "lyapunov_W",
    "RobustController",
    "IdealController",
    "PerturbedController",
    "RobustControllerBank",
    "PerturbedControllerBank",
]


def _positive_diagonal(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        if np.any(v != np.diag(np.diag(v))):
            raise StructuralError(f"{name} must be diagonal")
        v = np.diag(v)
    v = np.atleast_1d(v)
    if v.ndim != 1 or np.any(v <= 0):
        raise StructuralError(f"{name} must have strictly positive diagonal entries")
    return v


def _invertible(G2, m: int) -> np.ndarray:
    G2 = np.atleast_2d(np.asarray(G2, dtype=float))
    if G2.shape != (m, m):
        raise DimensionError(f"G2 must be {m}x{m}")
    if abs(np.linalg.det(G2)) < np.finfo(float).eps * max(1.0, np.abs(G2).max()) * m:
        raise StructuralError("G2 is singular")
    return G2


@dataclass(frozen=True)
class RobustGains:
    """Implementable gains: diagonal positive Gamma_P, Gamma_I and the known
    actuated block G2 (the shuffled-row block for a general zero-row G).

    Stored as diagonal vectors.  There is deliberately no field for the
    unknown weights D.
    """

    gamma_P: np.ndarray
    gamma_I: np.ndarray
    G2: np.ndarray

    def __post_init__(self):
        gp = _positive_diagonal(self.gamma_P, "gamma_P")
        gi = _positive_diagonal(self.gamma_I, "gamma_I")
        if gp.shape != gi.shape:
            raise DimensionError("gamma_P and gamma_I must have the same size")
        G2 = _invertible(self.G2, gp.shape[0])
        object.__setattr__(self, "gamma_P", gp)
        object.__setattr__(self, "gamma_I", gi)
        object.__setattr__(self, "G2", G2)

    @property
    def m(self) -> int:
        return self.gamma_P.shape[0]

    @property
    def K_P(self) -> np.ndarray:
        return np.linalg.solve(self.G2, np.diag(self.gamma_P))

    @property
    def K_I(self) -> np.ndarray:
        return np.linalg.solve(self.G2, np.diag(self.gamma_I))


@dataclass(frozen=True)
class IdealGains:
    """Positive definite PI gains for the oracle controller driven by e."""

    K_P: np.ndarray
    K_I: np.ndarray
    weights: DiagonalWeights

    def __post_init__(self):
        for name in ("K_P", "K_I"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape[0] != M.shape[1]:
                raise DimensionError(f"{name} must be square")
            if np.abs(M - M.T).max() > 1e-10 * max(1.0, np.abs(M).max()):
                raise StructuralError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() <= 0:
                raise StructuralError(f"{name} must be positive definite")
            object.__setattr__(self, name, M)
        if self.K_P.shape[0] != self.weights.d.shape[0]:
            raise DimensionError("gain size must match the number of weights")


@dataclass(frozen=True)
class ControllerState:
    """Integrator state z of the PI controller."""

    z: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if not np.all(np.isfinite(z)):
            raise StructuralError("controller state must be finite")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class PerturbedEstimate:
    """Constant estimate D0 of the unknown weights, D = D0 + diag(delta).

    ``delta`` is oracle bookkeeping for experiments; the controller built from
    this estimate uses only D0.
    """

    d0: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        d0 = _positive_diagonal(self.d0, "d0")
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if delta.shape != d0.shape:
            raise DimensionError("delta must match d0 in size")
        object.__setattr__(self, "d0", d0)
        object.__setattr__(self, "delta", delta)


def _phi_tilde(phis: PhiFamily, x_a, x_a_star) -> np.ndarray:
    return phis.Phi(x_a) - phis.Phi(np.asarray(x_a_star, dtype=float))


def robust_pi_step(gains: RobustGains, phis: PhiFamily, x_a, x_a_star, z):
    """One evaluation of the robust PI law.

    u = -G2^{-1} Gamma_P Phit(x_a) + z,  z_dot = -G2^{-1} Gamma_I Phit(x_a).
    Uses only measured actuated coordinates; broadcasts over (..., m).
    """
    phit = _phi_tilde(phis, x_a, x_a_star)
    u = -phit @ gains.K_P.T + np.asarray(z, dtype=float)
    z_dot = -phit @ gains.K_I.T
    return u, z_dot


def ideal_pi_step(gains: IdealGains, storage: SeparableStorage, G2, x_a, z):
    """Oracle PI law on the passive output: u = -K_P e + z, z_dot = -K_I e."""
    e = passive_output(storage, G2, x_a)
    u = -e @ gains.K_P.T + np.asarray(z, dtype=float)
    z_dot = -e @ gains.K_I.T
    return u, z_dot


def perturbed_pi_step(estimate: PerturbedEstimate, G2, K_P, K_I, phis: PhiFamily,
                      x_a, x_a_star, z):
    """Ideal law with the weight estimate D0: e0 = G2^T D0 Phit(x_a)."""
    G2 = np.atleast_2d(np.asarray(G2, dtype=float))
    e0 = (estimate.d0 * _phi_tilde(phis, x_a, x_a_star)) @ G2
    u = -e0 @ np.atleast_2d(K_P).T + np.asarray(z, dtype=float)
    z_dot = -e0 @ np.atleast_2d(K_I).T
    return u, z_dot


def lambda_P(gains: RobustGains, weights: DiagonalWeights) -> np.ndarray:
    """Congruence Lambda_P = G2^{-1} Gamma_P D^{-1} G2^{-T}.

    Symmetric positive definite for any diagonal positive Gamma_P and D, and
    satisfies K_P Phit(x_a) = Lambda_P e identically.
    """
    G2inv = np.linalg.inv(gains.G2)
    return G2inv @ np.diag(gains.gamma_P / weights.d) @ G2inv.T


def lambda_I(gains: RobustGains, weights: DiagonalWeights) -> np.ndarray:
    """Congruence Lambda_I = G2^T D Gamma_I^{-1} G2, with
    Lambda_I K_I Phit(x_a) = e identically."""
    return gains.G2.T @ np.diag(weights.d / gains.gamma_I) @ gains.G2


@dataclass(frozen=True)
class WValue:
    """Lyapunov value W = U(x) + 0.5 zt^T Lambda_I zt with its two parts."""

    total: float
    storage_part: float
    integrator_part: float


def lyapunov_W(storage: SeparableStorage, lam_I: np.ndarray, x, z, u_star) -> WValue:
    """Evaluate W at (x, z); zero exactly at (x_star, u_star)."""
    zt = np.asarray(z, dtype=float) - np.asarray(u_star, dtype=float)
    u_part = float(incremental_storage(storage, np.asarray(x, dtype=float)))
    z_part = float(0.5 * zt @ np.atleast_2d(lam_I) @ zt)
    return WValue(u_part + z_part, u_part, z_part)


@dataclass(frozen=True)
class RobustController:
    """Step-contract wrapper around :func:`robust_pi_step`.

    The target value Phi(x_a*) and the gain products are frozen at
    construction so the per-step cost is two small mat-vecs.
    """

    gains: RobustGains
    phis: PhiFamily
    x_a_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_a_star", np.asarray(self.x_a_star, dtype=float))
        object.__setattr__(self, "_phi_star", self.phis.Phi(self.x_a_star))
        object.__setattr__(self, "_KP_T", self.gains.K_P.T.copy())
        object.__setattr__(self, "_KI_T", self.gains.K_I.T.copy())

    def __call__(self, x_a, z):
        phit = self.phis.Phi(x_a) - self._phi_star
        return (-phit @ self._KP_T + np.asarray(z, dtype=float), -phit @ self._KI_T)

    def residual(self, x_a) -> np.ndarray:
        """Diagnostic Phit(x_a) driving both channels."""
        return self.phis.Phi(x_a) - self._phi_star

    @property
    def m(self) -> int:
        return self.gains.m


@dataclass(frozen=True)
class IdealController:
    """Step-contract wrapper around :func:`ideal_pi_step` (oracle only)."""

    gains: IdealGains
    storage: SeparableStorage
    G2: np.ndarray

    def __call__(self, x_a, z):
        return ideal_pi_step(self.gains, self.storage, self.G2, x_a, z)

    def residual(self, x_a) -> np.ndarray:
        return passive_output(self.storage, self.G2, x_a)

    @property
    def m(self) -> int:
        return self.gains.K_P.shape[0]


@dataclass(frozen=True)
class RobustControllerBank:
    """Robust PI laws with per-member gains, for lockstep batch runs.

    ``K_P`` / ``K_I`` are stacks of shape (B, m, m); the call contract takes
    (X_a, Z) of shape (B, m).
    """

    K_P: np.ndarray
    K_I: np.ndarray
    phis: PhiFamily
    x_a_star: np.ndarray

    @classmethod
    def from_gains(cls, gains_list, phis: PhiFamily, x_a_star) -> "RobustControllerBank":
        K_P = np.stack([g.K_P for g in gains_list])
        K_I = np.stack([g.K_I for g in gains_list])
        return cls(K_P, K_I, phis, np.asarray(x_a_star, dtype=float))

    def __post_init__(self):
        object.__setattr__(self, "_phi_star", self.phis.Phi(self.x_a_star))

    def __call__(self, X_a, Z):
        phit = self.phis.Phi(X_a) - self._phi_star
        u = -np.einsum("bij,bj->bi", self.K_P, phit) + np.asarray(Z, dtype=float)
        z_dot = -np.einsum("bij,bj->bi", self.K_I, phit)
        return u, z_dot


@dataclass(frozen=True)
class PerturbedControllerBank:
    """Perturbed-estimate PI laws with per-member weight estimates d0 (B, m)
    and shared positive definite gains."""

    d0: np.ndarray
    G2: np.ndarray
    K_P: np.ndarray
    K_I: np.ndarray
    phis: PhiFamily
    x_a_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_phi_star", self.phis.Phi(self.x_a_star))

    def __call__(self, X_a, Z):
        phit = self.phis.Phi(X_a) - self._phi_star
        e0 = (self.d0 * phit) @ np.atleast_2d(self.G2)
        u = -e0 @ np.atleast_2d(self.K_P).T + np.asarray(Z, dtype=float)
        z_dot = -e0 @ np.atleast_2d(self.K_I).T
        return u, z_dot


@dataclass(frozen=True)
class PerturbedController:
    """Step-contract wrapper around :func:`perturbed_pi_step`."""

    estimate: PerturbedEstimate
    G2: np.ndarray
    K_P: np.ndarray
    K_I: np.ndarray
    phis: PhiFamily
    x_a_star: np.ndarray

    def __call__(self, x_a, z):
        return perturbed_pi_step(self.estimate, self.G2, self.K_P, self.K_I,
                                 self.phis, x_a, self.x_a_star, z)

    def residual(self, x_a) -> np.ndarray:
        G2 = np.atleast_2d(np.asarray(self.G2, dtype=float))
        return (self.estimate.d0 * _phi_tilde(self.phis, x_a, self.x_a_star)) @ G2

    @property
    def m(self) -> int:
        return self.estimate.d0.shape[0]
