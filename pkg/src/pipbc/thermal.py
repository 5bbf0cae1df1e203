"""Rapid-thermal-process plants with quartic radiation and linear convection.

The model is dT/dt = A1 Psi(T) + A2 T + E + G u with Psi(T) = col(T_i^4),
Hurwitz coefficient matrices A1 (radiation) and A2 (convection), and
E = -A1 Psi(T_rad) - A2 T_conv.  Shifting by the open-loop equilibrium T_bar
puts the plant in the standard input-affine form; a diagonal stability
certificate P for A1 then yields a separable quintic storage whose actuated
weights are the unknown-to-the-controller block of P.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .controller import RobustController, RobustGains
from .errors import (
    EquilibriumSolveError,
    NoCertificateError,
    NonphysicalEquilibriumError,
    NotAssignableError,
    StructuralError,
)
from .model import Dimensions, InputMatrix, PlantModel, input_matrix
from .storage import DiagonalWeights, PhiFamily, SeparableStorage

__all__ = [
    "ThermalModel",
    "ThermalCertificate",
    "psi",
    "solve_open_loop_equilibrium",
    "build_thermal_model",
    "shifted_field",
    "as_plant_model",
    "diagonal_stability_solve",
    "monotonicity_check",
    "certificate_for",
    "storage_from_certificate",
    "phi_family",
    "build_thermal_controller",
    "as_shifted_controller",
    "thermal_Q",
    "assignable_target",
    "default_box",
]


def psi(T: np.ndarray) -> np.ndarray:
    """Componentwise fourth power col(T_i^4)."""
    return np.asarray(T, dtype=float) ** 4


def _is_hurwitz(A: np.ndarray) -> bool:
    return bool(np.linalg.eigvals(A).real.max() < 0)


def solve_open_loop_equilibrium(A1, A2, E, initial_guess, tol: float = 1e-12,
                                max_iter: int = 100) -> np.ndarray:
    """Solve A1 Psi(T) + A2 T + E = 0 for the open-loop equilibrium.

    Newton iteration with Jacobian A1 diag(4 T^3) + A2.  If Newton stalls or
    leaves the domain, a per-coordinate bisection sweep (each coordinate
    re-solved with the others frozen) re-centers the iterate before a final
    Newton polish.  The result must be nonnegative.
    """
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    E = np.atleast_1d(np.asarray(E, dtype=float))
    n = E.shape[0]
    T = np.atleast_1d(np.asarray(initial_guess, dtype=float)).copy()
    if np.any(T < 0):
        raise EquilibriumSolveError("initial guess must be nonnegative", T)

    def g(Tv):
        return A1 @ psi(Tv) + A2 @ Tv + E

    def newton(Tv, iters):
        for _ in range(iters):
            r = g(Tv)
            if np.linalg.norm(r) <= tol:
                return Tv, True
            J = A1 @ np.diag(4.0 * Tv ** 3) + A2
            try:
                step = np.linalg.solve(J, r)
            except np.linalg.LinAlgError as exc:
                raise EquilibriumSolveError(f"singular Jacobian: {exc}", Tv) from exc
            Tv = Tv - step
            if not np.all(np.isfinite(Tv)) or np.abs(Tv).max() > 1e12:
                return Tv, False
        return Tv, np.linalg.norm(g(Tv)) <= tol

    T_new, ok = newton(T, max_iter)
    if not ok:
        # bisection fallback: nonlinear Gauss-Seidel with bracketed roots
        T_new = np.maximum(np.atleast_1d(np.asarray(initial_guess, dtype=float)), 0.0)
        for _ in range(60):
            for i in range(n):
                def gi(t, i=i):
                    Tv = T_new.copy()
                    Tv[i] = t
                    return float(g(Tv)[i])
                hi = max(1.0, 2.0 * T_new[i])
                while gi(0.0) * gi(hi) > 0 and hi < 1e6:
                    hi *= 2.0
                if gi(0.0) * gi(hi) > 0:
                    continue
                T_new[i] = brentq(gi, 0.0, hi, xtol=1e-14)
            if np.linalg.norm(g(T_new)) <= 1e-6:
                break
        T_new, ok = newton(T_new, max_iter)
        if not ok:
            raise EquilibriumSolveError(
                f"no convergence after fallback (|residual|={np.linalg.norm(g(T_new)):.3e})",
                T_new)
    if np.min(T_new) < -1e-9:
        raise NonphysicalEquilibriumError(
            f"nonphysical equilibrium with min component {np.min(T_new):.3e}", T_new)
    return np.maximum(T_new, 0.0)


@dataclass(frozen=True)
class ThermalModel:
    """Validated thermal plant with its derived offset E and equilibrium T_bar."""

    A1: np.ndarray
    A2: np.ndarray
    T_rad: np.ndarray
    T_conv: np.ndarray
    G: InputMatrix
    E: np.ndarray
    T_bar: np.ndarray

    @property
    def n(self) -> int:
        return self.T_bar.shape[0]


def build_thermal_model(A1, A2, T_rad, T_conv, G, equilibrium_guess=None) -> ThermalModel:
    """Assemble and validate a thermal plant; solves for T_bar."""
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    T_rad = np.atleast_1d(np.asarray(T_rad, dtype=float))
    T_conv = np.atleast_1d(np.asarray(T_conv, dtype=float))
    n = A1.shape[0]
    if A1.shape != (n, n) or A2.shape != (n, n) or T_rad.shape != (n,) or T_conv.shape != (n,):
        raise StructuralError("inconsistent thermal model shapes")
    if np.any(T_rad < 0) or np.any(T_conv < 0):
        raise StructuralError("reference temperatures must be nonnegative")
    for name, A in (("A1", A1), ("A2", A2)):
        if not _is_hurwitz(A):
            raise StructuralError(f"{name} must be Hurwitz")
    im = G if isinstance(G, InputMatrix) else input_matrix(G)
    if im.n != n:
        raise StructuralError("input matrix size does not match the model")
    E = -A1 @ psi(T_rad) - A2 @ T_conv
    guess = T_conv if equilibrium_guess is None else np.asarray(equilibrium_guess, dtype=float)
    T_bar = solve_open_loop_equilibrium(A1, A2, E, guess)
    resid = np.linalg.norm(A1 @ psi(T_bar) + A2 @ T_bar + E)
    if resid > 1e-10:
        raise EquilibriumSolveError(f"equilibrium residual {resid:.3e} exceeds 1e-10", T_bar)
    return ThermalModel(A1, A2, T_rad, T_conv, im, E, T_bar)


def shifted_field(model: ThermalModel, x: np.ndarray) -> np.ndarray:
    """Drift in shifted coordinates x = T - T_bar; vanishes at x = 0.

    Warns (does not fail) when the evaluation point corresponds to a negative
    temperature, where the storage convexity argument no longer applies.
    """
    x = np.asarray(x, dtype=float)
    T = x + model.T_bar
    if T.min() < -1e-12:
        warnings.warn("thermal state left the physical domain T >= 0", RuntimeWarning)
    return (T * T * T * T) @ model.A1.T + T @ model.A2.T + model.E


def as_plant_model(model: ThermalModel) -> PlantModel:
    """Wrap the shifted thermal drift as a generic input-affine plant."""
    dims = Dimensions(model.n, model.G.m)
    return PlantModel(dims, lambda x: shifted_field(model, x), model.G)


def diagonal_stability_solve(A1, seed: int = 0, n_starts: int = 20,
                             n_iters: int = 300) -> tuple[np.ndarray, float]:
    """Find diagonal P > 0 with P A1 + A1^T P negative definite.

    Hurwitz Metzler matrices admit a closed-form certificate from the positive
    vectors xi = -A1^{-1} 1 and eta = -A1^{-T} 1 (P = diag(eta/xi)).  Other
    matrices go through a projected subgradient descent of the top eigenvalue
    over the box p in [1e-6, 1]^n with multiple seeded starts; exhausting the
    budget raises :class:`NoCertificateError`, which is not a proof of
    infeasibility.

    Returns (p, margin) with margin = -lambda_max(P A1 + A1^T P) > 0.
    """
    A = np.atleast_2d(np.asarray(A1, dtype=float))
    n = A.shape[0]

    def top_eig(p):
        M = np.diag(p) @ A + A.T @ np.diag(p)
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        return w[-1], V[:, -1]

    if not _is_hurwitz(A):
        raise NoCertificateError("no diagonal certificate found: matrix is not Hurwitz")

    offdiag = A - np.diag(np.diag(A))
    if np.min(offdiag) >= -1e-12:  # Metzler fast path
        xi = np.linalg.solve(A, -np.ones(n))
        eta = np.linalg.solve(A.T, -np.ones(n))
        if np.all(xi > 0) and np.all(eta > 0):
            p = eta / xi
            p = p / p.max()
            lam, _ = top_eig(p)
            if lam < 0:
                return p, -lam

    rng = np.random.default_rng(seed)
    best_p, best_lam = None, np.inf
    for s in range(n_starts):
        p = np.ones(n) if s == 0 else rng.uniform(1e-3, 1.0, n)
        for k in range(n_iters):
            lam, v = top_eig(p)
            if lam < best_lam:
                best_lam, best_p = lam, p.copy()
            if lam < -1e-8:
                break
            grad = 2.0 * v * (A @ v)
            p = np.clip(p - 0.1 / np.sqrt(1.0 + k) * grad, 1e-6, 1.0)
        if best_lam < -1e-8:
            break
    if best_lam < -1e-8:
        return best_p, -best_lam
    raise NoCertificateError(
        f"no diagonal certificate found (best top eigenvalue {best_lam:.3e}; "
        "search budget exhausted, not a proof of infeasibility)")


def monotonicity_check(A2, p, T_hi, count: int = 4096, seed: int = 0,
                       return_witness: bool = False):
    """Largest eigenvalue of A2^T P diag(T^3) + diag(T^3) P A2 over the box.

    The convection matrix must keep this nonpositive for all nonnegative
    temperatures.  Diagonal A2 with negative entries passes analytically
    (returns 0.0, the supremum attained at T = 0); otherwise the box
    [0, T_hi] is sampled and the worst eigenvalue returned (with the worst
    temperature when ``return_witness`` is set).
    """
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    n = p.shape[0]
    offdiag = A2 - np.diag(np.diag(A2))
    if not offdiag.any() and np.all(np.diag(A2) < 0):
        return (0.0, np.zeros(n)) if return_witness else 0.0
    T_hi = np.broadcast_to(np.asarray(T_hi, dtype=float), (n,))
    rng = np.random.default_rng(seed)
    Ts = rng.uniform(0.0, T_hi, size=(count, n))
    worst, witness = -np.inf, Ts[0]
    PA2 = np.diag(p) @ A2
    for T in Ts:
        D3 = np.diag(T ** 3)
        M = A2.T @ np.diag(p) @ D3 + D3 @ PA2
        lam = np.linalg.eigvalsh(0.5 * (M + M.T))[-1]
        if lam > worst:
            worst, witness = lam, T
    return (float(worst), witness) if return_witness else float(worst)


@dataclass(frozen=True)
class ThermalCertificate:
    """Diagonal stability certificate P with S = -(P A1 + A1^T P)/2 > 0 and the
    sampled convection monotonicity margin."""

    p: np.ndarray
    S: np.ndarray
    monotonicity_margin: float

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if np.any(p <= 0):
            raise StructuralError("certificate weights must be positive")
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        if np.linalg.eigvalsh(0.5 * (S + S.T)).min() <= 0:
            raise StructuralError("certificate S must be positive definite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "S", S)


def certificate_for(model: ThermalModel, T_hi=None, count: int = 4096,
                    seed: int = 0) -> ThermalCertificate:
    """Solve for the diagonal certificate of a model and audit monotonicity."""
    p, _margin = diagonal_stability_solve(model.A1, seed=seed)
    S = -0.5 * (np.diag(p) @ model.A1 + model.A1.T @ np.diag(p))
    hi = 2.0 * model.T_bar if T_hi is None else T_hi
    mono = monotonicity_check(model.A2, p, hi, count=count, seed=seed)
    return ThermalCertificate(p, S, mono)


def phi_family(model: ThermalModel, T_hi=None) -> PhiFamily:
    """Public quintic candidates for the actuated coordinates.

    phi_i(x) = (x + T_bar_i)^5 / 5 - T_bar_i^4 x, so phi_i'(x) =
    (x + T_bar_i)^4 - T_bar_i^4 and phi_i'' = 4 (x + T_bar_i)^3 >= 0 on the
    physical domain.
    """
    hi_T = 2.0 * model.T_bar if T_hi is None else np.broadcast_to(
        np.asarray(T_hi, dtype=float), (model.n,))
    phis, dphis, ddphis, domains = [], [], [], []
    for i in model.G.actuated_rows:
        tb = float(model.T_bar[i])
        phis.append(lambda x, tb=tb: 0.2 * (np.asarray(x, dtype=float) + tb) ** 5
                    - tb ** 4 * np.asarray(x, dtype=float))
        dphis.append(lambda x, tb=tb: (np.asarray(x, dtype=float) + tb) ** 4 - tb ** 4)
        ddphis.append(lambda x, tb=tb: 4.0 * (np.asarray(x, dtype=float) + tb) ** 3)
        domains.append((-tb, float(hi_T[i]) - tb))
    tb_a = model.T_bar[list(model.G.actuated_rows)].copy()
    psi_tb_a = tb_a ** 4
    stacked = lambda x_a: (x_a + tb_a) ** 4 - psi_tb_a
    return PhiFamily(tuple(phis), tuple(dphis), tuple(ddphis), tuple(domains),
                     Phi_stacked=stacked)


def storage_from_certificate(model: ThermalModel, cert: ThermalCertificate,
                             x_star, T_hi=None) -> SeparableStorage:
    """Separable quintic storage H(x) = sum_i p_i phi_i(x_i) + k, normalized to
    H(0) = 0, with the actuated block of P as the oracle weights."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    zero = list(model.G.zero_rows)
    act = list(model.G.actuated_rows)
    p = cert.p
    Tb = model.T_bar
    k_total = -0.2 * float(p @ Tb ** 5)
    p_u, Tb_u = p[zero], Tb[zero]

    def H_u(x_u, p_u=p_u, Tb_u=Tb_u, k=k_total):
        x_u = np.asarray(x_u, dtype=float)
        return (0.2 * (x_u + Tb_u) ** 5 - Tb_u ** 4 * x_u) @ p_u + k

    def grad_H_u(x_u, p_u=p_u, Tb_u=Tb_u):
        x_u = np.asarray(x_u, dtype=float)
        return p_u * ((x_u + Tb_u) ** 4 - Tb_u ** 4)

    return SeparableStorage(
        weights=DiagonalWeights(p[act]),
        phis=phi_family(model, T_hi),
        x_star=x_star,
        zero_idx=tuple(zero),
        act_idx=tuple(act),
        H_u=H_u if zero else None,
        grad_H_u=grad_H_u if zero else None,
    )


def target_residual(model: ThermalModel, T_star) -> np.ndarray:
    """Unactuated rows of A1 Psi(T*) + A2 T* + E; zero iff T* is assignable."""
    T_star = np.asarray(T_star, dtype=float)
    full = model.A1 @ psi(T_star) + model.A2 @ T_star + model.E
    return full[list(model.G.zero_rows)]


@dataclass(frozen=True)
class ThermalPIController:
    """Robust PI law on measured temperatures: u = -K_P Psit_a(T_a) + z.

    Needs only the actuated block G2, the gains, and the target temperatures;
    no radiation/convection data, no certificate weights, not even T_bar.
    """

    gains: RobustGains
    T_a_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "T_a_star", np.asarray(self.T_a_star, dtype=float))
        object.__setattr__(self, "_psi_star", psi(self.T_a_star))
        object.__setattr__(self, "_KP_T", self.gains.K_P.T.copy())
        object.__setattr__(self, "_KI_T", self.gains.K_I.T.copy())

    def __call__(self, T_a, z):
        psit = psi(T_a) - self._psi_star
        u = -psit @ self._KP_T + np.asarray(z, dtype=float)
        z_dot = -psit @ self._KI_T
        return u, z_dot

    def residual(self, T_a) -> np.ndarray:
        return psi(T_a) - self._psi_star


@dataclass(frozen=True)
class _ShiftedController:
    inner: ThermalPIController
    T_a_bar: np.ndarray

    def __call__(self, x_a, z):
        return self.inner(np.asarray(x_a, dtype=float) + self.T_a_bar, z)

    def residual(self, x_a):
        return self.inner.residual(np.asarray(x_a, dtype=float) + self.T_a_bar)


def build_thermal_controller(model: ThermalModel, cert: ThermalCertificate,
                             T_star, gamma_P, gamma_I,
                             tol: float = 1e-8) -> ThermalPIController:
    """Assemble the robust thermal PI law for an assignable target.

    The certificate is demanded as evidence that the stability conditions were
    checked; the returned law does not use it (nor A1, A2, E, or T_bar).
    """
    if not isinstance(cert, ThermalCertificate):
        raise StructuralError("a thermal certificate is required")
    T_star = np.atleast_1d(np.asarray(T_star, dtype=float))
    rnorm = float(np.linalg.norm(target_residual(model, T_star)))
    if rnorm > tol:
        raise NotAssignableError(rnorm)
    gains = RobustGains(gamma_P, gamma_I, model.G.G2)
    return ThermalPIController(gains, T_star[list(model.G.actuated_rows)])


def as_shifted_controller(ctrl: ThermalPIController, model: ThermalModel):
    """Adapt a temperature-space law to the shifted coordinates used by the
    generic simulator (the adapter, not the law, knows T_bar)."""
    return _ShiftedController(ctrl, model.T_bar[list(model.G.actuated_rows)])


def thermal_Q(model: ThermalModel, cert: ThermalCertificate, x, x_star) -> np.ndarray:
    """Closed-form dissipation Phit(x)^T S Phit(x) >= 0.

    The generic storage dissipation exceeds this by the (nonnegative)
    convection monotonicity contribution.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    phit = psi(x + model.T_bar) - psi(x_star + model.T_bar)
    return np.einsum("...i,ij,...j->...", phit, cert.S, phit)


def assignable_target(model: ThermalModel, T_a_star, guess_u=None) -> np.ndarray:
    """Complete actuated target temperatures to a full assignable T*.

    Solves the unactuated equilibrium rows for T_u with T_a frozen (Newton on
    the square subsystem), returning the stacked target.
    """
    zero = list(model.G.zero_rows)
    act = list(model.G.actuated_rows)
    T_a_star = np.atleast_1d(np.asarray(T_a_star, dtype=float))
    T = np.empty(model.n)
    T[act] = T_a_star
    Tu = model.T_bar[zero].copy() if guess_u is None else np.asarray(guess_u, dtype=float).copy()
    for _ in range(200):
        T[zero] = Tu
        r = (model.A1 @ psi(T) + model.A2 @ T + model.E)[zero]
        if np.linalg.norm(r) <= 1e-13:
            break
        J = (model.A1 @ np.diag(4.0 * T ** 3) + model.A2)[np.ix_(zero, zero)]
        Tu = Tu - np.linalg.solve(J, r)
    else:
        raise EquilibriumSolveError("target completion did not converge", T)
    if np.min(Tu) < 0:
        raise NonphysicalEquilibriumError("completed target has negative components", T)
    T[zero] = Tu
    return T


def default_box(model: ThermalModel, T_star) -> tuple[np.ndarray, np.ndarray]:
    """Shifted-coordinate sampling box covering T in [0, 2 max(T_bar, T*)]."""
    T_star = np.asarray(T_star, dtype=float)
    hi_T = 2.0 * np.maximum(model.T_bar, T_star)
    return -model.T_bar, hi_T - model.T_bar
