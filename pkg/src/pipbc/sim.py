"""Fixed-step closed-loop simulation and numerical audits.

Fixed-step RK4 (or explicit Euler) on the coupled plant/controller system,
deterministic down to the bit for identical inputs.  When oracle data is
supplied (storage, assigning input, gain congruences), trajectories carry the
Lyapunov value W, the dissipation Q, and the output norms, and :func:`audit`
checks the inequalities the design guarantees:

* W is nonincreasing along closed-loop runs,
* the passivity inequality U(x(t)) - U(x(0)) <= int e^T ut ds for any input,
* the identity dW/dt = -Q - e^T Lambda_P e (closed loop) or
  dU/dt = -Q + e^T ut (driven runs), via central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .controller import lyapunov_W
from .errors import BlowUpError, DimensionError, StructuralError
from .model import PlantModel
from .storage import SeparableStorage, incremental_storage, passive_output

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "OracleData",
    "AuditReport",
    "PiecewiseConstantSignal",
    "integrate_step",
    "simulate_closed_loop",
    "simulate_with_input",
    "simulate_batch",
    "simulate_input_batch",
    "BatchStats",
    "audit",
    "augmented_error",
    "make_w_evaluator",
]


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed step size, horizon, and scheme."""

    step_h: float
    horizon_T: float
    method: str = "rk4"

    def __post_init__(self):
        if not (self.step_h > 0 and self.step_h < self.horizon_T):
            raise StructuralError("need 0 < step_h < horizon_T")
        if self.method not in ("rk4", "euler"):
            raise StructuralError(f"unknown method {self.method!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_T / self.step_h))


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled record of a single run.  Oracle sequences are None
    when no oracle data was supplied."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    z_states: np.ndarray
    W_values: Optional[np.ndarray] = None
    Q_values: Optional[np.ndarray] = None
    e_norms: Optional[np.ndarray] = None
    e_a_norms: Optional[np.ndarray] = None

    def __post_init__(self):
        K = self.times.shape[0]
        for name in ("states", "controls", "z_states", "W_values", "Q_values",
                     "e_norms", "e_a_norms"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != K:
                raise DimensionError(f"{name} length does not match times")

    @property
    def step_h(self) -> float:
        return float(self.times[1] - self.times[0])

    def to_csv(self, path) -> None:
        """Write the trajectory with 17 significant digits; oracle columns are
        left empty when absent."""
        n = self.states.shape[1]
        m = self.controls.shape[1]
        header = (["t"] + [f"x_{i+1}" for i in range(n)]
                  + [f"u_{j+1}" for j in range(m)] + [f"z_{j+1}" for j in range(m)]
                  + ["W", "Q", "e_norm", "ea_norm"])
        fmt = lambda v: "%.17g" % v
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for k in range(self.times.shape[0]):
                row = [fmt(self.times[k])]
                row += [fmt(v) for v in self.states[k]]
                row += [fmt(v) for v in self.controls[k]]
                row += [fmt(v) for v in self.z_states[k]]
                for arr in (self.W_values, self.Q_values, self.e_norms, self.e_a_norms):
                    row.append(fmt(arr[k]) if arr is not None else "")
                fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class OracleData:
    """Verification-side data: the storage, the assigning input, the actuated
    block, and (for closed-loop runs) the gain congruences."""

    storage: SeparableStorage
    u_star: np.ndarray
    g2: np.ndarray
    lam_P: Optional[np.ndarray] = None
    lam_I: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AuditReport:
    """Worst-case gaps of the monitored inequalities along one trajectory."""

    max_W_increase: float
    passivity_gap: float
    final_state_error: float
    e_a_final: float
    dotW_identity_residual: float

    def summary(self) -> str:
        return (f"max_W_increase={self.max_W_increase:.3e} "
                f"passivity_gap={self.passivity_gap:.3e} "
                f"final_state_error={self.final_state_error:.3e} "
                f"e_a_final={self.e_a_final:.3e} "
                f"dotW_identity_residual={self.dotW_identity_residual:.3e}")


@dataclass(frozen=True)
class PiecewiseConstantSignal:
    """Piecewise-constant m-vector signal with uniform segment length."""

    values: np.ndarray
    seg_len: float

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.seg_len <= 0:
            raise StructuralError("segment length must be positive")
        object.__setattr__(self, "values", values)

    def __call__(self, t: float) -> np.ndarray:
        idx = min(int(t / self.seg_len), self.values.shape[0] - 1)
        return self.values[idx]


def integrate_step(field: Callable[[np.ndarray], np.ndarray], state: np.ndarray,
                   h: float, method: str = "rk4") -> np.ndarray:
    """Advance the autonomous field one step of size h."""
    s = np.asarray(state, dtype=float)

    def ev(y):
        dy = np.asarray(field(y), dtype=float)
        if not np.all(np.isfinite(dy)):
            raise BlowUpError(float("nan"), y, "field blow-up: non-finite derivative")
        return dy

    if method == "euler":
        return s + h * ev(s)
    k1 = ev(s)
    k2 = ev(s + 0.5 * h * k1)
    k3 = ev(s + 0.5 * h * k2)
    k4 = ev(s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_pair(field, X, Z, h):
    k1x, k1z = field(X, Z)
    k2x, k2z = field(X + 0.5 * h * k1x, Z + 0.5 * h * k1z)
    k3x, k3z = field(X + 0.5 * h * k2x, Z + 0.5 * h * k2z)
    k4x, k4z = field(X + h * k3x, Z + h * k3z)
    return (X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x),
            Z + (h / 6.0) * (k1z + 2 * k2z + 2 * k3z + k4z))


def _euler_pair(field, X, Z, h):
    dX, dZ = field(X, Z)
    return X + h * dX, Z + h * dZ


def _oracle_columns(states, controls, z_states, oracle: OracleData):
    st = oracle.storage
    act = list(st.act_idx)
    U = incremental_storage(st, states)
    e = passive_output(st, oracle.g2, states[..., act])
    e_norms = np.linalg.norm(e, axis=-1)
    if oracle.lam_I is not None:
        zt = z_states - oracle.u_star
        W = U + 0.5 * np.einsum("...i,ij,...j->...", zt, np.atleast_2d(oracle.lam_I), zt)
    else:
        W = U
    return W, e, e_norms


def _q_columns(states, plant: PlantModel, oracle: OracleData):
    st = oracle.storage
    gt = st.grad_H(states) - st.grad_H(st.x_star)
    ft = plant.f_many(states.reshape(-1, states.shape[-1])).reshape(states.shape) \
        if states.ndim > 2 else plant.f_many(states)
    ft = ft - plant.f(st.x_star)
    return -np.sum(gt * ft, axis=-1)


def simulate_closed_loop(plant: PlantModel, controller, x0, z0,
                         cfg: IntegratorConfig, oracle: Optional[OracleData] = None,
                         blowup_norm: float = 1e6) -> Trajectory:
    """Integrate dx/dt = f(x) + G u, dz/dt per the controller step contract.

    The controller is any callable (x_a, z) -> (u, z_dot) using only the
    measured actuated coordinates.  Raises :class:`BlowUpError` carrying the
    last finite state when the state norm exceeds ``blowup_norm`` or a
    derivative turns non-finite.
    """
    im = plant.input_matrix
    n, m = plant.dims.n, plant.dims.m
    act = list(im.actuated_rows)
    G = im.entries
    x = np.array(x0, dtype=float).reshape(n)
    z = np.array(z0, dtype=float).reshape(m)
    K = cfg.n_steps
    h = cfg.step_h
    times = np.arange(K + 1) * h
    states = np.empty((K + 1, n))
    controls = np.empty((K + 1, m))
    z_states = np.empty((K + 1, m))

    def field(xv, zv):
        u, zd = controller(xv[..., act], zv)
        return plant.f(xv) + u @ G.T, zd

    stepper = _rk4_pair if cfg.method == "rk4" else _euler_pair
    for k in range(K + 1):
        u_k, _ = controller(x[act], z)
        states[k], controls[k], z_states[k] = x, u_k, z
        if k == K:
            break
        x, z = stepper(field, x, z, h)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise BlowUpError(times[k + 1], states[k], "non-finite state")
        if np.linalg.norm(x) > blowup_norm:
            raise BlowUpError(times[k + 1], x)

    if oracle is None:
        return Trajectory(times, states, controls, z_states)
    W, e, e_norms = _oracle_columns(states, controls, z_states, oracle)
    Q = _q_columns(states, plant, oracle)
    e_a = np.sqrt(Q ** 2 + e_norms ** 2)
    return Trajectory(times, states, controls, z_states, W, Q, e_norms, e_a)


def simulate_with_input(plant: PlantModel, u_of_t, x0, cfg: IntegratorConfig,
                        oracle: Optional[OracleData] = None,
                        blowup_norm: float = 1e6) -> Trajectory:
    """Drive the open-loop plant with an explicit input signal.

    The input is sampled at the grid and held constant over each step, so a
    piecewise-constant signal whose breakpoints are grid multiples is
    integrated without order loss.  The z columns are zero.
    """
    n, m = plant.dims.n, plant.dims.m
    G = plant.input_matrix.entries
    x = np.array(x0, dtype=float).reshape(n)
    K = cfg.n_steps
    h = cfg.step_h
    times = np.arange(K + 1) * h
    states = np.empty((K + 1, n))
    controls = np.empty((K + 1, m))
    for k in range(K + 1):
        u_k = np.asarray(u_of_t(times[k]), dtype=float).reshape(m)
        states[k], controls[k] = x, u_k
        if k == K:
            break
        Gu = G @ u_k
        field = lambda y: plant.f(y) + Gu
        x = integrate_step(field, x, h, cfg.method)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > blowup_norm:
            raise BlowUpError(times[k + 1], states[k])
    z_states = np.zeros((K + 1, m))
    if oracle is None:
        return Trajectory(times, states, controls, z_states)
    W, e, e_norms = _oracle_columns(states, controls, z_states, oracle)
    Q = _q_columns(states, plant, oracle)
    e_a = np.sqrt(Q ** 2 + e_norms ** 2)
    return Trajectory(times, states, controls, z_states, W, Q, e_norms, e_a)


def make_w_evaluator(storage: SeparableStorage, lam_I, u_star):
    """Batched W evaluator (X, Z) -> W for online monitoring.

    ``lam_I`` may be a single (m, m) matrix or a stack (B, m, m) matching the
    batch.
    """
    lam_I = np.asarray(lam_I, dtype=float)
    u_star = np.asarray(u_star, dtype=float)
    xs = storage.x_star
    H_star = float(storage.H(xs))
    g_star = storage.grad_H(xs)

    def w_eval(X, Z):
        U = storage.H(X) - H_star - (X - xs) @ g_star
        zt = Z - u_star
        if lam_I.ndim == 3:
            quad = np.einsum("bi,bij,bj->b", zt, lam_I, zt)
        else:
            quad = np.einsum("bi,ij,bj->b", zt, np.atleast_2d(lam_I), zt)
        return U + 0.5 * quad

    return w_eval


@dataclass(frozen=True)
class BatchStats:
    """Online statistics of a batch run (one entry per batch member)."""

    final_x: np.ndarray
    final_z: np.ndarray
    final_error: np.ndarray
    settling_time: np.ndarray
    max_W_increase: Optional[np.ndarray]
    blown_up: np.ndarray


def simulate_batch(plant: PlantModel, controller, X0, Z0, cfg: IntegratorConfig,
                   *, x_star=None, w_eval=None, error_tol: float = 1e-3,
                   blowup_norm: float = 1e6, record: str = "stats"):
    """Run many independent closed loops in lockstep.

    ``controller`` must broadcast over the batch axis: (X_a, Z) with shapes
    (B, m) -> (U, Z_dot).  With ``record='stats'`` only online statistics are
    kept (final values, settling time to ``error_tol`` measured against
    ``x_star``, and the worst per-step W increase when ``w_eval`` is given);
    blown-up members are frozen and flagged rather than aborting the batch.
    With ``record='full'`` the state/control/z histories are returned as
    arrays of shape (K+1, B, .).
    """
    im = plant.input_matrix
    n, m = plant.dims.n, plant.dims.m
    act = list(im.actuated_rows)
    G = im.entries
    X = np.array(X0, dtype=float).reshape(-1, n)
    Z = np.array(Z0, dtype=float).reshape(-1, m)
    B = X.shape[0]
    K = cfg.n_steps
    h = cfg.step_h

    def field(Xv, Zv):
        U, Zd = controller(Xv[:, act], Zv)
        return plant.f_many(Xv) + U @ G.T, Zd

    stepper = _rk4_pair if cfg.method == "rk4" else _euler_pair

    if record == "full":
        states = np.empty((K + 1, B, n))
        controls = np.empty((K + 1, B, m))
        z_hist = np.empty((K + 1, B, m))
        for k in range(K + 1):
            U_k, _ = controller(X[:, act], Z)
            states[k], controls[k], z_hist[k] = X, U_k, Z
            if k == K:
                break
            X, Z = stepper(field, X, Z, h)
            if not np.all(np.isfinite(X)):
                raise BlowUpError((k + 1) * h, X, "non-finite state in batch")
        times = np.arange(K + 1) * h
        return times, states, controls, z_hist

    if record != "stats":
        raise StructuralError(f"unknown record mode {record!r}")
    if x_star is None:
        raise StructuralError("record='stats' requires x_star")
    x_star = np.asarray(x_star, dtype=float)
    alive = np.ones(B, dtype=bool)
    last_above = np.zeros(B)
    maxdW = np.full(B, -np.inf) if w_eval is not None else None
    W_prev = None
    for k in range(K):
        if w_eval is not None:
            W = np.where(alive, w_eval(X, Z), np.nan)
            if W_prev is not None:
                inc = W - W_prev
                upd = alive & np.isfinite(inc)
                maxdW[upd] = np.maximum(maxdW[upd], inc[upd])
            W_prev = W
        Xn, Zn = stepper(field, X, Z, h)
        bad = ~(np.all(np.isfinite(Xn), axis=1) & np.all(np.isfinite(Zn), axis=1)
                & (np.linalg.norm(Xn, axis=1) <= blowup_norm))
        newly_dead = alive & bad
        if np.any(newly_dead):
            Xn[newly_dead] = X[newly_dead]
            Zn[newly_dead] = Z[newly_dead]
            alive = alive & ~newly_dead
        X, Z = Xn, Zn
        err = np.linalg.norm(X - x_star, axis=1)
        above = err > error_tol
        last_above[alive & above] = (k + 1) * h
    err = np.linalg.norm(X - x_star, axis=1)
    settle = np.where(err <= error_tol, np.minimum(last_above + h, cfg.horizon_T), np.inf)
    return BatchStats(final_x=X, final_z=Z, final_error=err, settling_time=settle,
                      max_W_increase=maxdW, blown_up=~alive)


def simulate_input_batch(plant: PlantModel, values, seg_len: float, X0,
                         cfg: IntegratorConfig, blowup_norm: float = 1e6):
    """Batched open-loop runs driven by per-member piecewise-constant inputs.

    ``values`` has shape (B, n_seg, m); segment boundaries should be grid
    multiples.  Returns (times, states (K+1, B, n), controls (K+1, B, m)).
    """
    n, m = plant.dims.n, plant.dims.m
    G = plant.input_matrix.entries
    X = np.array(X0, dtype=float).reshape(-1, n)
    values = np.asarray(values, dtype=float)
    B, n_seg, mv = values.shape
    if mv != m or X.shape[0] != B:
        raise DimensionError("signal bank shape must be (B, n_seg, m) matching X0")
    K = cfg.n_steps
    h = cfg.step_h
    times = np.arange(K + 1) * h
    states = np.empty((K + 1, B, n))
    controls = np.empty((K + 1, B, m))
    for k in range(K + 1):
        seg = min(int(times[k] / seg_len), n_seg - 1)
        U_k = values[:, seg, :]
        states[k], controls[k] = X, U_k
        if k == K:
            break
        GU = U_k @ G.T

        def field(Xv):
            return plant.f_many(Xv) + GU

        if cfg.method == "euler":
            X = X + h * field(X)
        else:
            k1 = field(X)
            k2 = field(X + 0.5 * h * k1)
            k3 = field(X + 0.5 * h * k2)
            k4 = field(X + h * k3)
            X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)) or np.linalg.norm(X, axis=1).max() > blowup_norm:
            raise BlowUpError(times[k + 1], X)
    return times, states, controls


def augmented_error(storage: SeparableStorage, plant: PlantModel, g2, x) -> np.ndarray:
    """Stacked residual (Q(x), e(x_a)) whose decay certifies convergence."""
    x = np.asarray(x, dtype=float)
    q = -np.sum((storage.grad_H(x) - storage.grad_H(storage.x_star))
                * (plant.f(x) - plant.f(storage.x_star)), axis=-1)
    e = passive_output(storage, g2, x[..., list(storage.act_idx)])
    return np.concatenate([np.atleast_1d(q), np.atleast_1d(e)], axis=-1)


def audit(traj: Trajectory, plant: PlantModel, oracle: OracleData) -> AuditReport:
    """Evaluate the monitored inequalities along a recorded trajectory.

    The passivity gap integrates e^T (u - u*) with the trapezoidal rule.  The
    derivative identity is checked by central differences on the interior
    grid: against -Q - e^T Lambda_P e when ``oracle.lam_P`` is set (closed
    loop), otherwise against dU/dt = -Q + e^T (u - u*).
    """
    st = oracle.storage
    h = traj.step_h
    act = list(st.act_idx)
    U = incremental_storage(st, traj.states)
    e = passive_output(st, oracle.g2, traj.states[:, act])
    Q = traj.Q_values if traj.Q_values is not None else _q_columns(traj.states, plant, oracle)
    ut = traj.controls - oracle.u_star

    supply = np.sum(e * ut, axis=1)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * h * (supply[1:] + supply[:-1]))])
    passivity_gap = float(np.max(U - U[0] - integral))

    if traj.W_values is not None:
        W = traj.W_values
    elif oracle.lam_I is not None:
        zt = traj.z_states - oracle.u_star
        W = U + 0.5 * np.einsum("ki,ij,kj->k", zt, np.atleast_2d(oracle.lam_I), zt)
    else:
        W = U
    max_W_increase = float(np.max(np.diff(W))) if W.shape[0] > 1 else 0.0

    if oracle.lam_P is not None:
        lamP = np.atleast_2d(oracle.lam_P)
        rhs = -Q - np.einsum("ki,ij,kj->k", e, lamP, e)
        dW = (W[2:] - W[:-2]) / (2.0 * h)
        dot_resid = float(np.max(np.abs(dW - rhs[1:-1]))) if W.shape[0] > 2 else 0.0
    else:
        rhs = -Q + supply
        dU = (U[2:] - U[:-2]) / (2.0 * h)
        dot_resid = float(np.max(np.abs(dU - rhs[1:-1]))) if U.shape[0] > 2 else 0.0

    e_a_final = float(np.hypot(Q[-1], np.linalg.norm(e[-1])))
    final_err = float(np.linalg.norm(traj.states[-1] - st.x_star))
    return AuditReport(max_W_increase=max_W_increase, passivity_gap=passivity_gap,
                       final_state_error=final_err, e_a_final=e_a_final,
                       dotW_identity_residual=dot_resid)
