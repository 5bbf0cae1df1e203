"""Separable storage functions and the open-loop conditions they certify.

A storage here is H(x) = H_u(x_u) + sum_i d_i phi_i(x_i) over the actuated
coordinates: H_u and the positive weights d_i are oracle data (known to tests
and certification code, never to the robust controller), while the phi_i are
public.  The module provides the incremental passive output, the shifted
(Bregman) storage U with minimum 0 at the target, the dissipation rate Q, and
a sampled certification of the four storage conditions:

  (i)   grad H(x)^T f(x) <= 0            (decay at the open-loop origin)
  (ii)  Q(x) := -[grad H(x) - grad H(x*)]^T [f(x) - f(x*)] >= 0
  (iii) H separates into H_u(x_u) + sum d_i phi_i(x_i)
  (iv)  H_u and every phi_i are convex
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, StructuralError
from .model import PlantModel

__all__ = [
    "PhiFamily",
    "DiagonalWeights",
    "SeparableStorage",
    "SamplePlan",
    "Assumption3Report",
    "passive_output",
    "incremental_storage",
    "dissipation_Q",
    "check_assumption3",
]

_FD_RTOL = 1e-5


def _central_diff(fn, t: float, h: float) -> float:
    return (fn(t + h) - fn(t - h)) / (2.0 * h)


@dataclass(frozen=True)
class PhiFamily:
    """Known scalar convex candidates phi_i with first and second derivatives.

    ``domains`` are the per-coordinate intervals on which the family is
    declared (used for the construction self-check and for convexity
    sampling).  Derivative consistency is verified at construction by finite
    differences; convexity is deliberately *not* enforced here so that broken
    candidates can be fed to the certifier and rejected there.
    """

    phi: tuple[Callable[[np.ndarray], np.ndarray], ...]
    dphi: tuple[Callable[[np.ndarray], np.ndarray], ...]
    ddphi: tuple[Callable[[np.ndarray], np.ndarray], ...]
    domains: tuple[tuple[float, float], ...]
    Phi_stacked: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        m = len(self.phi)
        if not (len(self.dphi) == len(self.ddphi) == len(self.domains) == m and m >= 1):
            raise StructuralError("phi family components must have equal nonzero length")
        for i, (lo, hi) in enumerate(self.domains):
            if not lo < hi:
                raise StructuralError(f"domain {i} is empty")
            self._self_check(i, lo, hi)
        if self.Phi_stacked is not None:
            pts = np.stack([np.linspace(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo), 5)
                            for lo, hi in self.domains], axis=-1)
            ref = np.stack([np.asarray(self.dphi[i](pts[..., i]), dtype=float)
                            for i in range(m)], axis=-1)
            if not np.allclose(np.asarray(self.Phi_stacked(pts), dtype=float), ref,
                               rtol=1e-12, atol=1e-12):
                raise StructuralError("Phi_stacked disagrees with the per-coordinate dphi")

    def _self_check(self, i: int, lo: float, hi: float):
        width = hi - lo
        ts = np.linspace(lo + 0.05 * width, hi - 0.05 * width, 9)
        h = 1e-6 * max(1.0, width)
        for t in ts:
            d_fd = _central_diff(self.phi[i], t, h)
            d = float(self.dphi[i](t))
            if not np.isclose(d_fd, d, rtol=_FD_RTOL, atol=1e-8 * max(1.0, abs(d))):
                raise StructuralError(
                    f"phi[{i}]: dphi disagrees with finite differences at x={t:.4g}"
                )
            dd_fd = _central_diff(self.dphi[i], t, h)
            dd = float(self.ddphi[i](t))
            if not np.isclose(dd_fd, dd, rtol=_FD_RTOL, atol=1e-8 * max(1.0, abs(dd))):
                raise StructuralError(
                    f"phi[{i}]: ddphi disagrees with finite differences at x={t:.4g}"
                )

    @property
    def m(self) -> int:
        return len(self.phi)

    def Phi(self, x_a: np.ndarray) -> np.ndarray:
        """Stacked derivative map col(phi_i'(x_i)), broadcasting over (..., m).

        Uses the vectorized ``Phi_stacked`` fast path when one was supplied
        (it is validated against the per-coordinate derivatives at
        construction).
        """
        x_a = np.asarray(x_a, dtype=float)
        if x_a.shape[-1] != self.m:
            raise DimensionError(f"expected last axis {self.m}, got {x_a.shape}")
        if self.Phi_stacked is not None:
            return np.asarray(self.Phi_stacked(x_a), dtype=float)
        return np.stack([np.asarray(self.dphi[i](x_a[..., i]), dtype=float)
                         for i in range(self.m)], axis=-1)

    def phi_sum(self, x_a: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_i w_i phi_i(x_i), broadcasting over (..., m)."""
        x_a = np.asarray(x_a, dtype=float)
        vals = np.stack([np.asarray(self.phi[i](x_a[..., i]), dtype=float)
                         for i in range(self.m)], axis=-1)
        return vals @ np.asarray(weights, dtype=float)


@dataclass(frozen=True)
class DiagonalWeights:
    """Positive weights d_i of the actuated storage part.  Oracle-only: the
    robust controller never sees these."""

    d: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        if d.ndim != 1 or np.any(d <= 0):
            raise StructuralError("weights must be a vector of strictly positive reals")
        object.__setattr__(self, "d", d)

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d)


@dataclass(frozen=True)
class SeparableStorage:
    """H(x) = H_u(x_u) + sum_i d_i phi_i(x_i) with target x_star.

    ``zero_idx`` / ``act_idx`` give the coordinate split; ``H_u`` and
    ``grad_H_u`` may be None when every coordinate is actuated.  Callables
    must broadcast over leading axes.
    """

    weights: DiagonalWeights
    phis: PhiFamily
    x_star: np.ndarray
    zero_idx: tuple[int, ...]
    act_idx: tuple[int, ...]
    H_u: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grad_H_u: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        x_star = np.asarray(self.x_star, dtype=float)
        object.__setattr__(self, "x_star", x_star)
        n = len(self.zero_idx) + len(self.act_idx)
        if sorted(self.zero_idx + self.act_idx) != list(range(n)):
            raise StructuralError("zero_idx and act_idx must partition 0..n-1")
        if len(self.act_idx) != self.phis.m or len(self.weights.d) != self.phis.m:
            raise DimensionError("weights/phi family size must match actuated coordinates")
        if x_star.shape != (n,):
            raise DimensionError(f"x_star must have length {n}")
        if self.zero_idx and (self.H_u is None or self.grad_H_u is None):
            raise StructuralError("H_u and grad_H_u are required when unactuated coordinates exist")
        self._self_check()

    def _self_check(self):
        h0 = float(self.H(np.zeros(self.n)))
        if not np.isfinite(h0):
            raise StructuralError("H(0) is not finite")
        # Local positive definiteness around the origin, sampled.  A warning
        # rather than an error: certification must be able to process broken
        # candidates and reject them with a witness.
        rng = np.random.default_rng(0)
        pts = 0.01 * rng.standard_normal((16, self.n))
        if np.min(self.H(pts)) < h0 - 1e-9:
            warnings.warn("H does not look positive definite near the origin (sampled)",
                          RuntimeWarning)
        # gradient consistency, sampled
        for x in 0.1 * rng.standard_normal((4, self.n)):
            g = self.grad_H(x)
            for j in range(self.n):
                def along(t, j=j, x=x):
                    xp = x.copy()
                    xp[j] = t
                    return float(self.H(xp))
                fd = _central_diff(along, x[j], 1e-6)
                if not np.isclose(fd, g[j], rtol=_FD_RTOL, atol=1e-7):
                    raise StructuralError(
                        f"grad H disagrees with finite differences at coordinate {j}"
                    )

    @property
    def n(self) -> int:
        return len(self.zero_idx) + len(self.act_idx)

    @property
    def x_a_star(self) -> np.ndarray:
        return self.x_star[list(self.act_idx)]

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return x[..., list(self.zero_idx)], x[..., list(self.act_idx)]

    def H(self, x: np.ndarray) -> np.ndarray:
        x_u, x_a = self.split(x)
        out = self.phis.phi_sum(x_a, self.weights.d)
        if self.zero_idx:
            out = out + np.asarray(self.H_u(x_u), dtype=float)
        return out

    def grad_H(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x_u, x_a = self.split(x)
        out = np.empty_like(x)
        out[..., list(self.act_idx)] = self.weights.d * self.phis.Phi(x_a)
        if self.zero_idx:
            out[..., list(self.zero_idx)] = np.asarray(self.grad_H_u(x_u), dtype=float)
        return out


@dataclass(frozen=True)
class SamplePlan:
    """Uniform sampling over a box, reproducible from the seed."""

    lo: np.ndarray
    hi: np.ndarray
    count: int = 10_000
    seed: int = 0

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise StructuralError("sampling box must satisfy lo < hi componentwise")
        if self.count < 1:
            raise StructuralError("sampler is empty")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def draw(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.lo, self.hi, size=(self.count, self.dim))


def passive_output(storage: SeparableStorage, G2: np.ndarray, x_a: np.ndarray) -> np.ndarray:
    """Incremental passive output e = G2^T D (Phi(x_a) - Phi(x_a*))."""
    G2 = np.atleast_2d(np.asarray(G2, dtype=float))
    phit = storage.phis.Phi(x_a) - storage.phis.Phi(storage.x_a_star)
    return (storage.weights.d * phit) @ G2


def incremental_storage(storage: SeparableStorage, x: np.ndarray) -> np.ndarray:
    """Shifted storage U(x) = H(x) - H(x*) - grad H(x*)^T (x - x*).

    For convex H this is nonnegative with U(x*) = 0, making it a storage
    function for the incremental model.  Broadcasts over (..., n).
    """
    x = np.asarray(x, dtype=float)
    xs = storage.x_star
    g_star = storage.grad_H(xs)
    return storage.H(x) - float(storage.H(xs)) - (x - xs) @ g_star


def dissipation_Q(storage: SeparableStorage, plant: PlantModel, x: np.ndarray) -> np.ndarray:
    """Q(x) = -[grad H(x) - grad H(x*)]^T [f(x) - f(x*)]; zero at the target."""
    x = np.asarray(x, dtype=float)
    gt = storage.grad_H(x) - storage.grad_H(storage.x_star)
    ft = plant.f(x) - plant.f(storage.x_star)
    return -np.sum(gt * ft, axis=-1)


@dataclass(frozen=True)
class Assumption3Report:
    """Sampled margins for the four storage conditions, worst witnesses included.

    Margins are oriented so that <= tol means pass for items (i) and the
    H_u midpoint gap, and >= -tol means pass for item (ii) and the phi
    curvature minimum.
    """

    decay_margin: float
    decay_witness: np.ndarray
    incremental_margin: float
    incremental_witness: np.ndarray
    separable: bool
    phi_curvature_min: float
    phi_curvature_witness: tuple[int, float]
    hu_midpoint_gap: Optional[float]
    hu_midpoint_witness: Optional[tuple[np.ndarray, np.ndarray]]
    tol: float
    seed: int
    passed_items: tuple[bool, bool, bool, bool]

    @property
    def passed(self) -> bool:
        return all(self.passed_items)

    def to_text(self) -> str:
        ok = {True: "PASS", False: "FAIL"}
        lines = [
            "storage conditions (sampled)",
            f"  (i)   decay:        max grad H^T f = {self.decay_margin:.6e}  [{ok[self.passed_items[0]]}]",
            f"  (ii)  incremental:  min Q          = {self.incremental_margin:.6e}  [{ok[self.passed_items[1]]}]",
            f"  (iii) separable:    {'yes' if self.separable else 'no'}  [{ok[self.passed_items[2]]}]",
            f"  (iv)  convexity:    min phi'' = {self.phi_curvature_min:.6e}"
            + (f", max H_u midpoint gap = {self.hu_midpoint_gap:.6e}" if self.hu_midpoint_gap is not None else "")
            + f"  [{ok[self.passed_items[3]]}]",
        ]
        return "\n".join(lines)


def check_assumption3(
    storage: SeparableStorage,
    plant: PlantModel,
    plan: SamplePlan,
    tol: float = 1e-9,
) -> Assumption3Report:
    """Certify the storage conditions on the sampled box.

    Items (i) and (ii) are inequality margins over the samples; (iii) holds by
    construction of :class:`SeparableStorage`; (iv) samples phi'' over each
    declared domain and, when unactuated coordinates exist, the midpoint
    convexity gap of H_u over random pairs.
    """
    if plan.dim != storage.n:
        raise DimensionError("sampling box dimension does not match the state dimension")
    X = plan.draw()

    gH = storage.grad_H(X)
    fX = plant.f_many(X)
    decay = np.sum(gH * fX, axis=-1)
    i_arg = int(np.argmax(decay))
    decay_margin = float(decay[i_arg])

    gt = gH - storage.grad_H(storage.x_star)
    ft = fX - plant.f(storage.x_star)
    Q = -np.sum(gt * ft, axis=-1)
    ii_arg = int(np.argmin(Q))
    incremental_margin = float(Q[ii_arg])

    rng = np.random.default_rng(plan.seed + 1)
    m = storage.phis.m
    curv_min, curv_wit = np.inf, (0, 0.0)
    n_curv = max(64, plan.count // max(1, m))
    for i in range(m):
        lo, hi = storage.phis.domains[i]
        ts = rng.uniform(lo, hi, size=n_curv)
        vals = np.asarray(storage.phis.ddphi[i](ts), dtype=float)
        k = int(np.argmin(vals))
        if vals[k] < curv_min:
            curv_min, curv_wit = float(vals[k]), (i, float(ts[k]))

    hu_gap = None
    hu_wit = None
    if storage.zero_idx:
        idx = list(storage.zero_idx)
        lo_u, hi_u = plan.lo[idx], plan.hi[idx]
        n_pairs = max(64, plan.count // 2)
        a = rng.uniform(lo_u, hi_u, size=(n_pairs, len(idx)))
        b = rng.uniform(lo_u, hi_u, size=(n_pairs, len(idx)))
        gaps = (np.asarray(storage.H_u(0.5 * (a + b)), dtype=float)
                - 0.5 * (np.asarray(storage.H_u(a), dtype=float)
                         + np.asarray(storage.H_u(b), dtype=float)))
        k = int(np.argmax(gaps))
        hu_gap = float(gaps[k])
        hu_wit = (a[k], b[k])

    passed = (
        decay_margin <= tol,
        incremental_margin >= -tol,
        True,
        curv_min >= -tol and (hu_gap is None or hu_gap <= tol),
    )
    return Assumption3Report(
        decay_margin=decay_margin,
        decay_witness=X[i_arg],
        incremental_margin=incremental_margin,
        incremental_witness=X[ii_arg],
        separable=True,
        phi_curvature_min=float(curv_min),
        phi_curvature_witness=curv_wit,
        hu_midpoint_gap=hu_gap,
        hu_midpoint_witness=hu_wit,
        tol=tol,
        seed=plan.seed,
        passed_items=passed,
    )
