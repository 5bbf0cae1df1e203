"""Port-Hamiltonian plants dx/dt = (J - R) grad H(x) + G u.

With constant skew-symmetric interconnection J and symmetric positive
semidefinite damping R, the energy decay conditions (items (i) and (ii) of
the storage certification) hold identically; this module provides the drift,
the structural validation, and a sampled confirmation of those margins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .model import Dimensions, InputMatrix, PlantModel, input_matrix
from .storage import SamplePlan, SeparableStorage

__all__ = [
    "PHModel",
    "PHStructureReport",
    "build_ph_model",
    "ph_field",
    "as_plant_model",
    "verify_ph_assumptions",
    "demidovich_margin",
]


@dataclass(frozen=True)
class PHModel:
    """Constant-structure port-Hamiltonian plant."""

    J: np.ndarray
    R: np.ndarray
    G: InputMatrix
    hamiltonian: SeparableStorage


def build_ph_model(J, R, G, hamiltonian: SeparableStorage) -> PHModel:
    J = np.atleast_2d(np.asarray(J, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = J.shape[0]
    if J.shape != (n, n) or R.shape != (n, n):
        raise StructuralError("J and R must be square and equally sized")
    if np.abs(J + J.T).max() > 1e-12 * max(1.0, np.abs(J).max()):
        raise StructuralError("interconnection J must be skew-symmetric")
    if np.abs(R - R.T).max() > 1e-12 * max(1.0, np.abs(R).max()):
        raise StructuralError("damping R must be symmetric")
    if np.linalg.eigvalsh(0.5 * (R + R.T)).min() < -1e-12:
        raise StructuralError("damping R must be positive semidefinite")
    im = G if isinstance(G, InputMatrix) else input_matrix(G)
    if im.n != n or hamiltonian.n != n:
        raise StructuralError("G and the Hamiltonian must match the state dimension")
    return PHModel(J, R, im, hamiltonian)


def ph_field(model: PHModel, x: np.ndarray) -> np.ndarray:
    """Drift (J - R) grad H(x); broadcasts over (..., n)."""
    g = model.hamiltonian.grad_H(np.asarray(x, dtype=float))
    return g @ (model.J - model.R).T


def as_plant_model(model: PHModel) -> PlantModel:
    dims = Dimensions(model.G.n, model.G.m)
    return PlantModel(dims, lambda x: ph_field(model, x), model.G)


@dataclass(frozen=True)
class PHStructureReport:
    """Sampled margins of the two energy-decay quadratic forms (both must stay
    below tolerance; they are exactly zero for R = 0)."""

    decay_margin: float
    decay_witness: np.ndarray
    incremental_margin: float
    incremental_witness: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return self.decay_margin <= self.tol and self.incremental_margin <= self.tol


def verify_ph_assumptions(model: PHModel, plan: SamplePlan, tol: float = 1e-9) -> PHStructureReport:
    """Confirm grad H^T (J - R) grad H <= 0 and its incremental counterpart on
    samples.  Separability and convexity are the storage certifier's job."""
    X = plan.draw()
    JR = model.J - model.R
    g = model.hamiltonian.grad_H(X)
    decay = np.einsum("ki,ij,kj->k", g, JR, g)
    i = int(np.argmax(decay))
    gt = g - model.hamiltonian.grad_H(model.hamiltonian.x_star)
    inc = np.einsum("ki,ij,kj->k", gt, JR, gt)
    j = int(np.argmax(inc))
    return PHStructureReport(float(decay[i]), X[i], float(inc[j]), X[j], tol)


def demidovich_margin(P, plant: PlantModel, plan: SamplePlan, fd_eps: float = 1e-6) -> float:
    """Sampled max eigenvalue of P Df(x) + Df(x)^T P (finite-difference
    Jacobians).  Nonpositive values indicate a convergent flow in the sense
    used for quadratic storages on linear plants; exposed as an optional
    diagnostic only."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = plant.dims.n
    worst = -np.inf
    for x in plan.draw():
        Jf = np.empty((n, n))
        for j in range(n):
            dx = np.zeros(n)
            dx[j] = fd_eps
            Jf[:, j] = (plant.f(x + dx) - plant.f(x - dx)) / (2.0 * fd_eps)
        M = P @ Jf + Jf.T @ P
        worst = max(worst, float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1]))
    return worst
