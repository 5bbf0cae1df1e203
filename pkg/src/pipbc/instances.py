"""Pinned benchmark instances with oracle data.

Every derived quantity (equilibria, certificates, assigning inputs) is
recomputed from the declared coefficients by the package's own solvers, so
the instances double as regression fixtures: nothing numeric below is pasted
from a previous run.  ``scripts/regen_instances.py`` prints the derived
values for inspection.

Instances:

* ``tp1``: 2-state / 1-input thermal plant, Metzler radiation matrix,
  diagonal convection, open-loop equilibrium at (1, 1).
* ``tp2``: 4-state / 2-input thermal plant with a non-diagonal actuated
  block.
* ``ph1``: 2-state / 1-input port-Hamiltonian plant with a quadratic
  unactuated storage part and a quadratic-plus-quartic actuated candidate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .controller import RobustController, RobustGains, lambda_I, lambda_P
from .errors import ConfigError
from .model import PlantModel, input_matrix, solve_ustar
from .ph import PHModel, as_plant_model as ph_as_plant, build_ph_model
from .sim import OracleData
from .storage import DiagonalWeights, PhiFamily, SamplePlan, SeparableStorage
from .thermal import (
    ThermalCertificate,
    ThermalModel,
    as_plant_model as thermal_as_plant,
    assignable_target,
    build_thermal_model,
    certificate_for,
    default_box,
    storage_from_certificate,
)

__all__ = ["ThermalInstance", "PHInstance", "tp1", "tp2", "ph1",
           "get_instance", "register", "registered_names"]


@dataclass(frozen=True)
class ThermalInstance:
    name: str
    model: ThermalModel
    cert: ThermalCertificate
    T_star: np.ndarray
    plant: PlantModel
    storage: SeparableStorage
    u_star: np.ndarray

    @property
    def x_star(self) -> np.ndarray:
        return self.storage.x_star

    @property
    def G2(self) -> np.ndarray:
        return self.model.G.G2

    def gains(self, gamma_P, gamma_I) -> RobustGains:
        return RobustGains(np.broadcast_to(np.asarray(gamma_P, dtype=float), (self.model.G.m,)),
                           np.broadcast_to(np.asarray(gamma_I, dtype=float), (self.model.G.m,)),
                           self.G2)

    def robust_controller(self, gamma_P, gamma_I) -> RobustController:
        g = self.gains(gamma_P, gamma_I)
        return RobustController(g, self.storage.phis, self.storage.x_a_star)

    def oracle(self, gamma_P=None, gamma_I=None) -> OracleData:
        if gamma_P is None:
            return OracleData(self.storage, self.u_star, self.G2)
        g = self.gains(gamma_P, gamma_I)
        return OracleData(self.storage, self.u_star, self.G2,
                          lam_P=lambda_P(g, self.storage.weights),
                          lam_I=lambda_I(g, self.storage.weights))

    def sample_plan(self, count: int = 10_000, seed: int = 0) -> SamplePlan:
        lo, hi = default_box(self.model, self.T_star)
        return SamplePlan(lo, hi, count, seed)


@dataclass(frozen=True)
class PHInstance:
    name: str
    model: PHModel
    plant: PlantModel
    u_star: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray

    @property
    def storage(self) -> SeparableStorage:
        return self.model.hamiltonian

    @property
    def x_star(self) -> np.ndarray:
        return self.storage.x_star

    @property
    def G2(self) -> np.ndarray:
        return self.model.G.G2

    def gains(self, gamma_P, gamma_I) -> RobustGains:
        m = self.model.G.m
        return RobustGains(np.broadcast_to(np.asarray(gamma_P, dtype=float), (m,)),
                           np.broadcast_to(np.asarray(gamma_I, dtype=float), (m,)),
                           self.G2)

    def robust_controller(self, gamma_P, gamma_I) -> RobustController:
        g = self.gains(gamma_P, gamma_I)
        return RobustController(g, self.storage.phis, self.storage.x_a_star)

    def oracle(self, gamma_P=None, gamma_I=None) -> OracleData:
        if gamma_P is None:
            return OracleData(self.storage, self.u_star, self.G2)
        g = self.gains(gamma_P, gamma_I)
        return OracleData(self.storage, self.u_star, self.G2,
                          lam_P=lambda_P(g, self.storage.weights),
                          lam_I=lambda_I(g, self.storage.weights))

    def sample_plan(self, count: int = 10_000, seed: int = 0) -> SamplePlan:
        return SamplePlan(self.box_lo, self.box_hi, count, seed)


def _thermal_instance(name, A1, A2, T_rad, T_conv, G, T_a_star) -> ThermalInstance:
    model = build_thermal_model(A1, A2, T_rad, T_conv, G)
    cert = certificate_for(model)
    T_star = assignable_target(model, T_a_star)
    x_star = T_star - model.T_bar
    storage = storage_from_certificate(model, cert, x_star,
                                       T_hi=2.0 * np.maximum(model.T_bar, T_star))
    plant = thermal_as_plant(model)
    u_star = solve_ustar(plant, x_star, tol=1e-8)
    return ThermalInstance(name, model, cert, T_star, plant, storage, u_star)


@lru_cache(maxsize=None)
def tp1() -> ThermalInstance:
    """2-state, 1-input thermal plant; open-loop equilibrium (1, 1), target
    actuated temperature 1.2."""
    return _thermal_instance(
        "tp1",
        A1=[[-2.0, 1.0], [0.5, -3.0]],
        A2=[[-1.0, 0.0], [0.0, -1.0]],
        T_rad=[1.0, 1.0],
        T_conv=[1.0, 1.0],
        G=[[0.0], [1.0]],
        T_a_star=[1.2],
    )


@lru_cache(maxsize=None)
def tp2() -> ThermalInstance:
    """4-state, 2-input thermal plant with coupled heaters (non-diagonal G2)."""
    return _thermal_instance(
        "tp2",
        A1=[[-3.0, 0.5, 0.2, 0.1],
            [0.4, -2.5, 0.3, 0.2],
            [0.1, 0.2, -3.5, 0.5],
            [0.2, 0.1, 0.4, -2.8]],
        A2=[[-1.0, 0.0, 0.0, 0.0],
            [0.0, -0.8, 0.0, 0.0],
            [0.0, 0.0, -1.2, 0.0],
            [0.0, 0.0, 0.0, -0.9]],
        T_rad=[1.0, 1.0, 1.0, 1.0],
        T_conv=[1.0, 1.0, 1.0, 1.0],
        G=[[0.0, 0.0], [0.0, 0.0], [1.0, 0.2], [0.1, 1.5]],
        T_a_star=[1.15, 1.25],
    )


@lru_cache(maxsize=None)
def ph1() -> PHInstance:
    """2-state, 1-input port-Hamiltonian plant.

    H(x) = 0.6 x_1^2 + 0.7 (x_2^2 / 2 + x_2^4 / 4); the weight 0.7 is oracle
    data, the quadratic-plus-quartic candidate is public.  The target fixes
    x_2* = 0.8 and solves the unactuated equilibrium row for x_1*.
    """
    alpha = 1.2
    d = 0.7
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    R = np.diag([0.5, 0.3])
    G = input_matrix([[0.0], [1.0]])

    phi = (lambda x: 0.5 * np.asarray(x, dtype=float) ** 2
           + 0.25 * np.asarray(x, dtype=float) ** 4,)
    dphi = (lambda x: np.asarray(x, dtype=float) + np.asarray(x, dtype=float) ** 3,)
    ddphi = (lambda x: 1.0 + 3.0 * np.asarray(x, dtype=float) ** 2,)
    phis = PhiFamily(phi, dphi, ddphi, ((-3.0, 3.0),),
                     Phi_stacked=lambda x_a: x_a + x_a ** 3)

    x2s = 0.8
    # unactuated equilibrium row: -0.5 alpha x1 + d (x2 + x2^3) = 0
    x1s = d * (x2s + x2s ** 3) / (0.5 * alpha)
    x_star = np.array([x1s, x2s])

    def H_u(x_u):
        x_u = np.asarray(x_u, dtype=float)
        return 0.5 * alpha * x_u[..., 0] ** 2

    def grad_H_u(x_u):
        return alpha * np.asarray(x_u, dtype=float)

    storage = SeparableStorage(
        weights=DiagonalWeights([d]), phis=phis, x_star=x_star,
        zero_idx=(0,), act_idx=(1,), H_u=H_u, grad_H_u=grad_H_u)
    model = build_ph_model(J, R, G, storage)
    plant = ph_as_plant(model)
    u_star = solve_ustar(plant, x_star, tol=1e-10)
    lo = np.array([-2.0, -2.0])
    hi = np.array([3.0, 2.5])
    return PHInstance("ph1", model, plant, u_star, lo, hi)


_REGISTRY: dict[str, Callable[[], object]] = {"tp1": tp1, "tp2": tp2, "ph1": ph1}


def register(name: str, factory: Callable[[], object]) -> None:
    """Register a custom instance factory for CLI lookup by name."""
    _REGISTRY[name] = factory


def registered_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def get_instance(name: str):
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(
            f"unknown instance {name!r}; registered: {', '.join(registered_names())}"
        ) from None
    return factory()
