"""Command-line entry point.

Subcommands:

* ``certify``      run the assumption pipeline, write the report, exit 0 iff pass
* ``simulate``     closed-loop runs with CSV traces and audit summaries
* ``sweep``        gain-grid or perturbation-ratio sweeps into a summary table
* ``equilibrium``  print T_bar, x*, u* for a scenario

Exit codes: 0 success, 1 certification/convergence failure, 2 usage or
config error, 3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ScenarioConfig, parse_config
from .controller import (
    IdealController,
    IdealGains,
    PerturbedController,
    PerturbedControllerBank,
    PerturbedEstimate,
    RobustController,
    RobustControllerBank,
    RobustGains,
    lambda_I,
    lambda_P,
)
from .errors import BlowUpError, ConfigError, NoCertificateError, NotAssignableError
from .instances import PHInstance, ThermalInstance, get_instance
from .model import PlantModel, solve_ustar
from .sim import (
    IntegratorConfig,
    OracleData,
    audit,
    augmented_error,
    make_w_evaluator,
    simulate_batch,
    simulate_closed_loop,
)
from .storage import SamplePlan, SeparableStorage
from .thermal import (
    ThermalModel,
    as_plant_model,
    assignable_target,
    build_thermal_model,
    certificate_for,
    default_box,
    storage_from_certificate,
    target_residual,
)
from .verify import certify

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3


@dataclass
class Scenario:
    """Everything a subcommand needs, assembled from one config."""

    cfg: ScenarioConfig
    plant: PlantModel
    storage: Optional[SeparableStorage]
    x_star: np.ndarray
    u_star: np.ndarray
    G2: np.ndarray
    thermal: Optional[ThermalModel]
    ph_model: object
    T_bar: Optional[np.ndarray]
    x0_list: np.ndarray
    z0: np.ndarray
    plan: SamplePlan


def _build_scenario(cfg: ScenarioConfig, seed_override: Optional[int]) -> Scenario:
    if seed_override is not None:
        cfg.seed = seed_override
        cfg.sampler_seed = seed_override
    thermal = None
    ph_model = None
    T_bar = None

    if cfg.plant_kind == "registered":
        inst = get_instance(cfg.plant_name)
        if isinstance(inst, ThermalInstance):
            thermal = inst.model
            T_bar = inst.model.T_bar
        elif isinstance(inst, PHInstance):
            ph_model = inst.model
        plant, storage = inst.plant, inst.storage
        x_star, u_star, G2 = inst.x_star, inst.u_star, inst.G2
    else:
        thermal = build_thermal_model(cfg.A1, cfg.A2, cfg.T_rad, cfg.T_conv, cfg.G)
        T_bar = thermal.T_bar
        if cfg.T_star is not None:
            T_star = np.asarray(cfg.T_star, dtype=float)
            rnorm = float(np.linalg.norm(target_residual(thermal, T_star)))
            if rnorm > 1e-8:
                raise NotAssignableError(rnorm)
        elif cfg.T_a_star is not None:
            T_star = assignable_target(thermal, cfg.T_a_star)
        else:
            raise ConfigError("thermal scenarios need target.T_star or target.T_a_star")
        x_star = T_star - thermal.T_bar
        plant = as_plant_model(thermal)
        try:
            cert = certificate_for(thermal, T_hi=2.0 * np.maximum(thermal.T_bar, T_star))
            storage = storage_from_certificate(
                thermal, cert, x_star, T_hi=2.0 * np.maximum(thermal.T_bar, T_star))
        except NoCertificateError:
            storage = None
        u_star = solve_ustar(plant, x_star, tol=1e-8)
        G2 = thermal.G.G2

    n, m = plant.dims.n, plant.dims.m
    if cfg.T0 is not None:
        if T_bar is None:
            raise ConfigError("initial.T0 requires a thermal plant")
        x0_list = np.asarray(cfg.T0, dtype=float) - T_bar
    elif cfg.x0 is not None:
        x0_list = np.asarray(cfg.x0, dtype=float)
    else:
        x0_list = np.zeros((1, n))
    if x0_list.ndim != 2 or x0_list.shape[1] != n:
        raise ConfigError(f"initial conditions must be rows of length {n}")

    z0 = u_star.copy() if cfg.z0 == "u_star" else np.asarray(cfg.z0, dtype=float)
    if z0.shape != (m,):
        raise ConfigError(f"z0 must have length {m}")

    if cfg.sampler_lo is not None and cfg.sampler_hi is not None:
        lo, hi = np.asarray(cfg.sampler_lo, dtype=float), np.asarray(cfg.sampler_hi, dtype=float)
    elif thermal is not None:
        lo, hi = default_box(thermal, x_star + thermal.T_bar)
    elif cfg.plant_kind == "registered":
        inst = get_instance(cfg.plant_name)
        lo, hi = inst.sample_plan().lo, inst.sample_plan().hi
    else:
        lo, hi = -np.ones(n), np.ones(n)
    sampler_seed = cfg.seed if cfg.sampler_seed is None else cfg.sampler_seed
    plan = SamplePlan(lo, hi, cfg.sampler_count, sampler_seed)

    return Scenario(cfg, plant, storage, np.asarray(x_star, dtype=float),
                    np.asarray(u_star, dtype=float), np.asarray(G2, dtype=float),
                    thermal, ph_model, T_bar, x0_list, z0, plan)


def _robust_gains(sc: Scenario) -> RobustGains:
    return RobustGains(sc.cfg.gamma_P, sc.cfg.gamma_I, sc.G2)


def _controller_and_oracle(sc: Scenario):
    """Controller per the configured variant plus matching oracle data."""
    cfg = sc.cfg
    if sc.storage is None:
        raise ConfigError("no storage available (certification failed?); "
                          "only robust simulation without oracle columns is possible")
    phis = sc.storage.phis
    x_a_star = sc.storage.x_a_star
    weights = sc.storage.weights
    if cfg.variant == "robust":
        gains = _robust_gains(sc)
        ctrl = RobustController(gains, phis, x_a_star)
        oracle = OracleData(sc.storage, sc.u_star, sc.G2,
                            lam_P=lambda_P(gains, weights),
                            lam_I=lambda_I(gains, weights))
    elif cfg.variant == "ideal":
        gains = IdealGains(np.diag(cfg.gamma_P), np.diag(cfg.gamma_I), weights)
        ctrl = IdealController(gains, sc.storage, sc.G2)
        oracle = OracleData(sc.storage, sc.u_star, sc.G2,
                            lam_P=gains.K_P, lam_I=np.linalg.inv(gains.K_I))
    else:  # perturbed
        r = cfg.delta_ratio or 0.0
        d0 = (1.0 - r) * weights.d
        est = PerturbedEstimate(d0, weights.d - d0)
        ctrl = PerturbedController(est, sc.G2, np.diag(cfg.gamma_P),
                                   np.diag(cfg.gamma_I), phis, x_a_star)
        oracle = OracleData(sc.storage, sc.u_star, sc.G2)  # no exact W identity
    return ctrl, oracle


def cmd_equilibrium(sc: Scenario, out_dir: str) -> int:
    if sc.T_bar is not None:
        print("T_bar =", np.array2string(sc.T_bar, precision=12))
        print("T_star =", np.array2string(sc.x_star + sc.T_bar, precision=12))
    print("x_star =", np.array2string(sc.x_star, precision=12))
    print("u_star =", np.array2string(sc.u_star, precision=12))
    return EXIT_OK


def cmd_certify(sc: Scenario, out_dir: str) -> int:
    report = certify(sc.plant, sc.storage, sc.x_star, sc.plan,
                     thermal=sc.thermal, ph=sc.ph_model)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "certification.txt")
    with open(path, "w") as fh:
        fh.write(report.to_text())
    print(report.summary_line())
    print(f"report written to {path}")
    return EXIT_OK if report.overall else EXIT_FAIL


def _run_certification_gate(sc: Scenario) -> bool:
    report = certify(sc.plant, sc.storage, sc.x_star, sc.plan,
                     thermal=sc.thermal, ph=sc.ph_model)
    print(report.summary_line())
    return report.overall


def cmd_simulate(sc: Scenario, out_dir: str, enforce_cert: bool) -> int:
    if enforce_cert and not _run_certification_gate(sc):
        print("certification failed; refusing to simulate (--enforce-certification)")
        return EXIT_FAIL
    ctrl, oracle = _controller_and_oracle(sc)
    icfg = IntegratorConfig(sc.cfg.h, sc.cfg.horizon, sc.cfg.method)
    os.makedirs(out_dir, exist_ok=True)
    all_converged = True
    for i, x0 in enumerate(sc.x0_list):
        try:
            traj = simulate_closed_loop(sc.plant, ctrl, x0, sc.z0, icfg, oracle=oracle)
        except BlowUpError as exc:
            print(f"run {i}: BLOW-UP at t={exc.time:.6g}; last state {exc.state}")
            return EXIT_BLOWUP
        path = os.path.join(out_dir, f"trace_{i:03d}.csv")
        traj.to_csv(path)
        rep = audit(traj, sc.plant, oracle)
        converged = rep.final_state_error <= sc.cfg.convergence_tol
        all_converged &= converged
        print(f"run {i}: {'converged' if converged else 'NOT converged'}  {rep.summary()}")
        print(f"  trace written to {path}")
    if sc.cfg.variant == "perturbed":
        return EXIT_OK  # experiment mode: report regardless of convergence
    return EXIT_OK if all_converged else EXIT_FAIL


def _fmt(v) -> str:
    return "%.17g" % v


def cmd_sweep(sc: Scenario, out_dir: str, enforce_cert: bool, workers: int = 0) -> int:
    if enforce_cert and not _run_certification_gate(sc):
        print("certification failed; refusing to sweep (--enforce-certification)")
        return EXIT_FAIL
    cfg = sc.cfg
    if sc.storage is None:
        raise ConfigError("sweeps need a storage (certification must succeed)")
    icfg = IntegratorConfig(cfg.h, cfg.horizon, cfg.method)
    os.makedirs(out_dir, exist_ok=True)
    x0 = sc.x0_list[0]
    m = sc.plant.dims.m

    if cfg.delta_ratios is not None:
        rows = _perturbation_sweep(sc, icfg, x0)
        path = os.path.join(out_dir, "perturbation.csv")
        header = "delta_ratio,converged,settling_time,final_error,ea_final"
        note = _monotone_note(rows)
    else:
        if cfg.gamma_P_grid is None:
            raise ConfigError("sweep needs sweep.gamma_P_grid/gamma_I_grid or sweep.delta_ratios")
        rows = _gain_sweep(sc, icfg, x0, workers)
        path = os.path.join(out_dir, "sweep.csv")
        header = "gamma_P,gamma_I,converged,settling_time,max_W_increase,final_error,ea_final"
        note = None

    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")
        if note:
            fh.write(note + "\n")
    print(f"{len(rows)} rows written to {path}")
    if note:
        print(note)
    return EXIT_OK


def _ea_final(sc: Scenario, X: np.ndarray) -> np.ndarray:
    return np.array([np.linalg.norm(augmented_error(sc.storage, sc.plant, sc.G2, x))
                     for x in X])


def _gain_sweep(sc: Scenario, icfg: IntegratorConfig, x0, workers: int):
    cfg = sc.cfg
    m = sc.plant.dims.m
    cells = [(gp, gi) for gp in cfg.gamma_P_grid for gi in cfg.gamma_I_grid]
    gains_list = [RobustGains(np.full(m, gp), np.full(m, gi), sc.G2) for gp, gi in cells]
    bank = RobustControllerBank.from_gains(gains_list, sc.storage.phis, sc.storage.x_a_star)
    lam_I = np.stack([lambda_I(g, sc.storage.weights) for g in gains_list])
    w_eval = make_w_evaluator(sc.storage, lam_I, sc.u_star)
    B = len(cells)
    X0 = np.tile(np.asarray(x0, dtype=float), (B, 1))
    Z0 = np.tile(sc.z0, (B, 1))

    def run_block(idx):
        sub_bank = RobustControllerBank(bank.K_P[idx], bank.K_I[idx],
                                        bank.phis, bank.x_a_star)
        sub_w = make_w_evaluator(sc.storage, lam_I[idx], sc.u_star)
        return simulate_batch(sc.plant, sub_bank, X0[idx], Z0[idx], icfg,
                              x_star=sc.x_star, w_eval=sub_w,
                              error_tol=cfg.convergence_tol)

    if workers and workers > 1 and B > 1:
        blocks = np.array_split(np.arange(B), min(workers, B))
        with ThreadPoolExecutor(max_workers=len(blocks)) as ex:
            stats_parts = list(ex.map(run_block, blocks))
        finals = np.concatenate([s.final_x for s in stats_parts])
        settles = np.concatenate([s.settling_time for s in stats_parts])
        maxdW = np.concatenate([s.max_W_increase for s in stats_parts])
        errs = np.concatenate([s.final_error for s in stats_parts])
    else:
        stats = simulate_batch(sc.plant, bank, X0, Z0, icfg, x_star=sc.x_star,
                               w_eval=w_eval, error_tol=cfg.convergence_tol)
        finals, settles = stats.final_x, stats.settling_time
        maxdW, errs = stats.max_W_increase, stats.final_error
    eas = _ea_final(sc, finals)
    rows = []
    for k, (gp, gi) in enumerate(cells):
        conv = "yes" if errs[k] <= cfg.convergence_tol else "no"
        rows.append((float(gp), float(gi), conv, float(settles[k]),
                     float(maxdW[k]), float(errs[k]), float(eas[k])))
    return rows


def _perturbation_sweep(sc: Scenario, icfg: IntegratorConfig, x0):
    cfg = sc.cfg
    d = sc.storage.weights.d
    ratios = list(cfg.delta_ratios)
    d0 = np.stack([(1.0 - r) * d for r in ratios])
    bank = PerturbedControllerBank(d0, sc.G2, np.diag(cfg.gamma_P), np.diag(cfg.gamma_I),
                                   sc.storage.phis, sc.storage.x_a_star)
    B = len(ratios)
    X0 = np.tile(np.asarray(x0, dtype=float), (B, 1))
    Z0 = np.tile(sc.z0, (B, 1))
    stats = simulate_batch(sc.plant, bank, X0, Z0, icfg, x_star=sc.x_star,
                           error_tol=cfg.convergence_tol)
    eas = _ea_final(sc, stats.final_x)
    rows = []
    for k, r in enumerate(ratios):
        conv = "yes" if (stats.final_error[k] <= cfg.convergence_tol
                         and not stats.blown_up[k]) else "no"
        rows.append((float(r), conv, float(stats.settling_time[k]),
                     float(stats.final_error[k]), float(eas[k])))
    return rows


def _monotone_note(rows) -> str:
    errs = [row[3] for row in rows]
    mono = all(errs[i + 1] >= errs[i] - 1e-12 for i in range(len(errs) - 1))
    return ("# final_error is monotone nondecreasing in delta_ratio: "
            + ("yes" if mono else "no"))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pipbc",
        description="Robust PI passivity-based control: certify, simulate, sweep.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("certify", "simulate", "sweep", "equilibrium"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--enforce-certification", action="store_true",
                       help="run the certification gate before simulating")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=0,
                           help="thread workers for sweep cells")
    args = parser.parse_args(argv)

    from .errors import StructuralError

    try:
        cfg = parse_config(args.config)
        sc = _build_scenario(cfg, args.seed)
        if args.command == "equilibrium":
            return cmd_equilibrium(sc, args.out)
        if args.command == "certify":
            return cmd_certify(sc, args.out)
        if args.command == "simulate":
            return cmd_simulate(sc, args.out, args.enforce_certification)
        if args.command == "sweep":
            return cmd_sweep(sc, args.out, args.enforce_certification, args.workers)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, NotAssignableError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StructuralError as exc:
        # a structurally invalid plant cannot be certified; for the certify
        # command that is a verdict, for the others a usage error
        if args.command == "certify":
            print(f"certification failed at construction: {exc}")
            return EXIT_FAIL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
