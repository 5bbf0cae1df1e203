"""One-shot certification of everything the controller design relies on.

Four numbered assumptions are checked and reported with worst-case witnesses:

1. input structure: G has exactly n-m identically-zero rows and an
   invertible actuated block G2;
2. assignability: the unactuated drift residual vanishes at the target;
3. storage conditions (i)-(iv), sampled (see :mod:`pipbc.storage`);
4. thermal plants only: diagonal stability of the radiation matrix and
   nonpositivity of the convection monotonicity form.

Failures are report content, never exceptions; the report is deterministic
for a fixed sampler seed and serializes to text with a machine-readable
summary line.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoCertificateError
from .model import PlantModel, assignable_residual
from .ph import PHModel, PHStructureReport, verify_ph_assumptions
from .storage import Assumption3Report, SamplePlan, SeparableStorage, check_assumption3
from .thermal import (
    ThermalCertificate,
    ThermalModel,
    certificate_for,
    storage_from_certificate,
)

__all__ = ["ItemResult", "CertificationReport", "check_input_structure", "certify"]


@dataclass(frozen=True)
class ItemResult:
    """Outcome of one certification item; ``passed`` is None when the item
    could not be evaluated (for example no storage after a failed
    certificate)."""

    name: str
    passed: Optional[bool]
    detail: str

    @property
    def label(self) -> str:
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]


@dataclass(frozen=True)
class CertificationReport:
    assumption1: ItemResult
    assumption2: ItemResult
    assumption3: ItemResult
    assumption4: Optional[ItemResult]
    storage_report: Optional[Assumption3Report]
    ph_report: Optional[PHStructureReport]
    certificate: Optional[ThermalCertificate]
    seed: int

    @property
    def overall(self) -> bool:
        items = [self.assumption1, self.assumption2, self.assumption3]
        if self.assumption4 is not None:
            items.append(self.assumption4)
        return all(it.passed is True for it in items)

    def summary_line(self) -> str:
        def lab(it):
            return "NA" if it is None else it.label

        return (f"RESULT overall={'PASS' if self.overall else 'FAIL'} "
                f"a1={self.assumption1.label} a2={self.assumption2.label} "
                f"a3={self.assumption3.label} a4={lab(self.assumption4)} "
                f"seed={self.seed}")

    def to_text(self) -> str:
        lines = ["certification report", "=" * 20, f"sampler seed: {self.seed}", ""]
        for idx, item in (("1", self.assumption1), ("2", self.assumption2),
                          ("3", self.assumption3)):
            lines.append(f"assumption {idx} ({item.name}): {item.label}")
            for ln in item.detail.splitlines():
                lines.append(f"  {ln}")
        if self.assumption4 is not None:
            lines.append(f"assumption 4 ({self.assumption4.name}): {self.assumption4.label}")
            for ln in self.assumption4.detail.splitlines():
                lines.append(f"  {ln}")
        if self.storage_report is not None:
            lines.append("")
            lines.append(self.storage_report.to_text())
        if self.ph_report is not None:
            lines.append("")
            lines.append("port-Hamiltonian structure margins:")
            lines.append(f"  decay form max      = {self.ph_report.decay_margin:.6e}")
            lines.append(f"  incremental form max = {self.ph_report.incremental_margin:.6e}")
        lines += ["", self.summary_line(), ""]
        return "\n".join(lines)


def check_input_structure(G) -> ItemResult:
    """Assumption 1 on a raw matrix: exact zero-row count and invertible G2."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = G.shape
    zero = [i for i in range(n) if not G[i].any()]
    detail = [f"shape {n}x{m}; zero rows found {len(zero)} (need {n - m}) at {zero}"]
    if len(zero) != n - m:
        detail.append("a controller of this family needs exactly n-m zero rows; "
                      "see normalize_input_matrix for the coordinate-change caveat")
        return ItemResult("input structure", False, "\n".join(detail))
    act = [i for i in range(n) if G[i].any()]
    G2 = G[act, :]
    det = float(np.linalg.det(G2))
    detail.append(f"actuated rows {act}; det(G2) = {det:.6e}")
    if abs(det) < 1e-12:
        return ItemResult("input structure", False, "\n".join(detail))
    return ItemResult("input structure", True, "\n".join(detail))


def certify(plant: Optional[PlantModel], storage: Optional[SeparableStorage],
            x_star, plan: SamplePlan, thermal: Optional[ThermalModel] = None,
            ph: Optional[PHModel] = None, tol: float = 1e-9,
            assign_tol: float = 1e-8) -> CertificationReport:
    """Run every applicable check and assemble the report.

    For thermal plants the storage may be omitted: it is constructed from the
    diagonal certificate when one is found.  An explicitly supplied storage is
    used as-is, which lets broken candidates be pushed through the pipeline.
    """
    x_star = np.asarray(x_star, dtype=float)

    a4: Optional[ItemResult] = None
    cert: Optional[ThermalCertificate] = None
    if thermal is not None:
        T_star = x_star + thermal.T_bar
        hi = 2.0 * np.maximum(thermal.T_bar, T_star)
        try:
            cert = certificate_for(thermal, T_hi=hi, seed=plan.seed)
            mono_ok = cert.monotonicity_margin <= tol
            margin = float(-np.linalg.eigvalsh(
                np.diag(cert.p) @ thermal.A1 + thermal.A1.T @ np.diag(cert.p)).max())
            a4 = ItemResult(
                "diagonal stability",
                bool(mono_ok),
                f"certificate p = {np.array2string(cert.p, precision=6)}; "
                f"stability margin {margin:.6e}; "
                f"monotonicity margin {cert.monotonicity_margin:.6e} (need <= {tol:.1e})")
        except NoCertificateError as exc:
            a4 = ItemResult("diagonal stability", False, str(exc))
        if plant is None:
            from .thermal import as_plant_model

            plant = as_plant_model(thermal)
        if storage is None and cert is not None:
            storage = storage_from_certificate(thermal, cert, x_star, T_hi=hi)

    if plant is not None:
        a1 = check_input_structure(plant.input_matrix.entries)
    else:
        a1 = ItemResult("input structure", None, "no plant available")

    if plant is not None:
        resid = float(np.linalg.norm(assignable_residual(plant, x_star)))
        a2 = ItemResult("assignability", resid <= assign_tol,
                        f"|G_perp f(x*)| = {resid:.6e} (need <= {assign_tol:.1e})")
    else:
        a2 = ItemResult("assignability", None, "no plant available")

    storage_report: Optional[Assumption3Report] = None
    if storage is not None and plant is not None:
        storage_report = check_assumption3(storage, plant, plan, tol=tol)
        labels = ("decay", "incremental", "separable", "convexity")
        failed = [labels[i] for i, ok in enumerate(storage_report.passed_items) if not ok]
        a3 = ItemResult("storage conditions", storage_report.passed,
                        "all items passed" if storage_report.passed
                        else f"failed items: {', '.join(failed)}")
    else:
        a3 = ItemResult("storage conditions", None,
                        "not evaluated (no storage available)")

    ph_report: Optional[PHStructureReport] = None
    if ph is not None:
        ph_report = verify_ph_assumptions(ph, plan, tol=tol)

    return CertificationReport(a1, a2, a3, a4, storage_report, ph_report, cert, plan.seed)
