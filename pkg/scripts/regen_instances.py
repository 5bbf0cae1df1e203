#!/usr/bin/env python3
"""Recompute and print every derived quantity of the pinned instances.

The instance modules never hard-code derived values; this script is the
provenance record showing where the numbers used in tests come from.
"""

import numpy as np

from pipbc import instances


def show_thermal(inst):
    print(f"== {inst.name} ==")
    m = inst.model
    print("A1 =\n", m.A1)
    print("A2 =\n", m.A2)
    print("E      =", np.array2string(m.E, precision=15))
    print("T_bar  =", np.array2string(m.T_bar, precision=15))
    print("p      =", np.array2string(inst.cert.p, precision=15))
    print("S =\n", inst.cert.S)
    print("mono margin =", inst.cert.monotonicity_margin)
    print("T_star =", np.array2string(inst.T_star, precision=15))
    print("x_star =", np.array2string(inst.x_star, precision=15))
    print("u_star =", np.array2string(inst.u_star, precision=15))
    resid = inst.plant.f(inst.x_star) + inst.model.G.entries @ inst.u_star
    print("|f(x*) + G u*| =", np.linalg.norm(resid))
    print()


def show_ph(inst):
    print(f"== {inst.name} ==")
    print("J =\n", inst.model.J)
    print("R =\n", inst.model.R)
    print("d      =", inst.storage.weights.d)
    print("x_star =", np.array2string(inst.x_star, precision=15))
    print("u_star =", np.array2string(inst.u_star, precision=15))
    resid = inst.plant.f(inst.x_star) + inst.model.G.entries @ inst.u_star
    print("|f(x*) + G u*| =", np.linalg.norm(resid))
    print()


if __name__ == "__main__":
    show_thermal(instances.tp1())
    show_thermal(instances.tp2())
    show_ph(instances.ph1())
