#!/usr/bin/env python3
"""Run the 25-cell gain sweep on the 2-state thermal benchmark.

Exercises closed-loop stability across four decades of proportional and
integral gain; every cell must converge with a nonincreasing Lyapunov value.
"""

import sys

from pipbc.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/sweep"
    sys.exit(main(["sweep", "--config", "configs/tp1_sweep.toml", "--out", out]))
