#!/usr/bin/env python3
"""Weight-estimate perturbation experiment.

Replaces the unknown storage weights D by the underestimate D0 = (1 - r) D
for r in {0, 0.05, ..., 0.5} and reports closed-loop behavior per ratio.
This probes a robustness margin the theory does not certify: the report is
empirical, and its generation is deterministic.
"""

import sys

from pipbc.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/perturbation"
    sys.exit(main(["sweep", "--config", "configs/tp1_perturbed.toml", "--out", out]))
