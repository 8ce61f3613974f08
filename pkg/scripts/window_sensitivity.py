"""Trigger times and minimum channel fidelity as the fidelity lag W varies.

Each window needs its own unitary run.  The default is the 64 x 64 test
geometry, which takes seconds.  ``--reference`` uses the full reference
configuration, at about two minutes per window.

    python3 scripts/window_sensitivity.py --windows 16 32 60 120
    python3 scripts/window_sensitivity.py --reference --windows 64 400 1667
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

from propensiton.channels import CollapseConfig
from propensiton.experiments.scattering import (
    GridSpec,
    PacketSpec,
    ScatteringConfig,
    ScatteringSimulation,
    reference_config,
)

P0 = 1.632993161855452


def small_config() -> ScatteringConfig:
    return ScatteringConfig(grid=GridSpec(64, 40.0, 64, 24.0), packet=PacketSpec(-8.0, P0, 2.0), dt=1e-2,
                            t_end=6.0, log_stride=5, guard_tol=1.0)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--windows", type=int, nargs="+", default=[16, 32, 60, 120])
    ap.add_argument("--epsilons", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 1e-1])
    ap.add_argument("--reference", action="store_true", help="use the 256 x 256 reference configuration")
    args = ap.parse_args(argv)

    base = reference_config("oqt", None) if args.reference else small_config()
    eps = sorted(args.epsilons)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["window_steps", "window_time", "min_fidelity"] + [f"t_trigger[{e:g}]" for e in eps])
    for W in args.windows:
        cfg = replace(base, mode="pqt", collapse=CollapseConfig(epsilon=eps[0], window_steps=W))
        run = ScatteringSimulation(cfg).prefix(watch=eps)
        row = [W, W * cfg.dt, run.diagnostics["min_fidelity"]]
        row += [run.triggers[e].t if e in run.triggers else "" for e in eps]
        w.writerow(row)
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
