"""Regenerate the archived reference values used by the regression tests.

Runs the reference scattering configuration once, records the final
channel split of the unitary run and the epsilon-scan table, and writes
``tests/fixtures/reference_scattering.json``.  Takes a few minutes.

    python3 scripts/archive_reference.py [--out PATH]
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from propensiton.ensemble import write_json
from propensiton.experiments.scan import epsilon_scan
from propensiton.experiments.scattering import ScatteringSimulation, reference_config

EPSILONS = (1e-4, 1e-3, 1e-2, 1e-1)
SCAN_N = 2000
SCAN_SEED = 20240601
DEFAULT_OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "reference_scattering.json"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    cfg = reference_config("pqt", 1e-2)
    sim = ScatteringSimulation(cfg)
    run = sim.prefix(watch=EPSILONS)
    print(f"unitary run: {time.perf_counter() - t0:.1f} s")
    scan = epsilon_scan(cfg, EPSILONS, SCAN_N, SCAN_SEED, simulation=sim)
    rows = []
    for row, res in zip(scan.rows, scan.results):
        tp = run.triggers[row.epsilon]
        rows.append({
            "epsilon": row.epsilon,
            "t_collapse": row.mean_collapse_time,
            "cA2_at_trigger": tp.decomposition.p_A,
            "n": row.n,
            "n_collapses": row.n_collapses,
            "freq_A": res.stats.frequencies["A"],
            "visibility": row.observable,
            "visibility_stderr": row.observable_stderr,
            "oqt_visibility": row.oqt_observable,
        })
    doc = {
        "description": "reference scattering configuration, split-operator stepping",
        "final_oqt": {"cA2": run.final_decomposition.p_A, "cB2": run.final_decomposition.p_B},
        "scan": {"master_seed": SCAN_SEED, "n_per_epsilon": SCAN_N, "rows": rows},
        "diagnostics": run.diagnostics,
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_json(args.out, doc)
    print(json.dumps(doc["final_oqt"]), f"total {time.perf_counter() - t0:.1f} s")
    for r in rows:
        print(r)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
