"""Run every config in ``configs/`` through the command line into one output tree.

The scattering reference and scan configs take several minutes each; pass
``--quick`` to skip them.

    python3 scripts/run_configs.py --out out/ [--quick] [--threads 4]
"""
from __future__ import annotations

import argparse
import time
from pathlib import Path

from propensiton import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SLOW = {"scattering_reference", "scan_scattering"}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out"))
    ap.add_argument("--quick", action="store_true", help="skip the 256 x 256 scattering runs")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    status = 0
    for path in sorted(CONFIGS.glob("*.json")):
        if args.quick and path.stem in SLOW:
            continue
        command = "scan-epsilon" if path.stem.startswith("scan_") else "run"
        t0 = time.perf_counter()
        code = cli.main([command, "--config", str(path), "--out", str(args.out / path.stem),
                         "--threads", str(args.threads)])
        print(f"{path.stem:24s} {command:13s} exit {code}  {time.perf_counter() - t0:7.1f} s")
        status = status or code
    return status


if __name__ == "__main__":
    raise SystemExit(main())
