"""Command line: ``propensiton {run,scan-epsilon,plot,validate-config}``.

``run`` and ``scan-epsilon`` write ``manifest.json`` before anything else,
then the data files, then the plots, and finally rewrite the manifest with
the end time and status.  Failures exit nonzero and print one JSON object
describing the error on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import ensemble as ens
from .channels import LOG_COLUMNS
from .config import RunConfig, parse_config
from .errors import ConfigError, PlotError, TrajectoryError
from .experiments.adapters import DecayExperiment, ScatteringExperiment, SphereExperiment, make_experiment
from .experiments.decay import deviation_onset, fit_exponential, fitted_curve
from .experiments.scan import SCAN_COLUMNS, epsilon_scan
from .experiments.scattering import fringe_intensity, fringe_moments
from .numerics import BOUNDARY_FRACTION, NORM_TOL
from .plots import FIGURES, emit_plots

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


# --------------------------------------------------------------------------
# manifest and errors


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def tolerances(cfg: RunConfig) -> dict:
    """Module-level tolerances and statistical settings in effect for ``cfg``."""
    out = {
        "normalization_tol": NORM_TOL,
        "boundary_fraction": BOUNDARY_FRACTION,
        "chi_square_alpha": ens.ALPHA,
        "interval_confidence": ens.CONFIDENCE,
        "bootstrap_resamples": ens.BOOTSTRAP_RESAMPLES,
        "bootstrap_stream_index": ens.BOOTSTRAP_INDEX,
    }
    exp = cfg.experiment
    if cfg.experiment_kind == "scattering":
        out["boundary_tol"] = exp.guard_tol
    return out


def build_manifest(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "status": "running",
        "config": cfg.canonical(),
        "config_sha256": cfg.content_hash(),
        "code_version": __version__,
        "environment": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        "master_seed": cfg.ensemble.master_seed,
        "tolerances": tolerances(cfg),
        "start_time": _now(),
        "end_time": None,
        "outputs": [],
    }


def error_payload(exc: BaseException) -> dict:
    """Machine-readable description of ``exc`` with its cause chain."""
    doc = {"status": "error", "type": type(exc).__name__, "message": str(exc)}
    for attr in ("field", "line", "column", "index"):
        v = getattr(exc, attr, None)
        if v is not None:
            doc[attr] = v
    chain, cur = [], exc.__cause__ or getattr(exc, "cause", None)
    while cur is not None and len(chain) < 10:
        chain.append(f"{type(cur).__name__}: {cur}")
        cur = cur.__cause__
    if chain:
        doc["context"] = chain
    return doc


def _exit_code(exc: BaseException) -> int:
    return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_RUNTIME


# --------------------------------------------------------------------------
# per-experiment outputs


def _ensemble_outputs(cfg: RunConfig, out: Path) -> list[str]:
    exp = make_experiment(cfg.experiment_kind, cfg.experiment)
    res = ens.run_ensemble(exp, cfg.ensemble)
    emit = cfg.output.emit
    written = []
    extra: dict = {}
    if emit.csv:
        ens.write_trajectories_csv(out / "trajectories.csv", exp, res.records)
        written.append("trajectories.csv")
    if isinstance(exp, ScatteringExperiment):
        extra["run_diagnostics"] = exp.run.diagnostics
        extra["triggers"] = {repr(e): {"t": tp.t, "step": tp.step, "F_A": tp.F_A, "F_B": tp.F_B,
                                       "cA2": tp.decomposition.p_A, "cB2": tp.decomposition.p_B,
                                       "conditions": list(tp.conditions), "E_int": list(tp.E_int)}
                             for e, tp in sorted(exp.run.triggers.items())}
        if emit.csv or emit.svg:
            ro = cfg.experiment.readout
            moments = fringe_moments(np.array([r.diagnostics["amplitudes"] for r in res.records]))
            mean = ens.grouped_mean_rows(moments)
            I_ens = fringe_intensity(mean[None, :], ro)
            I_oqt = fringe_intensity(fringe_moments(exp.reference_amplitudes), ro)
            ens.write_csv(out / "fringes.csv", ("x", "I_ensemble", "I_oqt"), zip(ro.axis, I_ens, I_oqt))
            written.append("fringes.csv")
        if emit.channel_log:
            ens.write_csv(out / "channel_log.csv", LOG_COLUMNS, exp.run.rows)
            written.append("channel_log.csv")
    elif isinstance(exp, DecayExperiment):
        d = cfg.experiment
        times = d.times
        P_oqt = exp.oqt_curve
        rate, res_oqt = fit_exponential(times, P_oqt, d.fit_window)
        fit_oqt = fitted_curve(times, P_oqt, d.fit_window)
        oqt_obs = res.stats.observable if d.mode == "oqt" else None
        extra["oqt_reference"] = {"fit_window": list(d.fit_window), "rate": rate,
                                  "golden_rule_rate": d.golden_rule_rate,
                                  "deviation_threshold": d.deviation_threshold,
                                  "t_star": oqt_obs["t_star"] if oqt_obs else
                                  deviation_onset(times, res_oqt, d.deviation_threshold, d.fit_window[1])}
        cols = ["t", "P_oqt", "fit_oqt", "residual_oqt"]
        data = [times, P_oqt, fit_oqt, res_oqt]
        if d.mode == "pqt":
            S = exp.survival(res.records)
            full = (0.0, d.t_max)
            cols += ["P_pqt", "fit_pqt", "residual_pqt"]
            data += [S, fitted_curve(times, S, full), fit_exponential(times, S, full)[1]]
        ens.write_csv(out / "curves.csv", cols, zip(*data))
        written.append("curves.csv")
    elif isinstance(exp, SphereExperiment) and emit.csv:
        ens.write_csv(out / "events.csv", exp.event_columns, exp.event_rows(res.records))
        written.append("events.csv")
    ens.write_stats_json(out / "stats.json", res.stats, extra)
    written.append("stats.json")
    return written


def _scan_outputs(cfg: RunConfig, out: Path) -> list[str]:
    if cfg.experiment_kind not in ("scattering", "decay"):
        raise ConfigError(f"scan-epsilon supports scattering and decay, not {cfg.experiment_kind}", "experiment")
    base = dataclasses.replace(cfg.experiment, mode="pqt", collapse=cfg.collapse)
    spec = cfg.ensemble
    scan = epsilon_scan(base, cfg.scan.epsilons, spec.n_trajectories, spec.master_seed, cfg.scan.threshold,
                        spec.threads)
    ens.write_csv(out / "scan.csv", SCAN_COLUMNS, (r.as_list() for r in scan.rows))
    ens.write_json(out / "stats.json", {
        "kind": scan.kind,
        "threshold": scan.threshold,
        "smallest_detectable_epsilon": scan.smallest_detectable,
        "rows": [dict(zip(SCAN_COLUMNS, r.as_list())) for r in scan.rows],
        "ensembles": [r.stats.to_json() for r in scan.results],
        "seeds": {"master_seed": spec.master_seed, "stream": "Philox(key=[master_seed, index])"},
    })
    return ["scan.csv", "stats.json"]


# --------------------------------------------------------------------------
# orchestration


def execute(cfg: RunConfig, command: str = "run") -> int:
    """Run ``command`` for ``cfg`` into ``cfg.output.directory``; returns the exit status."""
    out = Path(cfg.output.directory)
    manifest = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = build_manifest(cfg, command)
        ens.write_json(out / "manifest.json", manifest)
        written = _scan_outputs(cfg, out) if command == "scan-epsilon" else _ensemble_outputs(cfg, out)
        if cfg.output.emit.svg and any(name in FIGURES for name in written):
            written += [p.name for p in emit_plots(out)]
        manifest.update(status="ok", end_time=_now(), outputs=sorted(written))
        ens.write_json(out / "manifest.json", manifest)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable error
        payload = error_payload(exc)
        if manifest is not None:
            manifest.update(status="failed", end_time=_now(), error=payload)
            try:
                ens.write_json(out / "manifest.json", manifest)
            except OSError:
                pass
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return _exit_code(exc)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="propensiton", description="Channel-triggered collapse simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    common.add_argument("--out", help="output directory (overrides output.directory)")
    common.add_argument("--seed", type=int, help="master seed (overrides ensemble.master_seed)")
    common.add_argument("--mode", choices=("oqt", "pqt"), help="overrides mode")
    common.add_argument("--trajectories", type=int, help="overrides ensemble.n_trajectories")
    common.add_argument("--threads", type=int, help="worker threads; has no effect on results")
    sub.add_parser("run", parents=[common], help="run the configured experiment or ensemble")
    sub.add_parser("scan-epsilon", parents=[common], help="ensembles over the scan.epsilons grid")
    sub.add_parser("validate-config", parents=[common], help="check a config and print it with defaults")
    pp = sub.add_parser("plot", help="render SVG figures from the data files in a directory")
    pp.add_argument("--out", required=True, help="directory holding curves.csv, fringes.csv or scan.csv")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "plot":
            for path in emit_plots(args.out):
                print(path)
            return EXIT_OK
        overrides = {"mode": args.mode, "master_seed": args.seed, "n_trajectories": args.trajectories,
                     "threads": args.threads, "directory": args.out}
        cfg = parse_config(args.config, overrides)
    except (ConfigError, PlotError, TrajectoryError) as exc:
        print(json.dumps(error_payload(exc), sort_keys=True), file=sys.stderr)
        return _exit_code(exc)
    if args.command == "validate-config":
        print(json.dumps(cfg.canonical(), indent=2, sort_keys=True))
        return EXIT_OK
    return execute(cfg, args.command)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
