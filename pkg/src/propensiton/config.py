"""Run configuration: strict JSON parsing, validation and canonical echo.

The schema is documented in ``docs/config_schema.md``.  Every section maps
onto a dataclass; keys are checked against the dataclass fields, values
against the field annotations, and the dataclass validators then check the
invariants.  Missing keys take the dataclass defaults.
"""
from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .channels import CollapseConfig
from .ensemble import EnsembleSpec
from .errors import ConfigError
from .experiments.decay import DecayConfig
from .experiments.plate import PlateConfig
from .experiments.scattering import ScatteringConfig
from .experiments.spheres import SphereToyConfig

EXPERIMENTS = {
    "scattering": ScatteringConfig,
    "decay": DecayConfig,
    "plate": PlateConfig,
    "sphere_toy": SphereToyConfig,
}
# taken from the top level of the run config, not from the experiment section
INJECTED = ("mode", "collapse")
UNITS = ("model",)


@dataclass(frozen=True)
class ScanSpec:
    epsilons: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    threshold: float = 0.05


@dataclass(frozen=True)
class EmitFlags:
    csv: bool = True
    svg: bool = True
    channel_log: bool = False


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    emit: EmitFlags = field(default_factory=EmitFlags)


@dataclass(frozen=True)
class RunConfig:
    """A validated run: one experiment, its mode and collapse rule, ensemble and output settings.

    ``collapse`` always holds the filled-in trigger parameters; the experiment
    only uses them in pqt mode or when the section was given explicitly.
    """

    experiment_kind: str
    experiment: Any
    mode: str = "oqt"
    collapse: CollapseConfig = field(default_factory=CollapseConfig)
    collapse_given: bool = False
    ensemble: EnsembleSpec = field(default_factory=lambda: EnsembleSpec(n_trajectories=1))
    output: OutputSpec = field(default_factory=OutputSpec)
    scan: ScanSpec = field(default_factory=ScanSpec)
    units: str = "model"

    def canonical(self) -> dict:
        """Plain-data echo with every default filled in."""
        return _plain({
            "units": self.units,
            "experiment": {self.experiment_kind: _strip_injected(self.experiment)},
            "mode": self.mode,
            "collapse": self.collapse,
            "ensemble": self.ensemble,
            "output": self.output,
            "scan": self.scan,
        })

    def canonical_json(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _strip_injected(exp) -> dict:
    return {f.name: getattr(exp, f.name) for f in dataclasses.fields(exp) if f.name not in INJECTED}


def _plain(x):
    if dataclasses.is_dataclass(x) and not isinstance(x, type):
        return {f.name: _plain(getattr(x, f.name)) for f in dataclasses.fields(x)}
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _inject(kind: str, exp, mode: str, collapse: CollapseConfig, given: bool):
    if kind not in ("scattering", "decay"):
        return exp
    use = collapse if (mode == "pqt" or given) else None
    try:
        return dataclasses.replace(exp, mode=mode, collapse=use)
    except ConfigError as exc:
        raise ConfigError(str(exc), _qualify(exc.field, f"experiment.{kind}", type(exp))) from exc


# --------------------------------------------------------------------------
# strict conversion


def _suggest(key: str, allowed) -> str:
    close = difflib.get_close_matches(key, list(allowed), n=1, cutoff=0.6)
    return f"; did you mean {close[0]!r}?" if close else f"; allowed keys: {', '.join(sorted(allowed))}"


def _check_keys(data: dict, allowed, path: str):
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key {key!r} at {path or 'top level'}{_suggest(key, allowed)}", where)


def _qualify(inner: str | None, path: str, cls) -> str:
    if not inner:
        return path
    head = inner.split(".")[0]
    names = {f.name for f in dataclasses.fields(cls)} if dataclasses.is_dataclass(cls) else set()
    tail = inner if head in names else inner.split(".")[-1]
    return f"{path}.{tail}" if path else tail


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    return float(value)


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _convert(inner, value, path)
    if tp is Any:
        return value
    if tp is float:
        return _number(value, path)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {value!r}", path)
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    if tp is complex:
        if isinstance(value, list) and len(value) == 2:
            return complex(_number(value[0], path), _number(value[1], path))
        return complex(_number(value, path))
    if tp is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError("expected an object", path)
        return {k: _number(v, f"{path}.{k}") for k, v in value.items()}
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"expected a list of {len(args)} entries, got {len(value)}", path)
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    raise TypeError(f"no converter for {tp!r}")  # pragma: no cover - schema bug


def _build(cls, data, path: str, exclude: tuple[str, ...] = ()):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object, got {data!r}", path)
    hints = typing.get_type_hints(cls)
    allowed = [f.name for f in dataclasses.fields(cls) if f.init and f.name not in exclude]
    _check_keys(data, allowed, path)
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), _qualify(exc.field, path, cls)) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path) from exc


# --------------------------------------------------------------------------
# entry points

TOP_KEYS = ("units", "experiment", "mode", "collapse", "ensemble", "output", "scan")


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ConfigError(f"duplicate key {k!r}", k)
        out[k] = v
    return out


def _no_constants(name: str):
    raise ConfigError(f"{name} is not a valid number in a config")


def loads_config(text: str, source: str = "<string>", overrides: dict | None = None) -> RunConfig:
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates, parse_constant=_no_constants)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}",
                          line=exc.lineno, column=exc.colno) from exc
    return config_from_dict(apply_overrides(data, overrides or {}))


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Read, validate and default-fill a JSON run config.

    ``overrides`` may set ``mode``, ``master_seed``, ``n_trajectories``,
    ``threads`` and ``directory``; they replace the file's values before
    validation.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(p)!r}: {exc.strerror}") from exc
    return loads_config(text, str(p), overrides)


def apply_overrides(data, overrides: dict):
    if not isinstance(data, dict) or not overrides:
        return data
    data = dict(data)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "mode":
            data["mode"] = value
        elif key in ("master_seed", "n_trajectories", "threads"):
            ens = data.get("ensemble", {})
            data["ensemble"] = {**ens, key: value} if isinstance(ens, dict) else ens
        elif key == "directory":
            out = data.get("output", {})
            data["output"] = {**out, "directory": value} if isinstance(out, dict) else out
        else:
            raise ValueError(f"unknown override {key!r}")
    return data


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("the config must be a JSON object")
    _check_keys(data, TOP_KEYS, "")
    units = data.get("units", "model")
    if units not in UNITS:
        raise ConfigError(f"units must be one of {UNITS}, got {units!r}", "units")
    exp = data.get("experiment")
    if not isinstance(exp, dict) or len(exp) != 1:
        raise ConfigError("the experiment section needs exactly one of " + ", ".join(EXPERIMENTS), "experiment")
    (kind, section), = exp.items()
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {kind!r}{_suggest(kind, EXPERIMENTS)}", f"experiment.{kind}")
    mode = data.get("mode", "oqt")
    if mode not in ("oqt", "pqt"):
        raise ConfigError(f"mode must be 'oqt' or 'pqt', got {mode!r}", "mode")
    given = "collapse" in data
    if mode == "pqt" and not given:
        raise ConfigError("pqt mode requires a collapse section", "collapse")
    if mode == "pqt" and kind not in ("scattering", "decay"):
        raise ConfigError(f"{kind} has no pqt/oqt distinction; leave mode at 'oqt'", "mode")
    collapse = _build(CollapseConfig, data.get("collapse", {}), "collapse")
    exclude = INJECTED if kind in ("scattering", "decay") else ()
    experiment = _build(EXPERIMENTS[kind], section, f"experiment.{kind}", exclude)
    experiment = _inject(kind, experiment, mode, collapse, given)
    ens = data.get("ensemble", {})
    ensemble = _build(EnsembleSpec, {"n_trajectories": 1, **ens} if isinstance(ens, dict) else ens, "ensemble")
    return RunConfig(
        experiment_kind=kind,
        experiment=experiment,
        mode=mode,
        collapse=collapse,
        collapse_given=given,
        ensemble=ensemble,
        output=_build(OutputSpec, data.get("output", {}), "output"),
        scan=_build(ScanSpec, data.get("scan", {}), "scan"),
        units=units,
    )

