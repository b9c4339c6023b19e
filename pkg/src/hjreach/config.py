"""Run-config and scenario files: INI-style documents with a fixed schema.

A run config has the sections ``[run]``, ``[system]``, ``[network]``,
``[schedule]``, ``[grid]`` and ``[eval]``.  Only ``run.seed`` is required;
every other field has a default that is written out in the resolved copy.
Unknown sections or keys are errors, so typos never pass silently.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import systems as S
from . import trainer as T


class ConfigError(ValueError):
    """A malformed config; the message names the offending field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def _int(s: str) -> int:
    return int(s.strip())


def _float(s: str) -> float:
    v = float(s.strip())
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _floats(s: str) -> list[float]:
    parts = [p for p in s.replace(";", ",").split(",") if p.strip()]
    return [_float(p) for p in parts]


def _ints(s: str) -> list[int]:
    return [_int(p) for p in s.split(",") if p.strip()]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return v
    return parse


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


REQUIRED = object()

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "seed": (_int, REQUIRED),
        "workers": (_int, 1),
        "name": (str.strip, ""),
    },
    "system": {
        "name": (_choice(*S.BENCHMARKS), "air3d"),
        "v_e": (_float, 0.75),
        "v_p": (_float, 0.75),
        "omega_bar": (_float, 3.0),
        "beta": (_float, 0.25),
        "horizon": (_float, None),
        "shared_evader_control": (_bool, False),
    },
    "network": {
        "hidden_layers": (_int, 3),
        "hidden_width": (_int, 128),
        "omega0": (_float, 30.0),
        "hidden_omega": (_float, 30.0),
        "activation": (_choice("sine", "relu", "tanh", "sigmoid"), "sine"),
    },
    "schedule": {
        "batch_size": (_int, 10000),
        "pretrain_iters": (_int, 2000),
        "curriculum_iters": (_int, 20000),
        "learning_rate": (_float, 1e-4),
        "adam_beta1": (_float, 0.9),
        "adam_beta2": (_float, 0.999),
        "adam_eps": (_float, 1e-8),
        "lambda_policy": (_choice("auto", "fixed"), "auto"),
        "lambda_value": (_float, 1.0),
        "terminal_fraction": (_float, 0.1),
        "checkpoint_every": (_int, 1000),
    },
    "grid": {
        "resolution": (_ints, [61]),
        "t_final": (_float, 0.0),
        "snapshot_times": (_floats, []),
        "cfl": (_float, 0.5),
        "dissipation": (_choice("global", "local"), "global"),
        "tube": (_bool, True),
    },
    "eval": {
        "t": (_float, 0.0),
        "seeds": (_ints, []),
        "activations": (lambda s: [_choice("sine", "relu", "tanh", "sigmoid")(p) for p in s.split(",") if p.strip()], []),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    source: Optional[Path] = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def system(self) -> S.SystemSpec:
        s = self.values["system"]
        name = s["name"]
        if name in ("air3d", "two_vehicle_6d", "three_vehicle_9d"):
            kw = dict(v_e=s["v_e"], v_p=s["v_p"], omega_bar=s["omega_bar"], beta=s["beta"])
            if s["horizon"] is not None:
                kw["horizon"] = s["horizon"]
            params = S.Air3DParams(**kw)
            if name == "three_vehicle_9d":
                return S.three_vehicle_9d(params, s["shared_evader_control"])
            return S.air3d(params) if name == "air3d" else S.two_vehicle_6d(params)
        if name == "narrow_passage":
            if s["horizon"] is not None:
                return S.narrow_passage(S.NarrowPassageParams(horizon=s["horizon"]))
            return S.narrow_passage()
        kw = {"horizon": s["horizon"]} if s["horizon"] is not None else {}
        return S.make_system(name, **kw)

    def schedule(self) -> T.TrainSchedule:
        s = dict(self.values["schedule"])
        policy = T.LambdaPolicy.AUTO if s.pop("lambda_policy") == "auto" else T.LambdaPolicy.FIXED
        return T.TrainSchedule(seed=self.seed, lambda_policy=policy, **s)

    def net(self) -> T.NetConfig:
        return T.NetConfig(**self.values["network"])

    def resolution(self) -> tuple[int, ...]:
        res = self.values["grid"]["resolution"]
        n = self.system().state_dim
        if len(res) == 1:
            return tuple(res) * n
        if len(res) != n:
            raise ConfigError("grid.resolution", f"give 1 or {n} counts, got {len(res)}")
        return tuple(res)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in self.values.items():
            cp[section] = {k: _fmt(v) for k, v in keys.items() if v is not None}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def canonical(self, include_seed: bool = True) -> str:
        vals = json.loads(json.dumps(self.values))
        if not include_seed:
            vals["run"].pop("seed")
        vals["run"].pop("workers", None)  # execution detail, not a result input
        vals["run"].pop("name", None)
        return json.dumps(vals, sort_keys=True)

    def digest(self) -> str:
        """Hash of the resolved config, seed excluded (the seed names the run separately)."""
        return hashlib.sha256(self.canonical(include_seed=False).encode()).hexdigest()

    def run_dir_name(self) -> str:
        return f"{self.values['system']['name']}-{self.digest()[:12]}-seed{self.seed}"

    def with_overrides(self, **overrides: dict[str, Any]) -> "RunConfig":
        vals = json.loads(json.dumps(self.values))
        for section, keys in overrides.items():
            vals[section].update(keys)
        return RunConfig(vals, self.source)


def _read(text: str, where: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=where)
    except configparser.Error as exc:
        raise ConfigError(where, str(exc).splitlines()[0]) from exc
    return cp


def parse_config(text: str, where: str = "<config>") -> RunConfig:
    cp = _read(text, where)
    values: dict[str, dict[str, Any]] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, f"unknown section (expected one of {', '.join(SCHEMA)})")
    for section, keys in SCHEMA.items():
        given = cp[section] if cp.has_section(section) else {}
        for k in given:
            if k not in keys:
                raise ConfigError(f"{section}.{k}", "unknown key")
        out = {}
        for k, (parse, default) in keys.items():
            if k in given:
                try:
                    out[k] = parse(given[k])
                except ValueError as exc:
                    raise ConfigError(f"{section}.{k}", str(exc)) from exc
            elif default is REQUIRED:
                raise ConfigError(f"{section}.{k}", "required field is missing")
            else:
                out[k] = list(default) if isinstance(default, list) else default
        values[section] = out
    cfg = RunConfig(values)
    _validate(cfg)
    # materialize the system's own horizon so the resolved copy is complete
    values["system"]["horizon"] = float(cfg.system().horizon)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from exc
    cfg = parse_config(text, str(path))
    cfg.source = path
    return cfg


def _validate(cfg: RunConfig) -> None:
    """Push domain checks through the real constructors so messages name fields."""
    try:
        cfg.system()
    except (ValueError, TypeError) as exc:
        raise ConfigError("system", str(exc)) from exc
    try:
        cfg.schedule()
    except (ValueError, TypeError) as exc:
        raise ConfigError("schedule", str(exc)) from exc
    net = cfg["network"]
    for k in ("hidden_layers", "hidden_width"):
        if net[k] < 1:
            raise ConfigError(f"network.{k}", "must be positive")
    if cfg["run"]["workers"] < 1:
        raise ConfigError("run.workers", "must be positive")
    cfg.resolution()
    if cfg["grid"]["cfl"] <= 0 or cfg["grid"]["cfl"] > 1:
        raise ConfigError("grid.cfl", "must lie in (0, 1]")


# ------------------------------------------------------------------ scenarios


@dataclass
class Start:
    name: str
    x0: np.ndarray
    nominal: Optional[Callable[[float, np.ndarray], np.ndarray]] = None


@dataclass
class Scenario:
    system: str
    dt: float = 0.01
    t0: float = 0.0
    t_end: Optional[float] = None
    margin: float = 0.0
    starts: list[Start] = field(default_factory=list)
    random_starts: int = 0
    random_seed: int = 0


_SCENARIO_KEYS = {"system", "dt", "t0", "t_end", "margin", "random_starts", "random_seed"}
_START_KEYS = {"x0", "nominal", "nominal_times", "nominal_controls"}


def parse_scenario(text: str, where: str = "<scenario>") -> Scenario:
    """Scenario file: a ``[scenario]`` block plus one ``[start.NAME]`` block per start.

    A start may carry a nominal control, either constant (``nominal = u1, u2``)
    or a zero-order-hold table (``nominal_times`` plus ``nominal_controls``
    with rows separated by ``;``).
    """
    from .rollout import FilterPolicy

    cp = _read(text, where)
    if not cp.has_section("scenario"):
        raise ConfigError("scenario", "missing [scenario] section")
    head = cp["scenario"]
    for k in head:
        if k not in _SCENARIO_KEYS:
            raise ConfigError(f"scenario.{k}", "unknown scenario key")
    if "system" not in head:
        raise ConfigError("scenario.system", "required field is missing")

    def get(key, parse, default):
        if key not in head:
            return default
        try:
            return parse(head[key])
        except ValueError as exc:
            raise ConfigError(f"scenario.{key}", str(exc)) from exc

    sc = Scenario(system=head["system"].strip(), dt=get("dt", _float, 0.01), t0=get("t0", _float, 0.0),
                  t_end=get("t_end", _float, None), margin=get("margin", _float, 0.0),
                  random_starts=get("random_starts", _int, 0), random_seed=get("random_seed", _int, 0))
    if sc.dt <= 0:
        raise ConfigError("scenario.dt", "must be positive")
    for section in cp.sections():
        if section == "scenario":
            continue
        if not section.startswith("start."):
            raise ConfigError(section, "unknown scenario section (expected [start.NAME])")
        body = cp[section]
        for k in body:
            if k not in _START_KEYS:
                raise ConfigError(f"{section}.{k}", "unknown scenario key")
        if "x0" not in body:
            raise ConfigError(f"{section}.x0", "required field is missing")
        try:
            x0 = np.array(_floats(body["x0"]))
            nominal = None
            if "nominal" in body:
                nominal = FilterPolicy.constant(_floats(body["nominal"])).nominal
            elif "nominal_times" in body or "nominal_controls" in body:
                times = _floats(body.get("nominal_times", ""))
                rows = [_floats(r) for r in body.get("nominal_controls", "").split(";") if r.strip()]
                nominal = FilterPolicy.table(times, rows).nominal
        except ValueError as exc:
            raise ConfigError(section, str(exc)) from exc
        sc.starts.append(Start(section[len("start."):], x0, nominal))
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from exc
    return parse_scenario(text, str(path))
