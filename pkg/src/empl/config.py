"""Experiment configuration files.

INI format, one section per concern::

    [experiment]   kind, seed, output_dir
    [architecture] hidden, batch_norm, dropout
    [loss]         name, tau_policy, tau, alpha
    [schedule]     iterations, epochs, batch_size, learning_rate, final_lr_factor, log_every
    [baseline]     optional; same keys as [schedule], used for the Gaussian baseline
    [data]         experiment-specific keys

Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from . import nn
from .losses import TRAINING_LOSSES

KINDS = ("urn", "football", "bimodal")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


DATA_KEYS = {
    "urn": {"n_balls": int, "max_log10_draws": float},
    "football": {"source": str, "n_seasons": int, "test_seasons": str, "replays": int,
                 "n_bootstrap": int},
    "bimodal": {"eval_samples": int},
}
DATA_DEFAULTS = {
    "urn": {"n_balls": 5, "max_log10_draws": 3.0},
    "football": {"source": "synthetic", "n_seasons": 23, "test_seasons": "", "replays": 1000,
                 "n_bootstrap": 200},
    "bimodal": {"eval_samples": 20000},
}
SCHEDULE_KEYS = ("iterations", "epochs", "batch_size", "learning_rate", "final_lr_factor", "log_every")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    output_dir: str = "runs/default"
    hidden: tuple = (128, 128)
    batch_norm: bool = True
    dropout: float = 0.0
    loss: nn.LossConfig = field(default_factory=nn.LossConfig)
    schedule: nn.Schedule = field(default_factory=nn.Schedule)
    baseline: Optional[nn.Schedule] = None
    data: tuple = ()  # sorted (key, value) pairs

    @property
    def data_dict(self) -> dict:
        merged = dict(DATA_DEFAULTS[self.kind])
        merged.update(dict(self.data))
        return merged

    def replace(self, **changes) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, **changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["experiment"] = {"kind": cfg.kind, "seed": str(cfg.seed), "output_dir": cfg.output_dir}
    cp["architecture"] = {"hidden": _fmt(cfg.hidden), "batch_norm": _fmt(cfg.batch_norm),
                          "dropout": _fmt(cfg.dropout)}
    cp["loss"] = {"name": cfg.loss.name, "tau_policy": cfg.loss.tau_policy,
                  "tau": _fmt(float(cfg.loss.tau)),
                  "alpha": _fmt(float(cfg.loss.alpha or 0.0))}
    cp["schedule"] = {k: _fmt(getattr(cfg.schedule, k)) for k in SCHEDULE_KEYS}
    if cfg.baseline is not None:
        cp["baseline"] = {k: _fmt(getattr(cfg.baseline, k)) for k in SCHEDULE_KEYS}
    cp["data"] = {k: _fmt(v) for k, v in cfg.data}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(to_ini(cfg).encode()).hexdigest()


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, section: str):
        self.section = section
        self.items = dict(cp[section]) if cp.has_section(section) else {}
        self.used = set()

    def get(self, key, conv, default=None, required=False):
        name = f"{self.section}.{key}"
        if key not in self.items:
            if required:
                raise ConfigError(name, "missing required field")
            return default
        self.used.add(key)
        raw = self.items[key].strip()
        try:
            if conv is bool:
                low = raw.lower()
                if low not in ("true", "false", "yes", "no", "1", "0"):
                    raise ValueError(raw)
                return low in ("true", "yes", "1")
            if conv is tuple:
                return tuple(int(x) for x in raw.split(",") if x.strip())
            return conv(raw)
        except ValueError:
            raise ConfigError(name, f"cannot parse {raw!r} as {getattr(conv, '__name__', conv)}") from None

    def finish(self):
        extra = set(self.items) - self.used
        if extra:
            key = sorted(extra)[0]
            raise ConfigError(f"{self.section}.{key}", "unknown key")


def _schedule(r: _Reader, default: nn.Schedule) -> nn.Schedule:
    vals = {
        "iterations": r.get("iterations", int, default.iterations),
        "epochs": r.get("epochs", int, default.epochs),
        "batch_size": r.get("batch_size", int, default.batch_size),
        "learning_rate": r.get("learning_rate", float, default.learning_rate),
        "final_lr_factor": r.get("final_lr_factor", float, default.final_lr_factor),
        "log_every": r.get("log_every", int, default.log_every),
    }
    for k in ("iterations", "epochs"):
        if vals[k] < 0:
            raise ConfigError(f"{r.section}.{k}", "must be >= 0")
    for k in ("batch_size", "log_every"):
        if vals[k] < 1:
            raise ConfigError(f"{r.section}.{k}", "must be >= 1")
    if not vals["learning_rate"] > 0:
        raise ConfigError(f"{r.section}.learning_rate", "must be > 0")
    if not vals["final_lr_factor"] > 0:
        raise ConfigError(f"{r.section}.final_lr_factor", "must be > 0")
    r.finish()
    return nn.Schedule(**vals)


def from_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    known = {"experiment", "architecture", "loss", "schedule", "baseline", "data"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(sec, "unknown section")

    r = _Reader(cp, "experiment")
    kind = r.get("kind", str, required=True)
    if kind not in KINDS:
        raise ConfigError("experiment.kind", f"must be one of {KINDS}, got {kind!r}")
    seed = r.get("seed", int, required=True)
    if seed < 0:
        raise ConfigError("experiment.seed", "must be >= 0")
    output_dir = r.get("output_dir", str, f"runs/{kind}")
    r.finish()

    r = _Reader(cp, "architecture")
    hidden = r.get("hidden", tuple, (128, 128))
    if not hidden or min(hidden) < 1:
        raise ConfigError("architecture.hidden", "needs at least one layer of positive width")
    batch_norm = r.get("batch_norm", bool, True)
    dropout = r.get("dropout", float, 0.0)
    if not 0.0 <= dropout < 1.0:
        raise ConfigError("architecture.dropout", "must lie in [0, 1)")
    r.finish()

    r = _Reader(cp, "loss")
    name = r.get("name", str, "empl")
    if name not in TRAINING_LOSSES:
        raise ConfigError("loss.name", f"must be one of {TRAINING_LOSSES}")
    tau_policy = r.get("tau_policy", str, "uniform")
    if tau_policy not in ("uniform", "fixed"):
        raise ConfigError("loss.tau_policy", "must be 'uniform' or 'fixed'")
    tau = r.get("tau", float, 0.5)
    if not 0.0 < tau < 1.0:
        raise ConfigError("loss.tau", "must lie in (0, 1)")
    alpha = r.get("alpha", float, 0.0)
    if alpha < 0:
        raise ConfigError("loss.alpha", "must be >= 0")
    if name == "empl_smoothed" and alpha <= 0:
        raise ConfigError("loss.alpha", "must be > 0 for the smoothed loss")
    r.finish()
    loss = nn.LossConfig(name, tau_policy, tau, alpha if alpha > 0 else None)

    schedule = _schedule(_Reader(cp, "schedule"), nn.Schedule())
    baseline = _schedule(_Reader(cp, "baseline"), schedule) if cp.has_section("baseline") else None

    r = _Reader(cp, "data")
    data = {}
    for key, conv in DATA_KEYS[kind].items():
        v = r.get(key, conv)
        if v is not None:
            data[key] = v
    r.finish()
    for key in ("n_balls", "n_seasons", "replays", "n_bootstrap", "eval_samples"):
        if key in data and data[key] < 1:
            raise ConfigError(f"data.{key}", "must be >= 1")

    return ExperimentConfig(kind, seed, output_dir, hidden, batch_norm, dropout, loss, schedule,
                            baseline, tuple(sorted(data.items())))


def bundled_configs() -> list:
    return sorted(p.name[:-4] for p in resources.files("empl.configs").iterdir()
                  if p.name.endswith(".ini"))


def load_config(path_or_name) -> ExperimentConfig:
    """Load a config file, or a bundled config by name (e.g. ``urn_default``)."""
    p = Path(path_or_name)
    if p.is_file():
        return from_ini(p.read_text())
    name = str(path_or_name)
    if name in bundled_configs():
        return from_ini(resources.files("empl.configs").joinpath(f"{name}.ini").read_text())
    raise ConfigError("file", f"no config file or bundled config named {name!r}")
