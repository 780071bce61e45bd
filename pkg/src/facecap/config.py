"""Merged ``section.key = value`` configuration for the command-line tool.

Precedence, highest first: command-line flags, config file, built-in
defaults.  Unknown keys are rejected and every value is validated by the
module that owns it.
"""

import math
from pathlib import Path

from .distill import SoftTargetConfig
from .errors import ConfigError, FacecapError
from .filters import HybridConfig, KalmanConfig
from .regressor import TrainingSchedule


def _float(v):
    return float(v)


def _int(v):
    f = float(v)
    if not f.is_integer():
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _mu(v):
    if str(v).strip().lower() == "auto":
        return "auto"
    return float(v)


DEFAULTS = {
    "kalman.q": 1e-2,
    "kalman.r": 1e-2,
    "kalman.model": "rw",
    "sg.radius": 6,
    "sg.order": 2,
    "sg.mode": "endpoint",
    "hybrid.mode": "cascade",
    "train.epochs": 40,
    "train.batch": 64,
    "train.base_lr": 1e-3,
    "train.seed": 0,
    "data.p_corrupt": 0.3,
    "data.n_samples": 2000,
    "distill.mu": "auto",
    "distill.v": 2.0,
    "distill.b": 0.0,
    "distill.T": 4.0,
    "distill.alpha": 0.5,
}

PARSERS = {
    "kalman.q": _float,
    "kalman.r": _float,
    "kalman.model": str,
    "sg.radius": _int,
    "sg.order": _int,
    "sg.mode": str,
    "hybrid.mode": str,
    "train.epochs": _int,
    "train.batch": _int,
    "train.base_lr": _float,
    "train.seed": _int,
    "data.p_corrupt": _float,
    "data.n_samples": _int,
    "distill.mu": _mu,
    "distill.v": _float,
    "distill.b": _float,
    "distill.T": _float,
    "distill.alpha": _float,
}


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config_file(path):
    return parse_config_text(Path(path).read_text(), str(path))


class CliConfig(dict):
    """Validated configuration mapping with typed accessors."""

    @classmethod
    def merge(cls, file_values=None, flag_values=None):
        merged = dict(DEFAULTS)
        for layer in (file_values or {}, flag_values or {}):
            for key, value in layer.items():
                if key not in PARSERS:
                    raise ConfigError(f"unknown config key {key!r}")
                try:
                    merged[key] = PARSERS[key](value)
                except (TypeError, ValueError):
                    raise ConfigError(f"invalid value {value!r} for {key}") from None
        cfg = cls(merged)
        cfg.validate()
        return cfg

    def validate(self):
        for key, value in self.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ConfigError(f"{key} must be finite")
        try:
            self.hybrid()
            self.schedule()
            self.soft_targets()
        except ConfigError:
            raise
        except FacecapError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self["data.p_corrupt"] <= 1.0:
            raise ConfigError("data.p_corrupt must lie in [0, 1]")
        if self["data.n_samples"] < 2:
            raise ConfigError("data.n_samples must be >= 2")
        mu = self["distill.mu"]
        if mu != "auto" and not mu > 0:
            raise ConfigError("distill.mu must be 'auto' or > 0")
        if not self["distill.v"] > 1:
            raise ConfigError("distill.v must be > 1")
        if not self["distill.b"] >= 0:
            raise ConfigError("distill.b must be >= 0")

    def hybrid(self):
        kalman = KalmanConfig(q=self["kalman.q"], r=self["kalman.r"], model=self["kalman.model"])
        if self["sg.mode"] not in ("center", "endpoint"):
            raise ConfigError(f"sg.mode must be center or endpoint, got {self['sg.mode']!r}")
        return HybridConfig(
            kalman=kalman,
            sg_radius=self["sg.radius"],
            sg_order=self["sg.order"],
            sg_mode=self["sg.mode"],
            mode=self["hybrid.mode"],
        )

    def schedule(self):
        return TrainingSchedule(
            epochs=self["train.epochs"],
            batch=self["train.batch"],
            base_lr=self["train.base_lr"],
        )

    def soft_targets(self):
        return SoftTargetConfig(T=self["distill.T"], alpha=self["distill.alpha"])
