"""Experiment configuration: a flat ``key = value`` text format plus overrides.

Lines are ``key = value``; ``#`` starts a comment. Per-user overrides use
``user.<k>.<field>`` for ``alpha``, ``beta``, ``x_max``, ``utility``, ``nu``
and ``theta``. Phases are written ``fraction:p`` separated by commas, e.g.
``1/3:0.05, 1/3:0.1, 1/3:0.07``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

from .files import FileSizes, PhaseSchedule, parse_phases
from .scheduler import UserConfig
from .utility import parse_utility


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def read_kv(path: str | Path) -> dict[str, str]:
    """Read a flat ``key = value`` file."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


_USER_FIELDS = ("alpha", "beta", "x_max", "utility", "nu", "theta")


@dataclass(frozen=True)
class ExperimentConfig:
    users: int = 50
    rows: int = 4
    cols: int = 4
    slots: int = 100_000
    V: float = 10.0
    alpha: float = 0.5
    beta: float = 0.05
    x_max: int = 3
    utility: str = "log1p"
    nu: float = 1.0
    theta: float | None = None
    phases: tuple[tuple[Fraction, float], ...] = (
        (Fraction(1, 3), 0.05), (Fraction(1, 3), 0.1), (Fraction(1, 3), 0.07))
    seed: int = 1
    access_points: int = 1
    peer_rate: int = 1
    stay_probability: float = 0.5
    mode: str = "infinite"
    file_size: int = 100
    file_size_law: str = "fixed"
    wake_probability: float = 0.0
    peer_off: tuple[int, ...] = ()
    user_overrides: Mapping[int, Mapping[str, str]] = field(default_factory=dict)
    windows: tuple[int, ...] = (100, 1000, 10000)
    csv_every: int = 100
    out: str = "out"

    def __post_init__(self):
        positive = {"users": self.users >= 0, "rows": self.rows >= 1, "cols": self.cols >= 1,
                    "slots": self.slots >= 1, "x_max": self.x_max >= 1,
                    "access_points": self.access_points >= 0, "peer_rate": self.peer_rate >= 0,
                    "file_size": self.file_size >= 1, "csv_every": self.csv_every >= 1}
        for name, ok in positive.items():
            if not ok:
                raise ConfigError(name, f"out of range: {getattr(self, name)!r}")
        if self.V < 0:
            raise ConfigError("V", "must be non-negative")
        if self.alpha < 0:
            raise ConfigError("alpha", "must be non-negative")
        if self.beta < 0:
            raise ConfigError("beta", "must be non-negative")
        if not 0.0 <= self.stay_probability <= 1.0:
            raise ConfigError("stay_probability", "must lie in [0, 1]")
        if not 0.0 <= self.wake_probability <= 1.0:
            raise ConfigError("wake_probability", "must lie in [0, 1]")
        if self.mode not in ("infinite", "finite"):
            raise ConfigError("mode", "must be 'infinite' or 'finite'")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError("phases", str(exc)) from None
        try:
            FileSizes(self.file_size_law, self.file_size)
        except ValueError as exc:
            raise ConfigError("file_size_law", str(exc)) from None
        for k in self.user_overrides:
            if not 0 <= k < self.users:
                raise ConfigError(f"user.{k}", "no such user")
        for k in self.peer_off:
            if not 0 <= k < self.users:
                raise ConfigError("peer_off", f"no such user {k}")
        if any(w < 1 for w in self.windows):
            raise ConfigError("windows", "window lengths must be positive")
        self.user_configs()

    def schedule(self) -> PhaseSchedule:
        return PhaseSchedule(tuple(self.phases), self.slots)

    def sizes(self) -> FileSizes:
        return FileSizes(self.file_size_law, self.file_size)

    def user_configs(self) -> tuple[UserConfig, ...]:
        out = []
        for k in range(self.users):
            o = self.user_overrides.get(k, {})
            name = "user." + str(k) + "." if o else ""
            try:
                theta = o.get("theta", self.theta)
                out.append(UserConfig(
                    alpha=float(o.get("alpha", self.alpha)),
                    beta=float(o.get("beta", self.beta)),
                    x_max=int(o.get("x_max", self.x_max)),
                    utility=parse_utility(str(o.get("utility", self.utility)),
                                          float(o.get("nu", self.nu)),
                                          None if theta is None else float(theta))))
            except ValueError as exc:
                raise ConfigError(name + "utility" if "utility" in str(exc) or "theta" in str(exc)
                                  else (name or "") + "user", str(exc)) from None
        return tuple(out)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["phases"] = [[str(f), p] for f, p in self.phases]
        d["user_overrides"] = {str(k): dict(v) for k, v in self.user_overrides.items()}
        d["peer_off"] = list(self.peer_off)
        d["windows"] = list(self.windows)
        return d


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_CONVERTERS = {
    "users": int, "rows": int, "cols": int, "slots": int, "V": float, "alpha": float,
    "beta": float, "x_max": int, "utility": str, "nu": float,
    "theta": lambda s: None if s.lower() in ("", "none") else float(s),
    "phases": parse_phases, "seed": int, "access_points": int, "peer_rate": int,
    "stay_probability": float, "mode": str, "file_size": int, "file_size_law": str,
    "wake_probability": float, "peer_off": _int_list, "windows": _int_list,
    "csv_every": int, "out": str,
}


def config_from_kv(kv: Mapping[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply string key-value pairs on top of ``base`` (defaults if omitted)."""
    changes: dict[str, Any] = {}
    overrides: dict[int, dict[str, str]] = {}
    if base is not None:
        overrides = {k: dict(v) for k, v in base.user_overrides.items()}
    for key, value in kv.items():
        if key.startswith("user."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _USER_FIELDS or not parts[1].isdigit():
                raise ConfigError(key, "expected user.<k>.<alpha|beta|x_max|utility|nu|theta>")
            overrides.setdefault(int(parts[1]), {})[parts[2]] = value
            continue
        if key not in _CONVERTERS:
            raise ConfigError(key, "unknown configuration key")
        try:
            changes[key] = _CONVERTERS[key](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(key, f"cannot parse {value!r}: {exc}") from None
    changes["user_overrides"] = overrides
    if base is None:
        return ExperimentConfig(**changes)
    return base.replace(**changes)


def load_config(path: str | Path | None = None, **overrides: str) -> ExperimentConfig:
    kv = read_kv(path) if path is not None else {}
    kv.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_kv(kv)
