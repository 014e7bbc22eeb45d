"""Run configuration: dimension and training knobs with profile defaults.

Precedence when resolving: command-line flags, then a flat key=value
config file, then the selected profile.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .model import ROUTING_MODES, TEACHER_FORCED

PAPER_PROFILE = {
    "k": 36, "d_v": 2048, "d_w": 300, "d_q": 1024, "d_f": 1024, "n_w": 14, "n_c": 12,
    "epochs": 17, "batch": 512, "lr0": 0.002, "decay": 0.1, "period": 5,
}

DESK_PROFILE = {
    "k": 4, "d_v": 16, "d_w": 8, "d_q": 32, "d_f": 32, "n_w": 6, "n_c": 4,
    "epochs": 20, "batch": 32, "lr0": 0.002, "decay": 0.1, "period": 5,
}

PROFILES = {"paper": PAPER_PROFILE, "desk": DESK_PROFILE}


@dataclass
class RunConfig:
    k: int = 4
    d_v: int = 16
    d_w: int = 8
    d_q: int = 32
    d_f: int = 32
    n_w: int = 6
    n_c: int = 4
    h_cq: int | None = None  # hidden widths default to d_f
    h_ap: int | None = None
    epochs: int = 20
    batch: int = 32
    lr0: float = 0.002
    decay: float = 0.1
    period: int = 5
    seed: int = 7
    routing: str = TEACHER_FORCED
    precision: int = 32

    def __post_init__(self):
        for name in ("k", "d_v", "d_w", "d_q", "d_f", "n_w", "n_c",
                     "epochs", "batch", "period"):
            if getattr(self, name) < 1:
                raise ValueError(f"config field {name} must be positive, got {getattr(self, name)}")
        if self.routing not in ROUTING_MODES:
            raise ValueError(f"routing mode {self.routing!r} not one of {ROUTING_MODES}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @property
    def hidden_cq(self) -> int:
        return self.h_cq or self.d_f

    @property
    def hidden_ap(self) -> int:
        return self.h_ap or self.d_f

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def parse_config_file(path) -> dict:
    """Read a flat key=value file; blank lines and # comments are skipped."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def resolve_config(profile: str = "desk", file_values: dict | None = None,
                   overrides: dict | None = None) -> RunConfig:
    """Layer profile defaults, config-file values, and flag overrides."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")
    merged: dict = dict(PROFILES[profile])
    for layer in (file_values or {}), (overrides or {}):
        for key, value in layer.items():
            if value is not None:
                merged[key] = value

    kwargs = {}
    for f in fields(RunConfig):
        if f.name not in merged:
            continue
        value = merged[f.name]
        if isinstance(value, str) and f.name not in ("routing",):
            value = float(value) if f.name in ("lr0", "decay") else int(value)
        kwargs[f.name] = value
    return RunConfig(**kwargs)
