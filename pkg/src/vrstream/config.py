"""Flat JSON run configuration.

A config file is one JSON object. Values may be given plain (``"users": 5``)
or in the echoed form (``"users": {"value": 5, "assumed": false}``) so a
resolved config written next to a report can be fed back verbatim.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .sim import ConfigError, SimConfig


@dataclass
class RunConfig(SimConfig):
    videos: int = 5
    traces_per_video: int = 50
    train_fraction: float = 0.7
    walk_step: object = 1
    fov_block: object = (3, 3)
    anchor_spread: int = 1
    traces_path: str | None = None
    iterations: int = 50_000
    workers: int = 4
    eval_episodes: int = 1

    def __post_init__(self):
        super().__post_init__()
        if isinstance(self.fov_block, (list, tuple)) and self.fov_block and \
                isinstance(self.fov_block[0], (list, tuple)):
            self.fov_block = tuple(tuple(int(x) for x in b) for b in self.fov_block)
        else:
            self.fov_block = tuple(int(x) for x in self.fov_block)
        if isinstance(self.walk_step, (list, tuple)):
            self.walk_step = tuple(int(x) for x in self.walk_step)
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.traces_per_video < 2:
            raise ConfigError("need at least two traces per video")
        if self.iterations < 0 or self.workers < 1 or self.eval_episodes < 1:
            raise ConfigError("iterations >= 0, workers >= 1 and eval_episodes >= 1 required")

    def sim(self) -> SimConfig:
        base = {f.name for f in fields(SimConfig)}
        return SimConfig(**{k: v for k, v in asdict(self).items() if k in base})


# keys whose defaults come from the evaluated setup; everything else is a labelled assumption
STATED = {
    "users", "grid", "alignment_fraction", "distance_min_m", "distance_max_m", "bandwidth_hz",
    "tx_power_dbm", "noise_psd_w_per_hz", "beam_gain", "pathloss_exp", "predictor_window",
    "p_th", "gamma", "actor_lr", "critic_lr", "traces_per_video", "train_fraction",
    "iterations", "lam",
}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def load_config(path=None, overrides: dict | None = None) -> tuple[RunConfig, set]:
    """Config from ``path`` plus ``overrides``; returns it with the set of keys explicitly set."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    doc.update(overrides or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = {}
    for k, v in doc.items():
        if isinstance(v, dict):
            if set(v) - {"value", "assumed"} or "value" not in v:
                raise ConfigError(f"{k}: expected a plain value or {{'value', 'assumed'}}")
            v = v["value"]
        values[k] = v
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, set(values)


def resolved(cfg: RunConfig, explicit=()) -> dict:
    """Echo of every key with its value and whether it rests on an assumption."""
    out = {}
    for f in fields(cfg):
        out[f.name] = {"value": _plain(getattr(cfg, f.name)),
                       "assumed": f.name not in STATED and f.name not in explicit}
    return out


def save_resolved(cfg: RunConfig, path, explicit=()) -> None:
    Path(path).write_text(json.dumps(resolved(cfg, explicit), indent=2) + "\n", encoding="utf-8")
