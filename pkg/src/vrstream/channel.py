"""mmWave link model: pathloss with Rayleigh fading and SFN-combined rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class RadioConfig:
    bandwidth_hz: float = 1e9
    tx_power_w: float = dbm_to_watts(45.0)
    noise_psd_w_per_hz: float = 1e-9
    pathloss_exp: float = 2.0
    pathloss_ref_gain: float = 1.0
    beam_gain: float = 10.0
    sbs_count: int = 1

    def __post_init__(self):
        for name in ("bandwidth_hz", "tx_power_w", "noise_psd_w_per_hz",
                     "pathloss_exp", "pathloss_ref_gain", "beam_gain"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.sbs_count < 1:
            raise ValueError("sbs_count must be at least 1")

    @classmethod
    def from_dbm(cls, tx_power_dbm=45.0, **kw) -> "RadioConfig":
        return cls(tx_power_w=dbm_to_watts(tx_power_dbm), **kw)


@dataclass(frozen=True)
class LinkState:
    """Per-SBS channel power gains ``|h|^2``, beam gains ``f`` and distances of one user."""

    gains: np.ndarray
    beam_gains: np.ndarray
    distances_m: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gains, dtype=float))
        f = np.broadcast_to(np.asarray(self.beam_gains, dtype=float), g.shape)
        d = np.broadcast_to(np.asarray(self.distances_m, dtype=float), g.shape)
        if np.any(g < 0) or np.any(f < 0):
            raise ValueError("gains must be non-negative")
        if np.any(d <= 0):
            raise ValueError("distances must be positive")
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "beam_gains", f)
        object.__setattr__(self, "distances_m", d)


def sample_channel(rng: np.random.Generator, d: float, cfg: RadioConfig, fade=None) -> float:
    """Channel power gain ``ref * d**-alpha * e`` with unit-mean exponential ``e``.

    ``fade`` overrides the exponential draw (used to pin the fading in tests).
    """
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    e = rng.exponential(1.0) if fade is None else fade
    return cfg.pathloss_ref_gain * d ** (-cfg.pathloss_exp) * e


def sample_link(rng: np.random.Generator, distances_m, cfg: RadioConfig) -> LinkState:
    d = np.broadcast_to(np.asarray(distances_m, dtype=float), (cfg.sbs_count,))
    gains = np.array([sample_channel(rng, x, cfg) for x in d])
    return LinkState(gains, np.full(cfg.sbs_count, cfg.beam_gain), d)


def snr(link: LinkState, cfg: RadioConfig) -> float:
    combined = float(np.sum(link.gains * link.beam_gains ** 2))
    return cfg.tx_power_w * combined / (cfg.noise_psd_w_per_hz * cfg.bandwidth_hz)


def instantaneous_rate(link: LinkState, cfg: RadioConfig) -> float:
    """Per-slot rate in bits/s; SBS contributions add inside the log (SFN)."""
    return cfg.bandwidth_hz * math.log2(1.0 + snr(link, cfg))


def average_rate(rate: float, slots: int, coherence_slots: int) -> float:
    """Rate averaged over a coherence block when scheduled for ``slots`` of its slots."""
    if not 0 <= slots <= coherence_slots:
        raise ValueError(f"slots={slots} must lie in [0, {coherence_slots}]")
    return slots / coherence_slots * rate
