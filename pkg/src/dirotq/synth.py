"""Synthetic activation streams with heavy-tailed channel structure.

The generator mimics what transformer activations look like across a
denoising schedule: most channels carry comparable energy with a smooth
power-law spread, while a small designated set of outlier channels runs one
to two orders of magnitude hotter and drifts over the timestep index.

Per config seed, three fixed structural draws are made: which channels are
outliers, how the background scale profile is shuffled across channels, and
nothing else. Sample noise is then drawn from independent substreams keyed
by (seed, split, sample, t), so calibration and evaluation never share
randomness but do share the channel structure.

Outlier channel i of c gets scale outlier_scale ** (1 - i / (2c)), a
geometric ladder from the full multiplier down to roughly its square root,
times the drift factor (1 + drift_amplitude * sin(2 pi t / timesteps)).
Background channels follow a plateau-plus-ramp shape: roughly the hottest
3/16 sit on a common plateau and the rest decay geometrically. The plateau
is wide enough that truncating the top tenth of directions still leaves
visibly hot residual channels, while the overall spread stays well inside
statistical homogeneity (max/median below 3) when outliers are disabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PLATEAU_SCALE = 1.5
PLATEAU_FRACTION = 3.0 / 16.0
RAMP_HI = 1.05
RAMP_LO = 0.55

_STREAM_STRUCTURE = 0
_STREAM_SHUFFLE = 1
_STREAM_DATA = 2
_SPLIT_TAGS = {"calib": 0, "eval": 1}


@dataclass(frozen=True)
class SynthConfig:
    channels: int = 256
    tokens_per_step: int = 256
    timesteps: int = 20
    outlier_channels: int = 24
    outlier_scale: float = 50.0
    drift_amplitude: float = 0.5
    base_distribution: str = "gaussian"
    seed: int = 7

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.tokens_per_step < 1:
            raise ConfigError(f"tokens_per_step must be >= 1, got {self.tokens_per_step}")
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if not 0 <= self.outlier_channels < self.channels:
            raise ConfigError(f"outlier_channels must be in [0, channels), got {self.outlier_channels}")
        if self.outlier_scale < 1.0:
            raise ConfigError(f"outlier_scale must be >= 1, got {self.outlier_scale}")
        if not 0.0 <= self.drift_amplitude < 1.0:
            raise ConfigError(f"drift_amplitude must be in [0, 1), got {self.drift_amplitude}")
        if self.base_distribution not in ("gaussian", "laplace"):
            raise ConfigError(f"unknown base_distribution {self.base_distribution!r}")

    def to_json_dict(self) -> dict:
        return {
            "channels": self.channels,
            "tokens_per_step": self.tokens_per_step,
            "timesteps": self.timesteps,
            "outlier_channels": self.outlier_channels,
            "outlier_scale": self.outlier_scale,
            "drift_amplitude": self.drift_amplitude,
            "base_distribution": self.base_distribution,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SynthConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def outlier_indices(cfg: SynthConfig) -> np.ndarray:
    """The designated outlier channels, fixed per config seed, sorted."""
    if cfg.outlier_channels == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng([cfg.seed, _STREAM_STRUCTURE])
    picked = rng.choice(cfg.channels, size=cfg.outlier_channels, replace=False)
    return np.sort(picked)


def _background_profile(size: int, channels: int) -> np.ndarray:
    """Descending background scales: plateau, then a geometric ramp."""
    plateau = min(size, int(round(PLATEAU_FRACTION * channels)))
    ramp = size - plateau
    out = np.full(size, PLATEAU_SCALE)
    if ramp == 1:
        out[plateau] = RAMP_HI
    elif ramp > 1:
        steps = np.arange(ramp, dtype=np.float64) / (ramp - 1)
        out[plateau:] = RAMP_HI * (RAMP_LO / RAMP_HI) ** steps
    return out


def channel_scales(cfg: SynthConfig, t: int) -> np.ndarray:
    """Per-channel multiplicative scales at timestep t."""
    if not 0 <= t < cfg.timesteps:
        raise ConfigError(f"timestep {t} out of range [0, {cfg.timesteps})")
    scales = np.empty(cfg.channels)
    outliers = outlier_indices(cfg)
    background = np.setdiff1d(np.arange(cfg.channels), outliers)
    profile = _background_profile(background.size, cfg.channels)
    shuffle = np.random.default_rng([cfg.seed, _STREAM_SHUFFLE]).permutation(background.size)
    scales[background] = profile[shuffle]
    if outliers.size:
        c = outliers.size
        ladder = cfg.outlier_scale ** (1.0 - np.arange(c) / (2.0 * c))
        drift = 1.0 + cfg.drift_amplitude * np.sin(2.0 * np.pi * t / cfg.timesteps)
        scales[outliers] = ladder * drift
    return scales


def generate(cfg: SynthConfig, t: int, sample: int = 0, split: str = "calib") -> np.ndarray:
    """One activation batch (tokens_per_step x channels), deterministic per key.

    The key is (cfg.seed, split, sample, t). Channel structure (outlier set,
    background profile) depends on cfg.seed only, so every sample and split
    of one config describes the same layer.
    """
    if split not in _SPLIT_TAGS:
        raise ConfigError(f"split must be one of {sorted(_SPLIT_TAGS)}, got {split!r}")
    if sample < 0:
        raise ConfigError(f"sample must be >= 0, got {sample}")
    scales = channel_scales(cfg, t)
    rng = np.random.default_rng([cfg.seed, _STREAM_DATA, _SPLIT_TAGS[split], sample, t])
    shape = (cfg.tokens_per_step, cfg.channels)
    if cfg.base_distribution == "gaussian":
        noise = rng.standard_normal(shape)
    else:
        noise = rng.laplace(0.0, 1.0, size=shape)
    return noise * scales


def max_median_ratio(x) -> float:
    """max over channels of per-channel max-abs, divided by the channel median."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"need a non-empty 2-D matrix, got shape {x.shape}")
    maxabs = np.max(np.abs(x), axis=0)
    med = float(np.median(maxabs))
    if not med > 0.0:
        raise ValueError("max/median ratio undefined: median channel max-abs is zero")
    return float(np.max(maxabs) / med)
