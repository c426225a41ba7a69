"""Run configuration: one frozen object driving every pipeline command.

Sources merge in fixed precedence: built-in defaults, then a JSON config
file, then the DIRQ_SEED environment variable, then explicit CLI flags.
All randomness anywhere in a run is derived from fields of this object,
so reruns with equal configs are bitwise reproducible.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .gptq import GptqConfig
from .quant import INT4_ACTIVATION, INT4_WEIGHT, QuantSpec
from .synth import SynthConfig

SEED_ENV_VAR = "DIRQ_SEED"

_DEFAULT_GPTQ = GptqConfig(spec=INT4_WEIGHT, damping=0.01, block_size=128)


@dataclass(frozen=True)
class RunConfig:
    # rotation split fraction and residual rotation seed
    r: float = 0.10
    r_seed: int = 1234
    # quantization targets; None disables that branch's quantization
    act_spec: QuantSpec | None = INT4_ACTIVATION
    weight_spec: QuantSpec | None = INT4_WEIGHT
    # hessian-compensated weight rounding, on by default; None falls back to
    # plain nearest rounding of the residual weights
    gptq: GptqConfig | None = _DEFAULT_GPTQ
    # synthetic activation source and calibration budget
    synth: SynthConfig = SynthConfig()
    calib_samples: int = 128
    timesteps: int = 20
    pca_damping: float = 0.01
    # model stand-in: independent layers with seeded Gaussian weights
    layers: int = 2
    out_features: int = 192
    # evaluation pass; eval_timesteps None means every timestep
    eval_samples: int = 1
    eval_timesteps: tuple[int, ...] | None = None
    output_dir: str = "run_out"

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ConfigError(f"r must lie in (0, 1), got {self.r}")
        if self.calib_samples < 1:
            raise ConfigError(f"calib_samples must be >= 1, got {self.calib_samples}")
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.out_features < 1:
            raise ConfigError(f"out_features must be >= 1, got {self.out_features}")
        if self.eval_samples < 1:
            raise ConfigError(f"eval_samples must be >= 1, got {self.eval_samples}")
        if self.pca_damping < 0.0:
            raise ConfigError(f"pca_damping must be >= 0, got {self.pca_damping}")
        # the data generator owns the timestep schedule; keep it in lockstep
        if self.synth.timesteps != self.timesteps:
            object.__setattr__(self, "synth",
                               dataclasses.replace(self.synth, timesteps=self.timesteps))
        if self.eval_timesteps is not None:
            steps = tuple(int(t) for t in self.eval_timesteps)
            if not steps:
                raise ConfigError("eval_timesteps must be non-empty when given")
            for t in steps:
                if not 0 <= t < self.timesteps:
                    raise ConfigError(f"eval timestep {t} outside [0, {self.timesteps})")
            object.__setattr__(self, "eval_timesteps", steps)

    def timesteps_to_eval(self) -> tuple[int, ...]:
        if self.eval_timesteps is not None:
            return self.eval_timesteps
        return tuple(range(self.timesteps))

    def to_json_dict(self) -> dict:
        return {
            "r": self.r,
            "r_seed": self.r_seed,
            "act_spec": None if self.act_spec is None else self.act_spec.to_json_dict(),
            "weight_spec": None if self.weight_spec is None else self.weight_spec.to_json_dict(),
            "gptq": None if self.gptq is None else self.gptq.to_json_dict(),
            "synth": self.synth.to_json_dict(),
            "calib_samples": self.calib_samples,
            "timesteps": self.timesteps,
            "pca_damping": self.pca_damping,
            "layers": self.layers,
            "out_features": self.out_features,
            "eval_samples": self.eval_samples,
            "eval_timesteps": None if self.eval_timesteps is None else list(self.eval_timesteps),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"config must be a JSON object, got {type(data).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs: dict = {}
        for key, value in data.items():
            if key in ("act_spec", "weight_spec"):
                kwargs[key] = None if value is None else QuantSpec.from_json_dict(value)
            elif key == "gptq":
                if value is None:
                    kwargs[key] = None
                else:
                    gptq = dict(value)
                    if "spec" not in gptq:
                        # convenient shorthand: reuse the weight spec for rounding
                        ws = kwargs.get("weight_spec", data.get("weight_spec"))
                        if isinstance(ws, dict):
                            ws = QuantSpec.from_json_dict(ws)
                        gptq["spec"] = (ws if isinstance(ws, QuantSpec) else INT4_WEIGHT).to_json_dict()
                    kwargs[key] = GptqConfig.from_json_dict(gptq)
            elif key == "synth":
                kwargs[key] = SynthConfig.from_json_dict(value)
            elif key == "eval_timesteps":
                kwargs[key] = None if value is None else tuple(int(t) for t in value)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_run_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    return RunConfig.from_json_dict(data)


def apply_env_overrides(cfg: RunConfig, env=None) -> RunConfig:
    """Fold environment overrides into cfg; DIRQ_SEED replaces the data seed."""
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV_VAR)
    if raw is None:
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None
    return dataclasses.replace(cfg, synth=dataclasses.replace(cfg.synth, seed=seed))
