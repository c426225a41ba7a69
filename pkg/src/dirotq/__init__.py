"""Rotation-based low-bit quantization workbench."""

from .calib import PcaBasis, SecondMomentAccumulator, accumulate, finalize_pca, new_accumulator
from .config import RunConfig, load_run_config
from .errors import ConfigError, DirotqError, NumericalError, ShapeError
from .gptq import GptqConfig, Hessian, build_hessian, gptq_quantize, project_hessian
from .judge import PairwiseResult, ScoreRecord, aggregate_runs, overall_score, pairwise
from .metrics import channel_error_decomposition, psnr_db, qsnr_db, r_sweep
from .quant import (
    FP4_WEIGHT,
    INT4_ACTIVATION,
    INT4_WEIGHT,
    INT8_WEIGHT,
    QuantSpec,
    QuantizedTensor,
    dequantize,
    quantize_dequantize,
)
from .rotation import FusedLayer, RotationBundle, build_rotation, forward, fuse_weights
from .synth import SynthConfig, generate, max_median_ratio

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DirotqError",
    "FP4_WEIGHT",
    "FusedLayer",
    "GptqConfig",
    "Hessian",
    "INT4_ACTIVATION",
    "INT4_WEIGHT",
    "INT8_WEIGHT",
    "NumericalError",
    "PairwiseResult",
    "PcaBasis",
    "QuantSpec",
    "QuantizedTensor",
    "RotationBundle",
    "RunConfig",
    "ScoreRecord",
    "SecondMomentAccumulator",
    "ShapeError",
    "SynthConfig",
    "accumulate",
    "aggregate_runs",
    "build_hessian",
    "build_rotation",
    "channel_error_decomposition",
    "dequantize",
    "finalize_pca",
    "forward",
    "fuse_weights",
    "generate",
    "gptq_quantize",
    "load_run_config",
    "max_median_ratio",
    "new_accumulator",
    "overall_score",
    "pairwise",
    "project_hessian",
    "psnr_db",
    "qsnr_db",
    "quantize_dequantize",
    "r_sweep",
]
