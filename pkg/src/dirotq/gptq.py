"""Hessian-weighted weight rounding with blocked error compensation.

Rounding each input row of a weight matrix in isolation ignores how input
dimensions covary. This module minimizes the activation-weighted objective
trace((W - What)^T H' (W - What)) greedily: rows are quantized one at a time
in natural order, and the rounding error of each row is propagated into the
rows not yet quantized using rows of the upper Cholesky factor of the damped
inverse Hessian. Work is blocked so the expensive trailing update happens
once per block rather than once per row.

H comes from rotated residual activations (the branch whose weights actually
get quantized), either accumulated directly batch by batch or projected from
a raw second-moment sum through the residual basis.

No activation-order permutation is applied: rows are processed in natural
order so golden outputs stay stable. Group scales are fitted from the
original weights, not the compensated ones, which keeps grid fixed points
exact: a weight matrix already on its quantization grid passes through
unchanged because every rounding error is then exactly zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, ShapeError
from .linalg import as_matrix, matmul
from .quant import (
    QuantizedTensor,
    QuantSpec,
    decode_with,
    elementwise_scale_zero,
    encode_with,
    fit_params,
)


@dataclass(frozen=True)
class GptqConfig:
    spec: QuantSpec
    damping: float = 0.01
    block_size: int = 128

    def __post_init__(self):
        if not self.damping > 0.0:
            raise ConfigError(f"damping must be > 0, got {self.damping}")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")

    def to_json_dict(self) -> dict:
        return {"spec": self.spec.to_json_dict(), "damping": self.damping,
                "block_size": self.block_size}

    @classmethod
    def from_json_dict(cls, data: dict) -> "GptqConfig":
        return cls(spec=QuantSpec.from_json_dict(data["spec"]),
                   damping=float(data.get("damping", 0.01)),
                   block_size=int(data.get("block_size", 128)))


@dataclass
class Hessian:
    """Accumulated X^T X of the activations feeding the weights, plus row count."""

    h: np.ndarray
    sample_count: int


def build_hessian(batches) -> Hessian:
    """Sum X^T X over activation batches (rotated residual activations)."""
    batches = list(batches)
    if not batches:
        raise ValueError("need at least one activation batch to build a Hessian")
    first = as_matrix(batches[0], "batch")
    dim = first.shape[1]
    h = np.zeros((dim, dim))
    count = 0
    for b in batches:
        x = as_matrix(b, "batch")
        if x.shape[1] != dim:
            raise ShapeError(f"batch has {x.shape[1]} columns, expected {dim}")
        h += matmul(x.T, x)
        count += x.shape[0]
    return Hessian(h=h, sample_count=count)


def project_hessian(sum_xtx, v_low, sample_count: int) -> Hessian:
    """Rotated-residual Hessian (U_l R)^T (sum X^T X) (U_l R) from raw sums.

    Equivalent to build_hessian over every batch pre-multiplied by the
    residual basis, without a second pass over the data.
    """
    s = as_matrix(sum_xtx, "sum_xtx")
    v = as_matrix(v_low, "v_low")
    if s.shape[0] != v.shape[0]:
        raise ShapeError(f"second moment is {s.shape}, residual basis has {v.shape[0]} rows")
    h = matmul(v.T, matmul(s, v))
    return Hessian(h=(h + h.T) / 2.0, sample_count=sample_count)


def damped_hessian(hess: Hessian, damping: float) -> np.ndarray:
    """H + damping * mean(diag H) * I, the matrix the objective is taken against."""
    h = as_matrix(hess.h, "hessian")
    if h.shape[0] != h.shape[1]:
        raise ShapeError(f"hessian must be square, got {h.shape}")
    offset = damping * float(np.mean(np.diag(h)))
    return h + offset * np.eye(h.shape[0])


def gptq_quantize(w, hess: Hessian, cfg: GptqConfig) -> tuple[QuantizedTensor, np.ndarray]:
    """Quantize w (input-dim x output-dim) against the activation Hessian.

    Returns the code tensor (groups running down columns, matching weight
    layout) and the dequantized matrix. Deterministic for fixed inputs.
    """
    w = as_matrix(w, "w")
    m, n = w.shape
    if m == 0 or n == 0:
        from .quant import quantize_dequantize

        return quantize_dequantize(w, cfg.spec, group_axis=0)
    if hess.h.shape != (m, m):
        raise ShapeError(f"hessian is {hess.h.shape}, weights have {m} input rows")

    hd = damped_hessian(hess, cfg.damping)
    try:
        factor = scipy.linalg.cho_factor(hd, lower=True)
    except np.linalg.LinAlgError as exc:
        pivot = re.search(r"\d+", str(exc))
        where = f"pivot {pivot.group(0)}" if pivot else "an unknown pivot"
        raise NumericalError(f"Cholesky of the damped Hessian failed at {where}") from exc
    hinv = scipy.linalg.cho_solve(factor, np.eye(m))
    # Upper factor of the inverse: row j holds exactly the compensation
    # coefficients for the subproblem on rows j..m-1.
    u = scipy.linalg.cholesky(hinv, lower=False)

    params = fit_params(w, cfg.spec, group_axis=0)
    s, z = elementwise_scale_zero(cfg.spec, params, w.shape, group_axis=0)

    work = w.copy()
    code_dtype = np.int64 if cfg.spec.family == "integer" else np.float64
    codes = np.zeros(w.shape, dtype=code_dtype)
    for i1 in range(0, m, cfg.block_size):
        i2 = min(i1 + cfg.block_size, m)
        w1 = work[i1:i2].copy()
        err = np.zeros((i2 - i1, n))
        for j in range(i2 - i1):
            row = i1 + j
            crow = encode_with(cfg.spec, w1[j : j + 1], s[row : row + 1], z[row : row + 1])
            qrow = decode_with(cfg.spec, crow, s[row : row + 1], z[row : row + 1])
            e = (w1[j] - qrow[0]) / u[row, row]
            codes[row] = crow[0]
            w1[j] = qrow[0]
            if j + 1 < i2 - i1:
                w1[j + 1 :] -= np.outer(u[row, row + 1 : i2], e)
            err[j] = e
        work[i1:i2] = w1
        if i2 < m:
            work[i2:] -= u[i1:i2, i2:].T @ err

    qt = QuantizedTensor(
        codes=codes,
        scales=params.scales,
        zero_points=params.zero_points,
        spec=cfg.spec,
        shape=(m, n),
        group_axis=0,
        tensor_scale=params.tensor_scale,
    )
    return qt, work
