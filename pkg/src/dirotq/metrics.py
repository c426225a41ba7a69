"""Quantization metrology: QSNR/PSNR, error decomposition, rank sweeps.

QSNR here is signal power over error power in decibels,
10*log10(||X||_F^2 / ||X - Xhat||_F^2), capped at 300 dB so exact
reconstructions stay serializable. Reports are labeled with which signal
they describe (a layer's input activations or its output product), since
both views are useful and they differ.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calib import accumulate, finalize_pca, new_accumulator
from .errors import ConfigError, ShapeError
from .gptq import GptqConfig, project_hessian
from .linalg import as_matrix
from .quant import QuantSpec, per_channel_error, quantize_dequantize
from .rotation import build_rotation, forward, fuse_weights

DB_CAP = 300.0


def qsnr_db(reference, approx) -> float:
    """Signal-to-quantization-noise ratio in dB, capped at 300."""
    ref = as_matrix(reference, "reference")
    app = as_matrix(approx, "approx")
    if ref.shape != app.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {app.shape}")
    signal = float(np.sum(ref * ref))
    if signal == 0.0:
        raise ValueError("QSNR undefined for an all-zero reference")
    diff = ref - app
    error = float(np.sum(diff * diff))
    if error == 0.0:
        return DB_CAP
    return min(DB_CAP, 10.0 * float(np.log10(signal / error)))


def psnr_db(reference, approx, max_value: float) -> float:
    """Peak signal-to-noise ratio against a stated peak, capped at 300."""
    ref = as_matrix(reference, "reference")
    app = as_matrix(approx, "approx")
    if ref.shape != app.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {app.shape}")
    if not max_value > 0.0:
        raise ValueError(f"max_value must be > 0, got {max_value}")
    diff = ref - app
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return DB_CAP
    return min(DB_CAP, 10.0 * float(np.log10(max_value * max_value / mse)))


@dataclass
class QsnrReport:
    """One measured ratio for (layer, timestep, method), plus branch detail.

    signal says what the ratio describes: "output" for the layer product
    y vs the exact XW, "input" for the residual-branch activations.
    """

    layer_id: str
    timestep: int
    method_label: str
    qsnr_db: float
    signal: str = "output"
    branch_breakdown: dict | None = field(default=None)

    def __post_init__(self):
        if not np.isfinite(self.qsnr_db) or self.qsnr_db > DB_CAP:
            raise ValueError(f"qsnr_db must be finite and <= {DB_CAP}, got {self.qsnr_db}")

    def to_json_dict(self) -> dict:
        out = {
            "layer_id": self.layer_id,
            "timestep": self.timestep,
            "method_label": self.method_label,
            "qsnr_db": self.qsnr_db,
            "signal": self.signal,
        }
        if self.branch_breakdown is not None:
            out["branch_breakdown"] = self.branch_breakdown
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "QsnrReport":
        return cls(
            layer_id=data["layer_id"],
            timestep=data["timestep"],
            method_label=data["method_label"],
            qsnr_db=data["qsnr_db"],
            signal=data.get("signal", "output"),
            branch_breakdown=data.get("branch_breakdown"),
        )


def write_qsnr_reports(path, reports) -> None:
    """One JSON object per line, keys sorted for byte-stable output."""
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_json_dict(), sort_keys=True) + "\n")


def read_qsnr_reports(path) -> list[QsnrReport]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(QsnrReport.from_json_dict(json.loads(line)))
    return out


def channel_error_decomposition(
    x_rot,
    spec_high: QuantSpec | None,
    spec_low: QuantSpec,
    k: int,
) -> tuple[np.ndarray, float]:
    """Squared error per rotated channel under the mixed-precision split.

    The first k channels are treated with spec_high (exactly zero error when
    spec_high is None, the kept-in-full-precision case); the rest with
    spec_low. The returned total is the sum of the vector, an exact identity
    rather than an independently computed Frobenius norm.
    """
    x = as_matrix(x_rot, "x_rot")
    cols = x.shape[1]
    if not 0 <= k <= cols:
        raise ConfigError(f"k must be in [0, {cols}], got {k}")
    high = x[:, :k]
    low = x[:, k:]
    if spec_high is None or k == 0:
        high_err = np.zeros(k)
    else:
        _, high_hat = quantize_dequantize(high, spec_high, group_axis=1)
        high_err = per_channel_error(high, high_hat)
    if low.shape[1] == 0:
        low_err = np.zeros(0)
    else:
        _, low_hat = quantize_dequantize(low, spec_low, group_axis=1)
        low_err = per_channel_error(low, low_hat)
    per_channel = np.concatenate([high_err, low_err])
    return per_channel, float(per_channel.sum())


def r_sweep(
    calib_batches,
    eval_batches,
    weights,
    r_values,
    act_spec: QuantSpec | None,
    weight_spec: QuantSpec | None,
    gptq_cfg: GptqConfig | None = None,
    r_seed: int = 1234,
    damping: float = 0.01,
) -> list[tuple[float, float]]:
    """Output-side QSNR of the full split pipeline at each rank ratio.

    Each r runs the whole chain: accumulate calibration batches, finalize
    the basis at that r, build the rotation, fuse and quantize the weights,
    then score forward outputs against the exact product on the eval
    batches (pooled signal and error over all of them).
    """
    r_values = [float(r) for r in r_values]
    if not r_values:
        raise ConfigError("r_values must not be empty")
    if any(not 0.0 < r < 1.0 for r in r_values):
        raise ConfigError(f"every r must be in (0, 1), got {r_values}")
    if sorted(r_values) != r_values:
        raise ConfigError("r_values must be sorted ascending")

    calib_batches = [as_matrix(b, "calib batch") for b in calib_batches]
    eval_batches = [as_matrix(b, "eval batch") for b in eval_batches]
    w = as_matrix(weights, "weights")
    if not calib_batches or not eval_batches:
        raise ConfigError("need at least one calibration and one eval batch")

    dim = w.shape[0]
    acc = new_accumulator(dim)
    for b in calib_batches:
        acc = accumulate(acc, b)

    rows = []
    for r in r_values:
        pca = finalize_pca(acc, rank_ratio=r, damping=damping)
        bundle = build_rotation(pca, r_seed)
        hessian = None
        if gptq_cfg is not None and bundle.residual_dim:
            hessian = project_hessian(acc.sum_xtx, bundle.v_low, acc.token_count)
        layer = fuse_weights(
            bundle, w, weight_spec=weight_spec, act_spec=act_spec, gptq_cfg=gptq_cfg, hessian=hessian
        )
        signal = 0.0
        error = 0.0
        for x in eval_batches:
            exact = x @ w
            y, _ = forward(layer, x)
            signal += float(np.sum(exact * exact))
            diff = exact - y
            error += float(np.sum(diff * diff))
        db = DB_CAP if error == 0.0 else min(DB_CAP, 10.0 * float(np.log10(signal / error)))
        rows.append((r, db))
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r", "qsnr_db"])
        for r, db in rows:
            writer.writerow([f"{r:.6g}", f"{db:.12g}"])
