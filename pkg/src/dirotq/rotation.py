"""Combined rotation assembly, offline weight fusion, and the split forward.

The PCA basis U is split at column k into a high-variance part U_h and a
residual U_l. The residual is additionally mixed by a seeded random
orthogonal R, giving the combined basis V = [U_h | U_l R]. Because V is
orthogonal, inserting V V^T between activations and weights is exact; the
pipeline then keeps the k high-variance directions in full precision and
quantizes only the mixed residual, where the heavy-tailed channel structure
has been flattened.

Weights are folded through the basis offline (w_high = U_h^T W,
w_low = (U_l R)^T W, the latter quantized by RTN or Hessian-compensated
rounding). The forward pass computes the two branch products separately, so
per-branch signal-to-noise and the residual max/median statistic fall out
for free.

R is cached per (residual_dim, seed) and shared across layers: every layer
of a given width mixes its residual with the identical matrix. The cache is
guarded by a lock so concurrent builds stay safe; reads after the build
phase are lock-free copies of the same immutable array.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .calib import PcaBasis
from .errors import ConfigError, ShapeError
from .gptq import GptqConfig, Hessian, gptq_quantize
from .linalg import as_matrix, matmul, random_orthogonal
from .quant import QuantizedTensor, QuantSpec, dequantize, quantize_dequantize
from .synth import max_median_ratio

QSNR_CAP_DB = 300.0

_R_CACHE: dict[tuple[int, int], np.ndarray] = {}
_R_LOCK = threading.Lock()


def shared_residual_rotation(residual_dim: int, seed: int) -> np.ndarray:
    """The residual mixing matrix for (residual_dim, seed), built once."""
    if residual_dim < 1:
        raise ConfigError(f"residual_dim must be >= 1, got {residual_dim}")
    key = (residual_dim, seed)
    with _R_LOCK:
        r = _R_CACHE.get(key)
        if r is None:
            r = random_orthogonal(residual_dim, seed)
            r.setflags(write=False)
            _R_CACHE[key] = r
        return r


@dataclass
class RotationBundle:
    """Orthogonal basis [U_h | U_l R] with its split point."""

    v: np.ndarray
    rank_k: int
    r_seed: int
    residual_dim: int
    layer_id: str = ""

    @property
    def dim(self) -> int:
        return self.v.shape[0]

    @property
    def u_high(self) -> np.ndarray:
        return self.v[:, : self.rank_k]

    @property
    def v_low(self) -> np.ndarray:
        return self.v[:, self.rank_k :]


def build_rotation(pca: PcaBasis, r_seed: int) -> RotationBundle:
    m = pca.dim
    k = pca.rank_k
    if not 1 <= k <= m:
        raise ConfigError(f"rank_k must be in [1, {m}], got {k}")
    if k == m:
        # empty residual: the combined basis is the eigenbasis itself
        v = pca.basis.vectors
    else:
        r = shared_residual_rotation(m - k, r_seed)
        v = np.hstack([pca.u_high, matmul(pca.u_low, r)])
    return RotationBundle(v=v, rank_k=k, r_seed=r_seed, residual_dim=m - k, layer_id=pca.layer_id)


@dataclass
class ForwardDiagnostics:
    """Per-call branch quality: activation QSNRs and the residual outlier statistic."""

    high_qsnr_db: float
    low_qsnr_db: float
    xl_max_median_ratio: float | None


@dataclass
class FusedLayer:
    w_high: np.ndarray
    w_low_q: QuantizedTensor | None
    w_low_ref: np.ndarray
    rotation: RotationBundle
    act_spec: QuantSpec | None
    layer_id: str = ""

    @property
    def out_features(self) -> int:
        return self.w_high.shape[1]


def fuse_weights(
    rot: RotationBundle,
    w,
    weight_spec: QuantSpec | None = None,
    act_spec: QuantSpec | None = None,
    gptq_cfg: GptqConfig | None = None,
    hessian: Hessian | None = None,
    layer_id: str | None = None,
) -> FusedLayer:
    """Fold weights through the basis and quantize the residual block.

    weight_spec=None (and no gptq_cfg) keeps the residual weights exact,
    the pass-through mode used to check the rotation identity. When
    gptq_cfg is given it carries its own weight spec and needs the
    residual-branch hessian.
    """
    w = as_matrix(w, "w")
    if w.shape[0] != rot.dim:
        raise ShapeError(f"weights have {w.shape[0]} input rows, basis expects {rot.dim}")
    w_high = matmul(rot.u_high.T, w)
    w_low_ref = matmul(rot.v_low.T, w) if rot.residual_dim else np.zeros((0, w.shape[1]))

    if gptq_cfg is not None:
        if hessian is None:
            raise ConfigError("hessian-compensated weight rounding needs the residual hessian")
        w_low_q, _ = gptq_quantize(w_low_ref, hessian, gptq_cfg)
    elif weight_spec is not None:
        w_low_q, _ = quantize_dequantize(w_low_ref, weight_spec, group_axis=0)
    else:
        w_low_q = None

    return FusedLayer(
        w_high=w_high,
        w_low_q=w_low_q,
        w_low_ref=w_low_ref,
        rotation=rot,
        act_spec=act_spec,
        layer_id=rot.layer_id if layer_id is None else layer_id,
    )


def _qsnr_or_cap(reference: np.ndarray, approx: np.ndarray) -> float:
    # Diagnostics variant: degenerate (zero) signals report the cap instead
    # of rejecting, since a zero batch is a legal forward input.
    sig = float(np.sum(reference * reference))
    diff = reference - approx
    err = float(np.sum(diff * diff))
    if err == 0.0 or sig == 0.0:
        return QSNR_CAP_DB
    return min(QSNR_CAP_DB, 10.0 * np.log10(sig / err))


def forward(layer: FusedLayer, x, emulate_half: bool = False) -> tuple[np.ndarray, ForwardDiagnostics]:
    """Split-path product: y = x U_h w_high + Q(x U_l R) dequant(w_low).

    The two branch products are computed separately (never as one x V
    matmul) so the diagnostics describe exactly what the output saw.
    Activation quantization is dynamic: params are fitted per call, per
    token row.
    """
    x = as_matrix(x, "x")
    if x.shape[1] != layer.rotation.dim:
        raise ShapeError(f"x has {x.shape[1]} channels, layer expects {layer.rotation.dim}")

    x_h = matmul(x, layer.rotation.u_high)
    x_h_used = np.float16(x_h).astype(np.float64) if emulate_half else x_h
    w_h_used = np.float16(layer.w_high).astype(np.float64) if emulate_half else layer.w_high

    if layer.rotation.residual_dim:
        x_l = matmul(x, layer.rotation.v_low)
        if layer.act_spec is not None:
            _, x_l_used = quantize_dequantize(x_l, layer.act_spec, group_axis=1, emulate_half=emulate_half)
        else:
            x_l_used = x_l
        w_low = dequantize(layer.w_low_q) if layer.w_low_q is not None else layer.w_low_ref
        y = matmul(x_h_used, w_h_used) + matmul(x_l_used, w_low)
        low_db = _qsnr_or_cap(x_l, x_l_used)
        maxabs = np.max(np.abs(x_l), axis=0) if x_l.shape[0] else np.zeros(0)
        ratio = max_median_ratio(x_l) if maxabs.size and float(np.median(maxabs)) > 0.0 else None
    else:
        y = matmul(x_h_used, w_h_used)
        low_db = QSNR_CAP_DB
        ratio = None

    diag = ForwardDiagnostics(
        high_qsnr_db=_qsnr_or_cap(x_h, x_h_used),
        low_qsnr_db=low_db,
        xl_max_median_ratio=ratio,
    )
    return y, diag


MANIFEST_NAME = "manifest.json"


def save_fused_layer(layer: FusedLayer, directory) -> None:
    """Write a fused layer as binary tensors plus a manifest (relative paths only)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rot = layer.rotation
    tensorio.write_tensor(d / "v.drtq", rot.v)
    tensorio.write_tensor(d / "w_high.drtq", layer.w_high)
    tensorio.write_tensor(d / "w_low_ref.drtq", layer.w_low_ref)
    manifest = {
        "layer_id": layer.layer_id,
        "m": rot.dim,
        "n": layer.w_high.shape[1],
        "k": rot.rank_k,
        "r_seed": rot.r_seed,
        "act_spec": layer.act_spec.to_json_dict() if layer.act_spec else None,
        "weight_spec": layer.w_low_q.spec.to_json_dict() if layer.w_low_q else None,
    }
    if layer.w_low_q is not None:
        qt = layer.w_low_q
        tensorio.write_tensor(d / "codes.drtq", np.asarray(qt.codes, dtype=np.float64))
        tensorio.write_tensor(d / "scales.drtq", qt.scales)
        tensorio.write_tensor(d / "zero_points.drtq", np.asarray(qt.zero_points, dtype=np.float64))
        manifest["tensor_scale"] = qt.tensor_scale
        manifest["group_axis"] = qt.group_axis
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_fused_layer(directory) -> FusedLayer:
    d = Path(directory)
    manifest = json.loads((d / MANIFEST_NAME).read_text())
    m, n, k = manifest["m"], manifest["n"], manifest["k"]
    v = tensorio.read_tensor(d / "v.drtq")
    if v.shape != (m, m):
        raise ValueError(f"{d}: basis shape {v.shape} does not match manifest dim {m}")
    rot = RotationBundle(
        v=v, rank_k=k, r_seed=manifest["r_seed"], residual_dim=m - k, layer_id=manifest["layer_id"]
    )
    w_low_q = None
    if manifest["weight_spec"] is not None:
        spec = QuantSpec.from_json_dict(manifest["weight_spec"])
        codes = tensorio.read_tensor(d / "codes.drtq")
        if spec.family == "integer":
            codes = codes.astype(np.int64)
        w_low_q = QuantizedTensor(
            codes=codes,
            scales=tensorio.read_tensor(d / "scales.drtq"),
            zero_points=tensorio.read_tensor(d / "zero_points.drtq"),
            spec=spec,
            shape=(m - k, n),
            group_axis=manifest["group_axis"],
            tensor_scale=manifest["tensor_scale"],
        )
    act_spec = QuantSpec.from_json_dict(manifest["act_spec"]) if manifest["act_spec"] else None
    return FusedLayer(
        w_high=tensorio.read_tensor(d / "w_high.drtq"),
        w_low_q=w_low_q,
        w_low_ref=tensorio.read_tensor(d / "w_low_ref.drtq"),
        rotation=rot,
        act_spec=act_spec,
        layer_id=manifest["layer_id"],
    )
