"""Pipeline stages: calibrate, quantize, eval, sweep over a synthetic model.

The model stand-in is a stack of independent linear layers with seeded
Gaussian weights, each fed by its own synthetic activation stream.  All
stages share one RunConfig; artifacts land under config.output_dir:

    config.json               snapshot of the driving config
    basis/<layer>/            second-moment accumulator + eigenbasis
    fused/<layer>/            rotation bundle + fused, quantized weights
    quantize_summary.json     per-layer weight quantization error
    qsnr_reports.jsonl        one report per (layer, timestep, method, signal)
    r_sweep.csv               rank-fraction sweep table

Per-layer work items are independent; stages run them in layer-index
order so emitted reports and files are deterministically ordered.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from . import tensorio
from .calib import (
    PcaBasis,
    SecondMomentAccumulator,
    accumulate,
    finalize_pca,
    load_accumulator,
    new_accumulator,
    save_accumulator,
)
from .config import RunConfig
from .errors import ConfigError
from .gptq import project_hessian
from .linalg import EigenDecomposition
from .metrics import QsnrReport, qsnr_db, r_sweep, write_qsnr_reports, write_sweep_csv
from .quant import dequantize, quant_error, quantize_dequantize
from .rotation import build_rotation, forward, fuse_weights, load_fused_layer, save_fused_layer
from .synth import SynthConfig, generate

METHOD_ROTATED = "dirotq"
METHOD_BASELINE = "rtn_baseline"

BASIS_DIR = "basis"
FUSED_DIR = "fused"
CONFIG_FILE = "config.json"
QUANT_SUMMARY_FILE = "quantize_summary.json"
REPORTS_FILE = "qsnr_reports.jsonl"
SWEEP_FILE = "r_sweep.csv"

BASIS_VECTORS = "basis_vectors.drtq"
BASIS_VALUES = "basis_values.drtq"
BASIS_META = "basis.json"

# stream tags keeping per-layer data, weights, and anything future disjoint
_LAYER_DATA_TAG = 101
_LAYER_WEIGHT_TAG = 202


def layer_ids(cfg: RunConfig) -> list[str]:
    return [f"layer{i:02d}" for i in range(cfg.layers)]


def layer_synth_config(cfg: RunConfig, index: int) -> SynthConfig:
    """Each layer sees its own activation stream, derived from the run seed."""
    seed = int(np.random.SeedSequence((cfg.synth.seed, _LAYER_DATA_TAG, index)).generate_state(1, np.uint64)[0])
    return dataclasses.replace(cfg.synth, seed=seed)


def layer_weights(cfg: RunConfig, index: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.synth.seed, _LAYER_WEIGHT_TAG, index)))
    m = cfg.synth.channels
    # 1/sqrt(fan_in) keeps outputs O(1) regardless of width
    return rng.standard_normal((m, cfg.out_features)) / np.sqrt(m)


def _batch(lcfg: SynthConfig, t: int, samples: int, split: str) -> np.ndarray:
    return np.concatenate([generate(lcfg, t, sample=s, split=split) for s in range(samples)], axis=0)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def save_basis(pca: PcaBasis, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(d / BASIS_VECTORS, pca.basis.vectors)
    tensorio.write_tensor(d / BASIS_VALUES, pca.basis.values)
    _write_json(d / BASIS_META, {
        "layer_id": pca.layer_id, "dim": pca.dim, "rank_k": pca.rank_k,
        "rank_ratio": pca.rank_ratio, "damping": pca.damping,
        "token_count": pca.token_count,
    })


def load_basis(directory) -> PcaBasis:
    d = Path(directory)
    if not (d / BASIS_META).exists():
        raise ConfigError(f"no basis found at {d}; run calibrate first")
    meta = json.loads((d / BASIS_META).read_text(encoding="utf-8"))
    vectors = tensorio.read_tensor(d / BASIS_VECTORS).astype(np.float64)
    values = tensorio.read_tensor(d / BASIS_VALUES).astype(np.float64)
    dim = int(meta["dim"])
    if vectors.shape != (dim, dim) or values.shape != (dim,):
        raise ValueError(f"{d}: basis shapes {vectors.shape}/{values.shape} do not match dim {dim}")
    return PcaBasis(basis=EigenDecomposition(vectors=vectors, values=values),
                    rank_k=int(meta["rank_k"]), rank_ratio=float(meta["rank_ratio"]),
                    damping=float(meta["damping"]), layer_id=meta["layer_id"],
                    token_count=int(meta["token_count"]))


def run_calibrate(cfg: RunConfig) -> dict:
    """Accumulate calibration activations per layer and finalize the bases."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / CONFIG_FILE, cfg.to_json_dict())
    layers = []
    for index, lid in enumerate(layer_ids(cfg)):
        lcfg = layer_synth_config(cfg, index)
        acc = new_accumulator(lcfg.channels, layer_id=lid)
        for t in range(cfg.timesteps):
            acc = accumulate(acc, _batch(lcfg, t, cfg.calib_samples, "calib"))
        basis_dir = out / BASIS_DIR / lid
        save_accumulator(acc, basis_dir)
        pca = finalize_pca(acc, rank_ratio=cfg.r, damping=cfg.pca_damping)
        save_basis(pca, basis_dir)
        layers.append({"layer_id": lid, "dim": pca.dim, "rank_k": pca.rank_k,
                       "token_count": acc.token_count})
    return {"output_dir": str(out), "layers": layers}


def run_quantize(cfg: RunConfig) -> dict:
    """Rotate, fuse, and quantize every layer's weights from saved bases."""
    out = Path(cfg.output_dir)
    summary_layers = {}
    for index, lid in enumerate(layer_ids(cfg)):
        basis_dir = out / BASIS_DIR / lid
        pca = load_basis(basis_dir)
        acc = load_accumulator(basis_dir)
        bundle = build_rotation(pca, cfg.r_seed)
        hessian = None
        if cfg.gptq is not None and bundle.residual_dim:
            hessian = project_hessian(acc.sum_xtx, bundle.v_low, acc.token_count)
        fused = fuse_weights(bundle, layer_weights(cfg, index),
                             weight_spec=cfg.weight_spec, act_spec=cfg.act_spec,
                             gptq_cfg=cfg.gptq, hessian=hessian, layer_id=lid)
        save_fused_layer(fused, out / FUSED_DIR / lid)
        if fused.w_low_q is None:
            weight_error = 0.0
        else:
            weight_error = quant_error(fused.w_low_ref, dequantize(fused.w_low_q))
        summary_layers[lid] = {"weight_quant_error": weight_error,
                               "rank_k": bundle.rank_k,
                               "residual_dim": bundle.residual_dim,
                               "quantized": fused.w_low_q is not None}
    # the on-disk summary holds only content, so reruns into different
    # directories stay byte-identical
    _write_json(out / QUANT_SUMMARY_FILE, {"layers": summary_layers})
    return {"layers": summary_layers, "output_dir": str(out)}


def rtn_baseline_forward(x: np.ndarray, w: np.ndarray, act_spec, weight_spec) -> np.ndarray:
    """Unrotated reference path: round activations and weights to nearest."""
    x_hat = x if act_spec is None else quantize_dequantize(x, act_spec, group_axis=1)[1]
    w_hat = w if weight_spec is None else quantize_dequantize(w, weight_spec, group_axis=0)[1]
    return np.matmul(x_hat, w_hat)


def _input_side_db(x: np.ndarray, x_hat: np.ndarray) -> float:
    return qsnr_db(x, x_hat)


def run_eval(cfg: RunConfig) -> dict:
    """Score fused layers against exact products; emit per-point reports."""
    out = Path(cfg.output_dir)
    reports: list[QsnrReport] = []
    for index, lid in enumerate(layer_ids(cfg)):
        fused_dir = out / FUSED_DIR / lid
        if not fused_dir.exists():
            raise ConfigError(f"no fused layer at {fused_dir}; run quantize first")
        fused = load_fused_layer(fused_dir)
        w = layer_weights(cfg, index)
        lcfg = layer_synth_config(cfg, index)
        k = fused.rotation.rank_k
        for t in cfg.timesteps_to_eval():
            x = _batch(lcfg, t, cfg.eval_samples, "eval")
            exact = np.matmul(x, w)

            y_rot, diag = forward(fused, x)
            breakdown = {"high_qsnr_db": diag.high_qsnr_db, "low_qsnr_db": diag.low_qsnr_db}
            if diag.xl_max_median_ratio is not None:
                breakdown["xl_max_median_ratio"] = diag.xl_max_median_ratio
            reports.append(QsnrReport(lid, t, METHOD_ROTATED, qsnr_db(exact, y_rot),
                                      signal="output", branch_breakdown=breakdown))

            y_rtn = rtn_baseline_forward(x, w, cfg.act_spec, cfg.weight_spec)
            reports.append(QsnrReport(lid, t, METHOD_BASELINE, qsnr_db(exact, y_rtn),
                                      signal="output"))

            # input-side view: how well the dequantized activations match
            x_rot = np.matmul(x, fused.rotation.v)
            if cfg.act_spec is None:
                rot_in_db = base_in_db = qsnr_db(x, x)
            else:
                x_low_hat = quantize_dequantize(x_rot[:, k:], cfg.act_spec, group_axis=1)[1]
                rot_in_db = _input_side_db(x_rot, np.hstack([x_rot[:, :k], x_low_hat]))
                base_in_db = _input_side_db(x, quantize_dequantize(x, cfg.act_spec, group_axis=1)[1])
            reports.append(QsnrReport(lid, t, METHOD_ROTATED, rot_in_db, signal="input"))
            reports.append(QsnrReport(lid, t, METHOD_BASELINE, base_in_db, signal="input"))
    path = out / REPORTS_FILE
    write_qsnr_reports(path, reports)
    return {"reports": len(reports), "path": str(path)}


def run_sweep(cfg: RunConfig, r_values) -> list[tuple[float, float]]:
    """Rank-fraction sweep on the first layer's stream; writes the CSV table."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lcfg = layer_synth_config(cfg, 0)
    calib = [_batch(lcfg, t, cfg.calib_samples, "calib") for t in range(cfg.timesteps)]
    evalb = [_batch(lcfg, t, cfg.eval_samples, "eval") for t in cfg.timesteps_to_eval()]
    rows = r_sweep(calib, evalb, layer_weights(cfg, 0), r_values,
                   act_spec=cfg.act_spec, weight_spec=cfg.weight_spec,
                   gptq_cfg=cfg.gptq, r_seed=cfg.r_seed, damping=cfg.pca_damping)
    write_sweep_csv(out / SWEEP_FILE, rows)
    return rows
