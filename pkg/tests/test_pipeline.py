import json
from pathlib import Path

import numpy as np
import pytest

from dirotq.config import RunConfig
from dirotq.errors import ConfigError
from dirotq.metrics import read_qsnr_reports
from dirotq.pipeline import (
    layer_synth_config,
    layer_weights,
    load_basis,
    run_calibrate,
    run_eval,
    run_quantize,
    run_sweep,
)
from dirotq.quant import dequantize, quant_error
from dirotq.rotation import load_fused_layer
from dirotq.synth import SynthConfig


def small_config(tmp_path, **overrides):
    base = dict(
        synth=SynthConfig(channels=64, tokens_per_step=64, outlier_channels=6,
                          outlier_scale=30.0, seed=13),
        calib_samples=4,
        timesteps=4,
        layers=2,
        out_features=48,
        output_dir=str(tmp_path / "run"),
    )
    base.update(overrides)
    return RunConfig(**base)


def test_calibrate_writes_bases(tmp_path):
    cfg = small_config(tmp_path)
    summary = run_calibrate(cfg)
    assert [l["layer_id"] for l in summary["layers"]] == ["layer00", "layer01"]
    for lid in ("layer00", "layer01"):
        basis_dir = Path(cfg.output_dir) / "basis" / lid
        pca = load_basis(basis_dir)
        assert pca.dim == 64
        assert pca.rank_k == round(0.10 * 64)
        assert pca.layer_id == lid
        assert pca.token_count == 4 * 4 * 64
    assert json.loads((Path(cfg.output_dir) / "config.json").read_text())["layers"] == 2


def test_calibrate_rerun_is_bitwise_identical(tmp_path):
    cfg_a = small_config(tmp_path, output_dir=str(tmp_path / "a"))
    cfg_b = small_config(tmp_path, output_dir=str(tmp_path / "b"))
    run_calibrate(cfg_a)
    run_calibrate(cfg_b)
    for rel in ("basis/layer00/basis_vectors.drtq", "basis/layer01/second_moment.drtq"):
        assert (Path(cfg_a.output_dir) / rel).read_bytes() == (Path(cfg_b.output_dir) / rel).read_bytes()


def test_layer_streams_and_weights_are_distinct(tmp_path):
    cfg = small_config(tmp_path)
    assert layer_synth_config(cfg, 0).seed != layer_synth_config(cfg, 1).seed
    w0, w1 = layer_weights(cfg, 0), layer_weights(cfg, 1)
    assert w0.shape == (64, 48)
    assert not np.array_equal(w0, w1)
    np.testing.assert_array_equal(w0, layer_weights(cfg, 0))


def test_quantize_requires_bases(tmp_path):
    cfg = small_config(tmp_path)
    with pytest.raises(ConfigError, match="calibrate"):
        run_quantize(cfg)


def test_quantize_summary_matches_recomputation(tmp_path):
    cfg = small_config(tmp_path)
    run_calibrate(cfg)
    summary = run_quantize(cfg)
    assert set(summary["layers"]) == {"layer00", "layer01"}
    for lid, entry in summary["layers"].items():
        fused = load_fused_layer(Path(cfg.output_dir) / "fused" / lid)
        assert entry["quantized"] is True
        recomputed = quant_error(fused.w_low_ref, dequantize(fused.w_low_q))
        assert entry["weight_quant_error"] == recomputed
        assert entry["weight_quant_error"] > 0.0
    on_disk = json.loads((Path(cfg.output_dir) / "quantize_summary.json").read_text())
    assert on_disk["layers"] == summary["layers"]


def test_quantize_pass_through_reports_zero_error(tmp_path):
    cfg = small_config(tmp_path, weight_spec=None, gptq=None)
    run_calibrate(cfg)
    summary = run_quantize(cfg)
    for entry in summary["layers"].values():
        assert entry["weight_quant_error"] == 0.0
        assert entry["quantized"] is False


def test_eval_requires_fused_layers(tmp_path):
    cfg = small_config(tmp_path)
    run_calibrate(cfg)
    with pytest.raises(ConfigError, match="quantize"):
        run_eval(cfg)


def test_eval_reports_cover_grid_and_beat_baseline(tmp_path):
    cfg = small_config(tmp_path)
    run_calibrate(cfg)
    run_quantize(cfg)
    result = run_eval(cfg)
    reports = read_qsnr_reports(Path(cfg.output_dir) / "qsnr_reports.jsonl")
    # layers x timesteps x {dirotq, rtn} x {output, input}
    assert len(reports) == 2 * 4 * 2 * 2 == result["reports"]
    by_key = {(r.layer_id, r.timestep, r.method_label, r.signal): r.qsnr_db for r in reports}
    for lid in ("layer00", "layer01"):
        for t in range(4):
            gap = by_key[(lid, t, "dirotq", "output")] - by_key[(lid, t, "rtn_baseline", "output")]
            assert gap > 0.0, f"{lid} t={t} gap {gap}"
            assert by_key[(lid, t, "dirotq", "input")] > by_key[(lid, t, "rtn_baseline", "input")]
    rot = next(r for r in reports if r.method_label == "dirotq" and r.signal == "output")
    assert "low_qsnr_db" in rot.branch_breakdown


def test_end_to_end_determinism(tmp_path):
    outputs = []
    for name in ("first", "second"):
        cfg = small_config(tmp_path, output_dir=str(tmp_path / name))
        run_calibrate(cfg)
        run_quantize(cfg)
        run_eval(cfg)
        outputs.append(Path(cfg.output_dir))
    a, b = outputs
    for rel in ("qsnr_reports.jsonl", "quantize_summary.json",
                "fused/layer00/codes.drtq", "fused/layer01/w_high.drtq"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_sweep_writes_table(tmp_path):
    cfg = small_config(tmp_path, layers=1)
    rows = run_sweep(cfg, [0.05, 0.10, 0.20])
    assert [r for r, _ in rows] == [0.05, 0.10, 0.20]
    lines = (Path(cfg.output_dir) / "r_sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "r,qsnr_db" and len(lines) == 4
