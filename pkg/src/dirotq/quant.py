"""Uniform integer and 4-bit float quantization with group-wise scales.

The core operation is fake quantization: values are mapped to a small code
grid and immediately dequantized, so downstream arithmetic sees exactly the
precision loss a low-bit kernel would produce while staying in float64.

Integer formats follow the clip(round((x - z) / s)) * s + z recipe with round
half to even. Symmetric mode uses z = 0 and s = max|group| / q_max over the
signed code range [-(2^(b-1) - 1), 2^(b-1) - 1]; asymmetric mode uses
z = min(group) and s = range / (2^b - 1) over [0, 2^b - 1]. A group with no
signal (all zeros, or zero range) gets scale 1 so dequantization is exact.

The float4 family emulates a hardware-style 4-bit float: codes live on the
15-point E2M1 value grid {0, +-0.5, +-1, +-1.5, +-2, +-3, +-4, +-6}, each
group of 16 carries a scale snapped to the nearest FP8-E4M3 representable
value, and one per-tensor real scale normalizes the largest raw group scale
to the E4M3 maximum of 448.

Group shapes by granularity (``group_axis`` says which way per-group chunks
run; activations chunk within rows, weights within columns):

    per_tensor    one group covering the whole matrix, scales (1, 1)
    per_token     one group per row, scales (rows, 1)
    per_channel   one group per column, scales (1, cols)
    per_group     contiguous chunks of ``group_size`` along ``group_axis``;
                  a ragged final chunk is its own group with its own scale
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .linalg import as_matrix

FAMILIES = ("integer", "float4")
MODES = ("symmetric", "asymmetric")
GRANULARITIES = ("per_tensor", "per_channel", "per_token", "per_group")
SCALE_FORMATS = ("real16_emulated", "fp8_e4m3_emulated")

E2M1_MAX = 6.0
E4M3_MAX = 448.0
E4M3_MIN_POSITIVE = 2.0**-9

# Signed E2M1 value grid with mantissa-bit parity for tie breaking. Every
# adjacent pair has exactly one even-mantissa member.
_E2M1_GRID = np.array([-6.0, -4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0])
_E2M1_EVEN = np.isin(_E2M1_GRID, [0.0, 1.0, 2.0, 4.0, -1.0, -2.0, -4.0])


def _e4m3_positive_grid():
    vals, even = [], []
    for m in range(1, 8):  # subnormals: 2^-6 * m/8
        vals.append(2.0**-6 * (m / 8.0))
        even.append(m % 2 == 0)
    for e in range(1, 16):
        for m in range(8):
            if e == 15 and m == 7:
                continue  # NaN encoding, not a value
            vals.append(2.0 ** (e - 7) * (1.0 + m / 8.0))
            even.append(m % 2 == 0)
    return np.array(vals), np.array(even, dtype=bool)


_E4M3_GRID, _E4M3_EVEN = _e4m3_positive_grid()


@dataclass(frozen=True)
class QuantSpec:
    """Format descriptor for one quantization decision."""

    bits: int
    family: str = "integer"
    mode: str = "symmetric"
    granularity: str = "per_tensor"
    group_size: int = 64
    scale_format: str = "real16_emulated"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.scale_format not in SCALE_FORMATS:
            raise ConfigError(f"unknown scale_format {self.scale_format!r}")
        if self.family == "integer" and self.bits not in (4, 8):
            raise ConfigError(f"integer bits must be 4 or 8, got {self.bits}")
        if self.family == "float4":
            if self.bits != 4:
                raise ConfigError(f"float4 bits must be 4, got {self.bits}")
            if self.mode != "symmetric":
                raise ConfigError("float4 is symmetric only")
            if self.scale_format != "fp8_e4m3_emulated":
                raise ConfigError("float4 requires fp8_e4m3_emulated scales")
        if self.granularity == "per_group" and self.group_size < 1:
            raise ConfigError(f"group_size must be >= 1, got {self.group_size}")

    def q_range(self) -> tuple[int, int]:
        if self.family != "integer":
            raise ConfigError("q_range is defined for the integer family only")
        if self.mode == "symmetric":
            qmax = 2 ** (self.bits - 1) - 1
            return -qmax, qmax
        return 0, 2**self.bits - 1

    def to_json_dict(self) -> dict:
        return {
            "bits": self.bits,
            "family": self.family,
            "mode": self.mode,
            "granularity": self.granularity,
            "group_size": self.group_size,
            "scale_format": self.scale_format,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "QuantSpec":
        known = {f: data[f] for f in ("bits", "family", "mode", "granularity", "group_size", "scale_format") if f in data}
        if "bits" not in known:
            raise ConfigError("quant spec needs at least 'bits'")
        return cls(**known)


# The default W4A4 pairing: dynamic asymmetric activations, symmetric weights.
INT4_ACTIVATION = QuantSpec(bits=4, mode="asymmetric", granularity="per_group", group_size=64)
INT4_WEIGHT = QuantSpec(bits=4, mode="symmetric", granularity="per_group", group_size=64)
INT8_WEIGHT = QuantSpec(bits=8, mode="symmetric", granularity="per_channel")
FP4_WEIGHT = QuantSpec(
    bits=4, family="float4", granularity="per_group", group_size=16, scale_format="fp8_e4m3_emulated"
)


@dataclass
class QuantParams:
    """Fitted scales and zero points for one (matrix, spec, axis) triple."""

    scales: np.ndarray
    zero_points: np.ndarray
    tensor_scale: float = 1.0


@dataclass
class QuantizedTensor:
    """Codes plus the layout metadata needed to dequantize them."""

    codes: np.ndarray
    scales: np.ndarray
    zero_points: np.ndarray
    spec: QuantSpec
    shape: tuple[int, int]
    group_axis: int = 1
    tensor_scale: float = 1.0

    def params(self) -> QuantParams:
        return QuantParams(self.scales, self.zero_points, self.tensor_scale)


def _group_reduce(x: np.ndarray, spec: QuantSpec, group_axis: int, op: str) -> np.ndarray:
    if spec.granularity == "per_group" and group_axis == 0:
        return _group_reduce(x.T, spec, 1, op).T

    def reduce(block, axis, keepdims=False):
        if op == "amax":
            return np.max(np.abs(block), axis=axis, keepdims=keepdims)
        if op == "min":
            return np.min(block, axis=axis, keepdims=keepdims)
        return np.max(block, axis=axis, keepdims=keepdims)

    rows, cols = x.shape
    if spec.granularity == "per_tensor":
        return reduce(x.reshape(1, -1), 1, keepdims=True)
    if spec.granularity == "per_token":
        return reduce(x, 1, keepdims=True)
    if spec.granularity == "per_channel":
        return reduce(x, 0, keepdims=True)
    gs = spec.group_size
    n_full = cols // gs
    parts = []
    if n_full:
        parts.append(reduce(x[:, : n_full * gs].reshape(rows, n_full, gs), 2))
    if cols - n_full * gs:
        parts.append(reduce(x[:, n_full * gs :], 1, keepdims=True))
    if not parts:
        return np.zeros((rows, 0))
    return np.concatenate(parts, axis=1)


def _expand_groups(per_group: np.ndarray, shape: tuple[int, int], spec: QuantSpec, group_axis: int) -> np.ndarray:
    """Broadcast per-group values back to the full matrix shape."""
    rows, cols = shape
    if spec.granularity in ("per_tensor", "per_token", "per_channel"):
        return np.broadcast_to(per_group, shape)
    if group_axis == 0:
        return _expand_groups(per_group.T, (cols, rows), spec, 1).T
    gs = spec.group_size
    n_full = cols // gs
    rem = cols - n_full * gs
    reps = [gs] * n_full + ([rem] if rem else [])
    return np.repeat(per_group, reps, axis=1)


def _round_through_fp16(values: np.ndarray) -> np.ndarray:
    rounded = np.float16(values).astype(np.float64)
    # keep scales usable if fp16 flushed a tiny scale to zero
    rounded[(values > 0) & (rounded <= 0)] = float(np.float64(2.0**-24))
    return rounded


def snap_e4m3(values: np.ndarray) -> np.ndarray:
    """Snap positive values to the nearest finite E4M3 value, ties to even mantissa.

    Inputs above 448 clamp to 448; positive inputs below the smallest
    subnormal clamp up to it, since a zero scale would be degenerate.
    """
    v = np.asarray(values, dtype=np.float64)
    idx = np.clip(np.searchsorted(_E4M3_GRID, v), 1, len(_E4M3_GRID) - 1)
    lo, hi = _E4M3_GRID[idx - 1], _E4M3_GRID[idx]
    d_lo, d_hi = v - lo, hi - v
    pick_lo = (d_lo < d_hi) | ((d_lo == d_hi) & _E4M3_EVEN[idx - 1])
    out = np.where(pick_lo, lo, hi)
    out = np.where(v >= E4M3_MAX, E4M3_MAX, out)
    out = np.where(v <= E4M3_MIN_POSITIVE, E4M3_MIN_POSITIVE, out)
    return out


def snap_e2m1(values: np.ndarray) -> np.ndarray:
    """Snap to the nearest E2M1 value, ties to even mantissa, clamping at +-6."""
    v = np.asarray(values, dtype=np.float64)
    idx = np.clip(np.searchsorted(_E2M1_GRID, v), 1, len(_E2M1_GRID) - 1)
    lo, hi = _E2M1_GRID[idx - 1], _E2M1_GRID[idx]
    d_lo, d_hi = v - lo, hi - v
    pick_lo = (d_lo < d_hi) | ((d_lo == d_hi) & _E2M1_EVEN[idx - 1])
    out = np.where(pick_lo, lo, hi)
    out = np.where(v <= -E2M1_MAX, -E2M1_MAX, out)
    out = np.where(v >= E2M1_MAX, E2M1_MAX, out)
    return out


def elementwise_scale_zero(
    spec: QuantSpec, params: QuantParams, shape: tuple[int, int], group_axis: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Effective per-element scale and zero-point matrices for fitted params.

    Encoding and decoding reduce to elementwise formulas against these two
    arrays, which lets callers that quantize row slices (see the Hessian
    compensation loop) reproduce whole-matrix results bit for bit.
    """
    if spec.family == "float4":
        s = _expand_groups(params.scales, shape, spec, group_axis) * params.tensor_scale
        return s, np.zeros(shape)
    s = _expand_groups(params.scales, shape, spec, group_axis)
    if spec.mode == "asymmetric":
        return s, _expand_groups(params.zero_points, shape, spec, group_axis)
    return s, np.zeros(shape)


def encode_with(spec: QuantSpec, values: np.ndarray, s: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Map values to codes against effective elementwise scales/zero points."""
    if spec.family == "float4":
        return snap_e2m1(values / s)
    qmin, qmax = spec.q_range()
    if spec.mode == "asymmetric":
        return np.clip(np.rint((values - z) / s), qmin, qmax).astype(np.int64)
    return np.clip(np.rint(values / s), qmin, qmax).astype(np.int64)


def decode_with(spec: QuantSpec, codes: np.ndarray, s: np.ndarray, z: np.ndarray) -> np.ndarray:
    if spec.family == "float4":
        return codes * s
    out = codes.astype(np.float64) * s
    if spec.mode == "asymmetric":
        out = out + z
    return out


def fit_params(x, spec: QuantSpec, group_axis: int = 1, emulate_half: bool = False) -> QuantParams:
    """Fit scales (and zero points for asymmetric mode) for ``x`` under ``spec``.

    ``emulate_half`` additionally rounds fitted integer-format scales and zero
    points through IEEE float16, for studies of 16-bit scale storage. It has
    no effect on the float4 family, whose scales are E4M3-snapped already.
    """
    x = as_matrix(x, "x")
    if group_axis not in (0, 1):
        raise ConfigError(f"group_axis must be 0 or 1, got {group_axis}")
    if x.size == 0:
        return QuantParams(np.zeros((0, 0)), np.zeros((0, 0)), 1.0)

    if spec.family == "float4":
        amax = _group_reduce(x, spec, group_axis, "amax")
        raw = amax / E2M1_MAX
        raw_max = float(raw.max()) if raw.size else 0.0
        tensor_scale = raw_max / E4M3_MAX if raw_max > 0.0 else 1.0
        scales = snap_e4m3(raw / tensor_scale)
        scales = np.where(raw == 0.0, 1.0, scales)
        return QuantParams(scales, np.zeros((0,)), tensor_scale)

    qmin, qmax = spec.q_range()
    if spec.mode == "symmetric":
        amax = _group_reduce(x, spec, group_axis, "amax")
        scales = amax / qmax
        # zero-signal groups, and subnormal maxima whose scale underflows
        scales = np.where((scales > 0.0) & np.isfinite(scales), scales, 1.0)
        zero_points = np.zeros((0,))
    else:
        lo = _group_reduce(x, spec, group_axis, "min")
        hi = _group_reduce(x, spec, group_axis, "max")
        scales = (hi - lo) / (qmax - qmin)
        scales = np.where((scales > 0.0) & np.isfinite(scales), scales, 1.0)
        zero_points = lo
    if emulate_half:
        scales = _round_through_fp16(scales)
        if zero_points.size:
            zero_points = np.float16(zero_points).astype(np.float64)
    return QuantParams(scales, zero_points, 1.0)


def quantize_dequantize(
    x,
    spec: QuantSpec,
    group_axis: int = 1,
    params: QuantParams | None = None,
    emulate_half: bool = False,
) -> tuple[QuantizedTensor, np.ndarray]:
    """Fake-quantize ``x``: fit (or reuse) params, encode, decode.

    Returns the code tensor and the dequantized matrix. Passing ``params``
    reuses previously fitted scales, which makes the operation an exact
    fixed point: re-encoding a dequantized matrix with the same params
    reproduces it bit for bit.
    """
    x = as_matrix(x, "x")
    if params is None:
        params = fit_params(x, spec, group_axis=group_axis, emulate_half=emulate_half)
    if x.size == 0:
        qt = QuantizedTensor(
            codes=np.zeros(x.shape, dtype=np.int64 if spec.family == "integer" else np.float64),
            scales=params.scales,
            zero_points=params.zero_points,
            spec=spec,
            shape=x.shape,
            group_axis=group_axis,
            tensor_scale=params.tensor_scale,
        )
        return qt, x.copy()

    s, z = elementwise_scale_zero(spec, params, x.shape, group_axis)
    codes = encode_with(spec, x, s, z)
    x_hat = decode_with(spec, codes, s, z)
    qt = QuantizedTensor(
        codes=codes,
        scales=params.scales,
        zero_points=params.zero_points,
        spec=spec,
        shape=x.shape,
        group_axis=group_axis,
        tensor_scale=params.tensor_scale,
    )
    return qt, x_hat


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """Decode a QuantizedTensor back to float64."""
    if qt.codes.size == 0:
        return np.zeros(qt.shape)
    s, z = elementwise_scale_zero(qt.spec, qt.params(), qt.shape, qt.group_axis)
    return decode_with(qt.spec, qt.codes, s, z)


def per_channel_error(x, x_hat) -> np.ndarray:
    """Squared error per column. Summing this vector gives quant_error exactly."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    d = x - x_hat
    return np.sum(d * d, axis=0)


def quant_error(x, x_hat) -> float:
    """Squared Frobenius error, accumulated column-wise for exact additivity."""
    return float(per_channel_error(x, x_hat).sum())
