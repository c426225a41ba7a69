"""Streaming activation statistics and the PCA basis built from them.

Calibration never stores raw activations: batches fold into an uncentered
second-moment sum X^T X plus a token count, which is enough to recover the
principal directions. Accumulators merge associatively, so calibration can
be sharded and combined. Finalization applies diagonal damping
(sigma + lambda * mean(diag sigma) * I) before the eigendecomposition to keep
near-null directions well conditioned, then splits the basis at
k = round(r * dim) columns (clamped to [1, dim]).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .linalg import EigenDecomposition, as_matrix, eigh_descending, matmul
from . import tensorio


@dataclass
class SecondMomentAccumulator:
    dim: int
    sum_xtx: np.ndarray
    token_count: int = 0
    layer_id: str = ""


def new_accumulator(dim: int, layer_id: str = "") -> SecondMomentAccumulator:
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")
    return SecondMomentAccumulator(dim=dim, sum_xtx=np.zeros((dim, dim)), layer_id=layer_id)


def accumulate(acc: SecondMomentAccumulator, batch) -> SecondMomentAccumulator:
    """Fold one batch (tokens x dim) into a new accumulator. Inputs unchanged."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != acc.dim:
        raise ShapeError(f"batch has {x.shape[1]} channels, accumulator expects {acc.dim}")
    if x.shape[0] < 1:
        raise ValueError("batch must contain at least one row")
    return SecondMomentAccumulator(
        dim=acc.dim,
        sum_xtx=acc.sum_xtx + matmul(x.T, x),
        token_count=acc.token_count + x.shape[0],
        layer_id=acc.layer_id,
    )


def merge(a: SecondMomentAccumulator, b: SecondMomentAccumulator) -> SecondMomentAccumulator:
    if a.dim != b.dim:
        raise ShapeError(f"cannot merge accumulators of dim {a.dim} and {b.dim}")
    return SecondMomentAccumulator(
        dim=a.dim,
        sum_xtx=a.sum_xtx + b.sum_xtx,
        token_count=a.token_count + b.token_count,
        layer_id=a.layer_id or b.layer_id,
    )


@dataclass
class PcaBasis:
    """Eigenbasis of the damped second moment, split at rank_k columns."""

    basis: EigenDecomposition
    rank_k: int
    rank_ratio: float
    damping: float
    layer_id: str = ""
    token_count: int = 0

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def u_high(self) -> np.ndarray:
        return self.basis.vectors[:, : self.rank_k]

    @property
    def u_low(self) -> np.ndarray:
        return self.basis.vectors[:, self.rank_k :]


def rank_from_ratio(ratio: float, dim: int) -> int:
    if not (0.0 < ratio <= 1.0):
        raise ConfigError(f"rank ratio must be in (0, 1], got {ratio}")
    return min(dim, max(1, int(round(ratio * dim))))


def finalize_pca(
    acc: SecondMomentAccumulator,
    rank_ratio: float,
    damping: float = 0.01,
    layer_id: str | None = None,
) -> PcaBasis:
    """Eigendecompose the damped mean second moment and pick the split rank."""
    if acc.token_count < 1:
        raise ValueError("cannot finalize an empty accumulator")
    if damping < 0.0:
        raise ConfigError(f"damping must be >= 0, got {damping}")
    sigma = acc.sum_xtx / acc.token_count
    offset = damping * float(np.mean(np.diag(sigma)))
    damped = sigma + offset * np.eye(acc.dim)
    eig = eigh_descending(damped)
    return PcaBasis(
        basis=eig,
        rank_k=rank_from_ratio(rank_ratio, acc.dim),
        rank_ratio=rank_ratio,
        damping=damping,
        layer_id=acc.layer_id if layer_id is None else layer_id,
        token_count=acc.token_count,
    )


def damping_offset(acc: SecondMomentAccumulator, damping: float) -> float:
    """The scalar added to every eigenvalue by the damping term."""
    sigma = acc.sum_xtx / acc.token_count
    return damping * float(np.mean(np.diag(sigma)))


ACCUMULATOR_TENSOR = "second_moment.drtq"
ACCUMULATOR_META = "accumulator.json"


def save_accumulator(acc: SecondMomentAccumulator, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(d / ACCUMULATOR_TENSOR, acc.sum_xtx)
    meta = {"dim": acc.dim, "token_count": acc.token_count, "layer_id": acc.layer_id}
    (d / ACCUMULATOR_META).write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_accumulator(directory) -> SecondMomentAccumulator:
    d = Path(directory)
    meta = json.loads((d / ACCUMULATOR_META).read_text())
    sum_xtx = tensorio.read_tensor(d / ACCUMULATOR_TENSOR).astype(np.float64)
    if sum_xtx.shape != (meta["dim"], meta["dim"]):
        raise ValueError(f"{d}: second moment shape {sum_xtx.shape} does not match dim {meta['dim']}")
    return SecondMomentAccumulator(
        dim=meta["dim"], sum_xtx=sum_xtx, token_count=meta["token_count"], layer_id=meta["layer_id"]
    )
