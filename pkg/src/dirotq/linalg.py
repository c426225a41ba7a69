"""Dense linear algebra substrate used by every other module.

Everything works on plain float64 2-D numpy arrays. The three operations
that matter are a validated matrix product, a symmetric eigendecomposition
with fixed ordering and sign conventions, and seeded Haar-random orthogonal
matrices. Conventions are pinned here so downstream artifacts (rotation
bundles, fused layers, serialized bases) are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError

# Inputs crossing an external boundary (files, API payloads) must be finite;
# internally generated data skips the scan.
SYMMETRY_ATOL = 1e-8


def as_matrix(x, name: str = "matrix", require_finite: bool = True) -> np.ndarray:
    """Coerce ``x`` to a float64 2-D array, validating shape and finiteness."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    if require_finite and a.size and not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit dimension validation.

    Raises
    ------
    ShapeError
        If either operand is not 2-D or the inner dimensions differ. Both
        shapes are reported in the message.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got ndim {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


@dataclass
class EigenDecomposition:
    """Eigenvectors (columns) and eigenvalues in descending value order."""

    vectors: np.ndarray
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


def eigh_descending(sigma) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input must be symmetric within ``SYMMETRY_ATOL`` absolute; it is
    symmetrized by averaging with its transpose before factorization.
    Deterministic conventions:

    * eigenvalues sorted descending with a stable sort, so exactly equal
      values keep the factorization's relative order;
    * each eigenvector is sign-fixed so its largest-magnitude entry is
      positive (first such entry on magnitude ties).
    """
    s = as_matrix(sigma, "sigma")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"eigh_descending needs a square matrix, got {s.shape}")
    if s.size:
        asym = float(np.max(np.abs(s - s.T)))
        if asym > SYMMETRY_ATOL:
            raise ValueError(
                f"matrix is not symmetric: max |A - A^T| = {asym:.3e} exceeds {SYMMETRY_ATOL:.0e}"
            )
    sym = (s + s.T) / 2.0
    try:
        values, vectors = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        # LAPACK reports failure without the residual off-diagonal norm.
        raise NumericalError(f"symmetric eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    anchor = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[anchor, np.arange(vectors.shape[1])])
    signs[signs == 0.0] = 1.0
    return EigenDecomposition(vectors=vectors * signs, values=values)


def random_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix, deterministic per seed.

    A seeded standard Gaussian matrix is QR-factorized and the Q columns are
    sign-corrected so the triangular factor's diagonal is positive, which
    makes the draw Haar-uniform rather than biased by the QR convention.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    d = np.sign(np.diag(r))
    d[d == 0.0] = 1.0
    return q * d
