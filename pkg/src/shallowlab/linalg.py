"""Dense real64 matrix kernel.

Matrices are plain 2-D float64 ``numpy.ndarray``s; every public operation
validates shape and finiteness on entry, so downstream code can assume
well-formed inputs.  Provided here: extreme singular values, a Weyl
inequality probe, Khatri-Rao Gram matrices via entrywise Gram powers, and
deterministic counter-based Gaussian sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError

# Singular values below this fraction of sigma_max are reported as exactly 0,
# so downstream positivity checks on near-singular Grams are stable.
SIGMA_FLOOR = 1e-13


class SpectralExtremes(NamedTuple):
    sigma_max: float
    sigma_min: float


@dataclass(frozen=True)
class RngStream:
    """Value-semantics handle into a counter-based random stream.

    The same (seed, stream_id) pair always reproduces the same draws;
    distinct stream_ids give statistically independent substreams.  Each
    ``generator()`` call builds a fresh generator, so functions taking an
    RngStream stay pure.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return ``m`` as a 2-D float64 array."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.size == 0:
        raise DimensionError(f"{name} is empty (shape {a.shape})")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} contains non-finite entries")
    return a


def svd_extremes(m) -> SpectralExtremes:
    """Largest and smallest singular values of a dense matrix.

    ``sigma_min`` is the smallest of the min(rows, cols) singular values.
    Values below ``SIGMA_FLOOR * sigma_max`` are floored to exactly 0.
    """
    a = as_matrix(m)
    s = np.linalg.svd(a, compute_uv=False)
    smax = float(s[0])
    smin = float(s[-1])
    if smin < SIGMA_FLOOR * smax:
        smin = 0.0
    return SpectralExtremes(smax, smin)


def singular_values(m) -> np.ndarray:
    """Full singular spectrum, descending.  Intended for small test matrices."""
    return np.linalg.svd(as_matrix(m), compute_uv=False)


def weyl_check(a, b, i: int, j: int, tol: float = 1e-9) -> bool:
    """Test sigma_{i+j-1}(A+B) <= sigma_i(A) + sigma_j(B) (1-based indices).

    The inequality always holds; this exists as an oracle for spectral
    perturbation arguments and returns the comparison within ``tol``.
    """
    a = as_matrix(a, "A")
    b = as_matrix(b, "B")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    k = min(a.shape)
    if i < 1 or j < 1 or i > k or j > k:
        raise IndexError(f"singular value indices out of range: i={i}, j={j}, k={k}")
    if i + j - 1 > k:
        raise IndexError(f"i+j-1={i + j - 1} exceeds min(rows, cols)={k}")
    sa = singular_values(a)
    sb = singular_values(b)
    ssum = singular_values(a + b)
    return bool(ssum[i + j - 2] <= sa[i - 1] + sb[j - 1] + tol)


def khatri_rao_gram(x, t: int) -> np.ndarray:
    """n x n Gram of the columnwise t-fold self-Kronecker power of X.

    Computed as the entrywise t-th power of X^T X, which is exact because
    <u tensor^t, v tensor^t> = <u, v>^t; the d0^t x n power matrix is never
    materialized.  t = 0 returns the all-ones matrix (rank-one convention
    for the zeroth power).
    """
    a = as_matrix(x, "X")
    if t < 0:
        raise ValueError(f"power must be nonnegative, got {t}")
    n = a.shape[1]
    if t == 0:
        return np.ones((n, n))
    g = a.T @ a
    g = (g + g.T) / 2.0
    return g**t


def gaussian_matrix(rows: int, cols: int, std: float, rng: RngStream) -> np.ndarray:
    """i.i.d. N(0, std^2) matrix, deterministic for a given stream."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"invalid shape ({rows}, {cols})")
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    return std * rng.generator().standard_normal((rows, cols))


def frobenius(m) -> float:
    return float(np.linalg.norm(np.asarray(m)))


def sym_eig_extremes(g) -> SpectralExtremes:
    """Extreme eigenvalues of a symmetric PSD matrix, as singular values.

    Small negative eigenvalues from roundoff are clamped to 0; the same
    relative floor as ``svd_extremes`` applies.
    """
    a = as_matrix(g, "gram")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"gram must be square, got {a.shape}")
    w = np.linalg.eigvalsh((a + a.T) / 2.0)
    top = float(max(w[-1], 0.0))
    bot = float(max(w[0], 0.0))
    if bot < SIGMA_FLOOR * top:
        bot = 0.0
    return SpectralExtremes(top, bot)


def gram_sigma_extremes_of_factor(x) -> SpectralExtremes:
    """sigma extremes of a (possibly very tall) factor F via its small Gram.

    For F of shape (m, n) with m >> n, forms the n x n Gram and takes
    square roots of its extreme eigenvalues.  Cheaper than an SVD of F and
    accurate enough (relative ~1e-8) for certificate work.
    """
    f = as_matrix(x, "factor")
    m, n = f.shape
    g = f.T @ f if m >= n else f @ f.T
    ext = sym_eig_extremes(g)
    return SpectralExtremes(math.sqrt(ext.sigma_max), math.sqrt(ext.sigma_min))
