"""Probabilist's Hermite polynomials and activation expansions.

Uses the convention q_0 = 1, q_1 = x, q_{i+1} = x q_i - i q_{i-1}, under
which <q_i, q_j> = i! delta_ij for the standard Gaussian inner product.
Coefficients are extracted by 200-node Gauss-Hermite quadrature with the
exp(-x^2/2) weight, which integrates polynomial integrands up to degree
399 exactly, and the expected feature Gram is assembled from Khatri-Rao
Gram powers of the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e

from .activations import ActivationProfile
from .linalg import as_matrix, khatri_rao_gram

MAX_POLY_ORDER = 60
MAX_EXPANSION_ORDER = 40
QUADRATURE_NODES = 200
COEFF_SNAP = 1e-12

_NODES, _WEIGHTS = hermite_e.hermegauss(QUADRATURE_NODES)
_GAUSS_NORM = 1.0 / math.sqrt(2.0 * math.pi)


def hermite_poly(i: int, x):
    """q_i(x) by the three-term recurrence; accepts scalars or arrays."""
    if i < 0:
        raise ValueError(f"order must be nonnegative, got {i}")
    if i > MAX_POLY_ORDER:
        raise ValueError(
            f"order {i} exceeds recurrence stability bound {MAX_POLY_ORDER}"
        )
    xv = np.asarray(x, dtype=np.float64)
    prev = np.ones_like(xv)
    if i == 0:
        return prev if prev.ndim else float(prev)
    cur = xv.copy()
    for k in range(1, i):
        prev, cur = cur, xv * cur - k * prev
    return cur if cur.ndim else float(cur)


@dataclass(frozen=True)
class HermiteExpansion:
    """Truncated Hermite expansion of an activation.

    ``coeffs[i]`` is c_i = <phi, q_i> under the standard Gaussian weight;
    ``hermite_norm`` is sqrt(sum c_i^2) over the stored coefficients and
    ``tail_mass`` is c_inf^2 = sum_{i>=2} c_i^2 / i!.  Both are exact
    functions of the stored (truncated) coefficients.  The series beyond
    order K is not representable here; ``truncation_residual`` records the
    weighted mass of the last retained order pair as a decay indicator.
    """

    coeffs: np.ndarray
    order: int
    hermite_norm: float
    tail_mass: float
    truncation_residual: float
    name: str = field(default="", compare=False)

    def coefficient(self, i: int) -> float:
        return float(self.coeffs[i]) if i <= self.order else 0.0

    @property
    def c_infinity_sq(self) -> float:
        return self.tail_mass

    def reconstruct(self, x):
        """Partial sum  sum_{i<=K} (c_i / i!) q_i(x)."""
        xv = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(xv)
        for i in range(self.order + 1):
            ci = self.coeffs[i]
            if ci != 0.0:
                out = out + (ci / math.factorial(i)) * hermite_poly(i, xv)
        return out if out.ndim else float(out)

    def first_usable_order(self, start: int = 1) -> int | None:
        """Smallest order >= start with a nonzero coefficient."""
        for i in range(start, self.order + 1):
            if self.coeffs[i] != 0.0:
                return i
        return None


def hermite_coefficients(phi, order: int = 30, name: str | None = None) -> HermiteExpansion:
    """Expansion coefficients c_0..c_K of an activation by quadrature.

    ``phi`` may be an ActivationProfile or a bare vectorized callable.
    Coefficients smaller than 1e-12 in magnitude are snapped to exactly 0,
    which makes odd/even symmetry checkable downstream.
    """
    if order < 1 or order > MAX_EXPANSION_ORDER:
        raise ValueError(f"order must be in [1, {MAX_EXPANSION_ORDER}], got {order}")
    if isinstance(phi, ActivationProfile):
        fn = phi.fn
        if name is None:
            name = phi.name
    else:
        fn = phi
    vals = np.asarray(fn(_NODES), dtype=np.float64)
    if vals.shape != _NODES.shape or not np.all(np.isfinite(vals)):
        raise ValueError("activation produced non-finite values at quadrature nodes")

    weighted = _WEIGHTS * vals
    coeffs = np.empty(order + 1)
    for i in range(order + 1):
        terms = weighted * hermite_poly(i, _NODES)
        ci = math.fsum(terms.tolist()) * _GAUSS_NORM
        coeffs[i] = 0.0 if abs(ci) < COEFF_SNAP else ci

    norm = math.sqrt(math.fsum((coeffs**2).tolist()))
    tail = math.fsum(
        coeffs[i] ** 2 / math.factorial(i) for i in range(2, order + 1)
    )
    residual = max(
        coeffs[order] ** 2 / math.factorial(order),
        coeffs[order - 1] ** 2 / math.factorial(order - 1),
    )
    return HermiteExpansion(
        coeffs=coeffs,
        order=order,
        hermite_norm=norm,
        tail_mass=tail,
        truncation_residual=residual,
        name=name or "",
    )


def expected_gram(
    x,
    expansion: HermiteExpansion,
    d1: int,
    t_max: int | None = None,
) -> np.ndarray:
    """Expected feature Gram  d1 (c0^2 J + c1^2 X^T X + sum (c_i^2/i!) G_i).

    G_i is the Gram of the i-th Khatri-Rao power of X, computed as the
    entrywise i-th power of X^T X.  Columns of X must be unit-norm; t_max
    defaults to min(order, 8) since the weights c_i^2 / i! decay fast for
    any activation with finite Hermite norm.
    """
    a = as_matrix(x, "X")
    if d1 < 1:
        raise ValueError(f"d1 must be positive, got {d1}")
    norms = np.linalg.norm(a, axis=0)
    if np.max(np.abs(norms - 1.0)) > 1e-8:
        raise ValueError(
            f"columns must be unit-norm (max deviation {np.max(np.abs(norms - 1.0)):.3e})"
        )
    if t_max is None:
        t_max = min(expansion.order, 8)
    if t_max > expansion.order:
        raise ValueError(f"t_max={t_max} exceeds expansion order {expansion.order}")

    c = expansion.coeffs
    n = a.shape[1]
    out = np.zeros((n, n))
    if c[0] != 0.0:
        out += c[0] ** 2 * khatri_rao_gram(a, 0)
    if expansion.order >= 1 and c[1] != 0.0:
        out += c[1] ** 2 * khatri_rao_gram(a, 1)
    for i in range(2, t_max + 1):
        if c[i] != 0.0:
            out += (c[i] ** 2 / math.factorial(i)) * khatri_rao_gram(a, i)
    out *= float(d1)
    return (out + out.T) / 2.0


def quadrature_inner_product(i: int, j: int) -> float:
    """<q_i, q_j> under the 200-node rule; oracle for the orthogonality law."""
    terms = _WEIGHTS * hermite_poly(i, _NODES) * hermite_poly(j, _NODES)
    return math.fsum(terms.tolist()) * _GAUSS_NORM
