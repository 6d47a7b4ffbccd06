"""Two-layer model Z = V phi(W X), its loss, Jacobian, and adjoint.

Parameters live in a (W, V) pair that doubles as tangent and gradient
carrier; inner products and norms are Frobenius sums over both blocks.
All functions are pure: nothing caches activations across calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .activations import ActivationProfile
from .errors import DimensionError
from .linalg import SpectralExtremes, as_matrix, svd_extremes

DENSE_JACOBIAN_LIMIT = 4096


@dataclass(frozen=True)
class NetParams:
    """Weight pair (W, V) with W: (d1, d0) and V: (d2, d1)."""

    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        w = as_matrix(self.W, "W")
        v = as_matrix(self.V, "V")
        if v.shape[1] != w.shape[0]:
            raise DimensionError(
                f"inner dimensions inconsistent: W is {w.shape}, V is {v.shape}"
            )
        object.__setattr__(self, "W", w)
        object.__setattr__(self, "V", v)

    @property
    def dims(self):
        d1, d0 = self.W.shape
        d2 = self.V.shape[0]
        return d0, d1, d2

    @property
    def size(self) -> int:
        return self.W.size + self.V.size

    def __add__(self, other: "NetParams") -> "NetParams":
        return NetParams(self.W + other.W, self.V + other.V)

    def __sub__(self, other: "NetParams") -> "NetParams":
        return NetParams(self.W - other.W, self.V - other.V)

    def __mul__(self, scalar: float) -> "NetParams":
        return NetParams(self.W * scalar, self.V * scalar)

    __rmul__ = __mul__

    def dot(self, other: "NetParams") -> float:
        return float(np.vdot(self.W, other.W) + np.vdot(self.V, other.V))

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.V)))


def zeros_like(theta: NetParams) -> NetParams:
    return NetParams(np.zeros_like(theta.W), np.zeros_like(theta.V))


@dataclass(frozen=True)
class Dataset:
    """Training pair (X, Y) with unit-norm columns and ||Y|| <= 1."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.X, "X")
        y = as_matrix(self.Y, "Y")
        if x.shape[1] != y.shape[1]:
            raise DimensionError(
                f"X has {x.shape[1]} columns but Y has {y.shape[1]}"
            )
        norms = np.linalg.norm(x, axis=0)
        dev = float(np.max(np.abs(norms - 1.0)))
        if dev > 1e-8:
            raise ValueError(f"X columns must be unit-norm (max deviation {dev:.3e})")
        ynorm = float(np.linalg.norm(y))
        if ynorm > 1.0 + 1e-8:
            raise ValueError(f"||Y|| must be <= 1, got {ynorm:.6f}")
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Y", y)

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def subset(self, cols) -> "Dataset":
        return Dataset(self.X[:, cols], self.Y[:, cols])


def _check_input(theta: NetParams, x: np.ndarray):
    if x.shape[0] != theta.W.shape[1]:
        raise DimensionError(
            f"X has {x.shape[0]} rows but W expects {theta.W.shape[1]}"
        )


def forward(theta: NetParams, x, phi: ActivationProfile) -> np.ndarray:
    """Network output V phi(W X), shape (d2, n)."""
    x = as_matrix(x, "X")
    _check_input(theta, x)
    return theta.V @ phi.fn(theta.W @ x)


def loss(theta: NetParams, data: Dataset, phi: ActivationProfile) -> float:
    """Squared Frobenius misfit ||V phi(W X) - Y||^2 (no 1/n factor)."""
    r = forward(theta, data.X, phi) - data.Y
    return float(np.vdot(r, r))


def residual_gradient(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the squared loss in output space: 2 (Z - Y)."""
    return 2.0 * (z - y)


def jacobian_apply(
    theta: NetParams, delta: NetParams, x, phi: ActivationProfile
) -> np.ndarray:
    """Directional derivative DPhi(theta){delta} in output space.

    Equals V (phi'(W X) o (Delta_W X)) + Delta_V phi(W X), where o is the
    Hadamard product.
    """
    x = as_matrix(x, "X")
    _check_input(theta, x)
    if delta.W.shape != theta.W.shape or delta.V.shape != theta.V.shape:
        raise DimensionError("tangent shapes must match parameter shapes")
    wx = theta.W @ x
    return theta.V @ (phi.deriv1(wx) * (delta.W @ x)) + delta.V @ phi.fn(wx)


def jacobian_adjoint(
    theta: NetParams, cotangent, x, phi: ActivationProfile
) -> NetParams:
    """Adjoint DPhi*(theta){Delta} back in parameter space.

    Returns ((phi'(W X) o (V^T Delta)) X^T,  Delta phi(W X)^T); the unique
    pair satisfying <Delta, DPhi{delta}> = <DPhi*{Delta}, delta>.
    """
    x = as_matrix(x, "X")
    _check_input(theta, x)
    cot = as_matrix(cotangent, "cotangent")
    d2, n = theta.V.shape[0], x.shape[1]
    if cot.shape != (d2, n):
        raise DimensionError(f"cotangent must be ({d2}, {n}), got {cot.shape}")
    wx = theta.W @ x
    feats = phi.fn(wx)
    gw = (phi.deriv1(wx) * (theta.V.T @ cot)) @ x.T
    gv = cot @ feats.T
    return NetParams(gw, gv)


def gradient(theta: NetParams, data: Dataset, phi: ActivationProfile) -> NetParams:
    """Loss gradient DPhi*(theta){2 (Z - Y)}."""
    z = forward(theta, data.X, phi)
    return jacobian_adjoint(theta, residual_gradient(z, data.Y), data.X, phi)


def jacobian_matrix(theta: NetParams, x, phi: ActivationProfile) -> np.ndarray:
    """Explicit DPhi(theta) as a (d2*n) x (d1*d0 + d2*d1) matrix.

    Row index flattens (output row, sample); column index flattens W
    entries then V entries, row-major.  Only sensible at small sizes.
    """
    x = as_matrix(x, "X")
    _check_input(theta, x)
    d0, d1, d2 = theta.dims
    n = x.shape[1]
    wx = theta.W @ x
    dphi = phi.deriv1(wx)
    feats = phi.fn(wx)
    # d Z[c, s] / d W[a, b] = V[c, a] * phi'(WX)[a, s] * X[b, s]
    jw = np.einsum("ca,as,bs->csab", theta.V, dphi, x)
    # d Z[c, s] / d V[e, a] = delta_ce * phi(WX)[a, s]
    jv = np.einsum("ce,as->csea", np.eye(d2), feats)
    return np.concatenate(
        [jw.reshape(d2 * n, d1 * d0), jv.reshape(d2 * n, d2 * d1)], axis=1
    )


def jacobian_extremes(
    theta: NetParams,
    x,
    phi: ActivationProfile,
    dense_limit: int = DENSE_JACOBIAN_LIMIT,
    tol: float = 1e-8,
) -> SpectralExtremes:
    """Extreme singular values of DPhi* (same as those of DPhi).

    Materializes the Jacobian when the parameter count is at most
    ``dense_limit``; otherwise runs inverse-free Lanczos on the output-space
    Gram operator DPhi DPhi*, whose dimension is d2*n.
    """
    x = as_matrix(x, "X")
    if theta.size <= dense_limit:
        return svd_extremes(jacobian_matrix(theta, x, phi))

    d2, n = theta.V.shape[0], x.shape[1]
    m = d2 * n

    def matvec(v):
        cot = v.reshape(d2, n)
        back = jacobian_adjoint(theta, cot, x, phi)
        return jacobian_apply(theta, back, x, phi).ravel()

    op = LinearOperator((m, m), matvec=matvec, dtype=np.float64)
    top = eigsh(op, k=1, which="LA", tol=tol, return_eigenvectors=False)
    bot = eigsh(op, k=1, which="SA", tol=tol, return_eigenvectors=False)
    return SpectralExtremes(
        math.sqrt(max(float(top[0]), 0.0)), math.sqrt(max(float(bot[0]), 0.0))
    )
