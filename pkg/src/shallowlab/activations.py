"""Catalog of smooth activations with certified derivative data.

Each profile carries the function, its first two derivatives, suprema of
|phi'| and |phi''|, and scaling exponents (r1, r2) describing how
|phi(tau * a)| compresses for tau in (0, 1).  Raw sigmoid and softplus are
shipped shifted so that phi(0) = 0, which the downstream feature-matrix
analysis requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, ndtr

from .errors import EstimationError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _gauss_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


@dataclass(frozen=True)
class ActivationProfile:
    """A twice-differentiable scalar activation with certified metadata.

    ``fn``, ``deriv1``, ``deriv2`` must be pure, vectorized over ndarrays.
    ``bounds_certified`` is False when the derivative suprema were read off
    a finite grid whose argmax sat on the boundary (unbounded suspicion),
    as happens for the square activation.
    """

    name: str
    fn: Callable
    deriv1: Callable
    deriv2: Callable
    phi_dot_max: float
    phi_ddot_max: float
    r1: float
    r2: float
    zero_at_origin: bool = True
    bounds_certified: bool = True


class DerivativeBounds(NamedTuple):
    phi_dot_max: float
    phi_ddot_max: float
    dot_certified: bool
    ddot_certified: bool

    @property
    def unbounded_suspicion(self) -> bool:
        return not (self.dot_certified and self.ddot_certified)


class HomogeneityEstimate(NamedTuple):
    r1: float
    r2: float
    grid_resolution: float
    excluded_fraction: float


def eval_all(phi: ActivationProfile, x: float):
    """(phi(x), phi'(x), phi''(x)) at a finite scalar x."""
    if not np.isfinite(x):
        raise ValueError(f"activation input must be finite, got {x}")
    return (float(phi.fn(x)), float(phi.deriv1(x)), float(phi.deriv2(x)))


def derivative_bounds(
    phi: ActivationProfile,
    lo: float = -20.0,
    hi: float = 20.0,
    grid_points: int = 100_000,
) -> DerivativeBounds:
    """Numerical suprema of |phi'| and |phi''| on [lo, hi].

    Dense grid scan refined by golden-section search around the grid argmax,
    inflated by a 1% safety margin.  A derivative is 'certified' only when
    its argmax is interior to the grid; a boundary argmax suggests the true
    supremum lives outside the window (or at infinity).
    """
    xs = np.linspace(lo, hi, grid_points)

    def scan(deriv):
        vals = np.abs(deriv(xs))
        k = int(np.argmax(vals))
        interior = 0 < k < grid_points - 1
        if interior:
            peak = _golden_max(lambda t: abs(float(deriv(t))), xs[k - 1], xs[k + 1])
            peak = max(peak, float(vals[k]))
        else:
            peak = float(vals[k])
        return peak * 1.01, interior

    dmax, dok = scan(phi.deriv1)
    ddmax, ddok = scan(phi.deriv2)
    return DerivativeBounds(dmax, ddmax, dok, ddok)


def _golden_max(f, a: float, b: float, iters: int = 80) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return max(fc, fd)


def homogeneity_exponents(
    fn: Callable,
    tau_grid: int = 25,
    a_grid: int = 80,
    a_max: float = 10.0,
) -> HomogeneityEstimate:
    """Grid estimate of the tightest exponents with
    tau^r1 |phi(a)| <= |phi(tau a)| <= tau^r2 |phi(a)| on tau in (0, 1).

    r1 is the supremum and r2 the infimum of log|phi(tau a)/phi(a)| / log tau
    over a log grid of tau in [1e-3, 1) and a in [-a_max, a_max] \\ {0}.
    Points where phi(a) = 0 but phi(tau a) != 0 are excluded and counted;
    more than 50% exclusions aborts the estimate.  These are numerical
    estimates, not proofs; ``grid_resolution`` records the tau spacing.
    """
    if isinstance(fn, ActivationProfile):
        fn = fn.fn
    taus = np.logspace(-3, -1e-4, tau_grid)
    half = np.linspace(a_max / a_grid, a_max, a_grid // 2)
    a_vals = np.concatenate([-half[::-1], half])

    ratios = []
    excluded = 0
    total = 0
    for a in a_vals:
        base = float(fn(a))
        for tau in taus:
            total += 1
            scaled = float(fn(tau * a))
            if base == 0.0:
                if scaled != 0.0:
                    excluded += 1
                continue
            if scaled == 0.0:
                excluded += 1
                continue
            ratios.append(math.log(abs(scaled / base)) / math.log(tau))
    if not ratios or excluded > total // 2:
        raise EstimationError(
            f"homogeneity estimate unusable: {excluded}/{total} grid points "
            f"excluded, {len(ratios)} usable"
        )
    res = float(np.max(np.diff(np.log(taus))))
    return HomogeneityEstimate(max(ratios), min(ratios), res, excluded / total)


def _identity() -> ActivationProfile:
    return ActivationProfile(
        name="identity",
        fn=lambda x: np.asarray(x, dtype=np.float64) + 0.0,
        deriv1=lambda x: np.ones_like(np.asarray(x, dtype=np.float64)),
        deriv2=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        phi_dot_max=1.0,
        phi_ddot_max=0.0,
        r1=1.0,
        r2=1.0,
    )


def _square() -> ActivationProfile:
    # |phi'| = |2x| is unbounded; the stored supremum is grid-relative
    # (certification window [-20, 20]) and flagged accordingly.
    proto = ActivationProfile(
        name="square",
        fn=lambda x: np.square(np.asarray(x, dtype=np.float64)),
        deriv1=lambda x: 2.0 * np.asarray(x, dtype=np.float64),
        deriv2=lambda x: np.full_like(np.asarray(x, dtype=np.float64), 2.0),
        phi_dot_max=math.inf,
        phi_ddot_max=2.0,
        r1=2.0,
        r2=2.0,
    )
    grid = derivative_bounds(proto)
    return ActivationProfile(
        name="square",
        fn=proto.fn,
        deriv1=proto.deriv1,
        deriv2=proto.deriv2,
        phi_dot_max=grid.phi_dot_max,
        phi_ddot_max=grid.phi_ddot_max,
        r1=2.0,
        r2=2.0,
        bounds_certified=False,
    )


def _tanh() -> ActivationProfile:
    def d1(x):
        return 1.0 - np.square(np.tanh(x))

    def d2(x):
        t = np.tanh(x)
        return -2.0 * t * (1.0 - np.square(t))

    est = homogeneity_exponents(np.tanh)
    return ActivationProfile(
        name="tanh",
        fn=np.tanh,
        deriv1=d1,
        deriv2=d2,
        phi_dot_max=1.0,
        # |tanh''| peaks at 4 / (3 sqrt(3)) where tanh = 1/sqrt(3)
        phi_ddot_max=4.0 / (3.0 * math.sqrt(3.0)),
        r1=est.r1,
        r2=est.r2,
    )


def _gelu() -> ActivationProfile:
    # Exact Gaussian-CDF form x * Phi(x), not the tanh approximation.
    def fn(x):
        x = np.asarray(x, dtype=np.float64)
        return x * ndtr(x)

    def d1(x):
        x = np.asarray(x, dtype=np.float64)
        return ndtr(x) + x * _gauss_pdf(x)

    def d2(x):
        x = np.asarray(x, dtype=np.float64)
        return (2.0 - np.square(x)) * _gauss_pdf(x)

    est = homogeneity_exponents(fn)
    sqrt2 = math.sqrt(2.0)
    return ActivationProfile(
        name="gelu",
        fn=fn,
        deriv1=d1,
        deriv2=d2,
        # phi' peaks at x = sqrt(2), phi'' at the origin
        phi_dot_max=float(ndtr(sqrt2) + sqrt2 * _gauss_pdf(sqrt2)),
        phi_ddot_max=math.sqrt(2.0 / math.pi),
        r1=est.r1,
        r2=est.r2,
    )


def _sigmoid_shifted() -> ActivationProfile:
    def fn(x):
        return expit(np.asarray(x, dtype=np.float64)) - 0.5

    def d1(x):
        s = expit(np.asarray(x, dtype=np.float64))
        return s * (1.0 - s)

    def d2(x):
        s = expit(np.asarray(x, dtype=np.float64))
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    est = homogeneity_exponents(fn)
    return ActivationProfile(
        name="sigmoid-shifted",
        fn=fn,
        deriv1=d1,
        deriv2=d2,
        phi_dot_max=0.25,
        phi_ddot_max=1.0 / (6.0 * math.sqrt(3.0)),
        r1=est.r1,
        r2=est.r2,
    )


def _softplus_shifted() -> ActivationProfile:
    ln2 = math.log(2.0)

    def fn(x):
        return np.logaddexp(0.0, np.asarray(x, dtype=np.float64)) - ln2

    def d1(x):
        return expit(np.asarray(x, dtype=np.float64))

    def d2(x):
        s = expit(np.asarray(x, dtype=np.float64))
        return s * (1.0 - s)

    est = homogeneity_exponents(fn)
    return ActivationProfile(
        name="softplus-shifted",
        fn=fn,
        deriv1=d1,
        deriv2=d2,
        # sup phi' = 1 is approached but never attained
        phi_dot_max=1.0,
        phi_ddot_max=0.25,
        r1=est.r1,
        r2=est.r2,
    )


_BUILDERS = {
    "identity": _identity,
    "square": _square,
    "tanh": _tanh,
    "gelu": _gelu,
    "sigmoid-shifted": _sigmoid_shifted,
    "softplus-shifted": _softplus_shifted,
}

_CACHE: dict[str, ActivationProfile] = {}


def catalog_names() -> list[str]:
    return sorted(_BUILDERS)


def get_activation(name: str) -> ActivationProfile:
    """Look up a catalog activation by name (builds and caches profiles)."""
    key = name.lower()
    if key not in _BUILDERS:
        raise KeyError(
            f"unknown activation {name!r}; catalog: {', '.join(catalog_names())}"
        )
    if key not in _CACHE:
        _CACHE[key] = _BUILDERS[key]()
    return _CACHE[key]
