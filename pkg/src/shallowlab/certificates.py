"""Every constant and condition the convergence theory needs.

Computes the near-isometry / smoothness constants at initialization, the
initialization and step-size certificates, the spectral band for the
feature matrix, the width requirement with its leading constant, the
concentration failure probability, and the lazy-regime classification.
Hidden constants that the theory leaves symbolic are exposed as explicit
knobs (C_init, C_eta, C) so every certificate reports a margin rather
than a bare boolean.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .activations import ActivationProfile
from .errors import (
    DegenerateCertificateError,
    InfeasibleDataError,
    UnusableOrderError,
)
from .hermite import HermiteExpansion, expected_gram, hermite_coefficients
from .linalg import (
    RngStream,
    as_matrix,
    khatri_rao_gram,
    svd_extremes,
    sym_eig_extremes,
)
from .network import NetParams


@dataclass(frozen=True)
class TheoryConstants:
    """Near-isometry, smoothness, and loss constants for one instance.

    rho_phi is always mu_phi / (2 beta_phi); alpha_f = beta_f = 2 for the
    squared Frobenius loss.  ``eta`` stays None until filled in by
    ``learning_rate``.
    """

    mu_phi: float
    nu_phi: float
    beta_phi: float
    rho_phi: float
    chi_max: float
    alpha_f: float = 2.0
    beta_f: float = 2.0
    eta: float | None = None

    def with_eta(self, eta: float) -> "TheoryConstants":
        return replace(self, eta=eta)


@dataclass(frozen=True)
class InitScheme:
    """Layer-wise Gaussian initialization scales with a product budget."""

    omega1: float
    omega2: float
    product_budget: float

    def __post_init__(self):
        if self.omega1 <= 0 or self.omega2 <= 0:
            raise ValueError("omega1 and omega2 must be positive")

    @property
    def within_budget(self) -> bool:
        return self.omega1 * self.omega2 <= self.product_budget * (1.0 + 1e-9)

    @classmethod
    def from_ratio(cls, ratio: float, product_budget: float) -> "InitScheme":
        """Split a product budget so that omega2 / omega1 = ratio exactly."""
        if ratio <= 0 or product_budget <= 0:
            raise ValueError("ratio and product_budget must be positive")
        return cls(
            omega1=math.sqrt(product_budget / ratio),
            omega2=math.sqrt(product_budget * ratio),
            product_budget=product_budget,
        )


@dataclass(frozen=True)
class ProbeParams:
    """Concentration slack constants (the paper leaves them symbolic).

    delta1/delta2 shrink and inflate the spectral band; delta3 controls
    the Hoeffding term; delta4 is the shared row-norm event constant
    (standing in for both k1 and k2); C is the universal constant.
    """

    delta1: float = 0.5
    delta2: float = 0.5
    delta3: float = 3.0
    delta4: float = 3.0
    k3: float = 1.0
    c_universal: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.delta1 < 1.0 and 0.0 < self.delta2 < 1.0):
            raise ValueError("delta1 and delta2 must lie in (0, 1)")
        if self.delta3 <= 0 or self.delta4 <= 0 or self.c_universal <= 0:
            raise ValueError("delta3, delta4, C must be positive")


@dataclass(frozen=True)
class WidthCertificate:
    """Minimal hidden width demanded by the convergence guarantee."""

    t: int
    sigma_min_xt: float
    sigma_max_x: float
    xi: float
    d1_required: float
    d1_actual: int
    satisfied: bool
    c0_term_dominant: bool
    notes: str = ""


@dataclass(frozen=True)
class GramDiagnostics:
    """Monte-Carlo feature Gram against its closed-form expectation."""

    empirical_gram: np.ndarray
    expected_gram: np.ndarray
    rel_frobenius_error: float
    sigma_min_emp: float
    sigma_max_emp: float
    lower_bound: float
    upper_bound: float


LAZY_NOTE = (
    "necessary-condition analysis: a diverging bound permits non-lazy "
    "training but does not guarantee it"
)


@dataclass(frozen=True)
class LazyRegimeReport:
    """Necessary-condition classification of the training regime.

    The bound value upper-bounds the gap between training and its
    linearization; a diverging bound means non-lazy behavior is possible,
    a vanishing one means lazy training is guaranteed asymptotically.
    This is a necessary-condition analysis only: it never proves a run is
    non-lazy.
    """

    omega1: float
    omega2: float
    ratio: float
    bound_value: float
    classification: str
    note: str = LAZY_NOTE


NON_LAZY = "non-lazy possible"
LAZY = "lazy guaranteed asymptotically"
INCONCLUSIVE = "inconclusive"


def constants_at_init(
    theta0: NetParams, x, phi: ActivationProfile, chi_max: float
) -> TheoryConstants:
    """Measure (mu, nu, beta, rho) at a concrete initialization.

    mu   = sigma_min(phi(W0 X))
    nu   = phi_dot_max * sigma_max(X) * sigma_max(V0) + sigma_max(phi(W0 X))
    beta = sqrt(2) * sigma_max(X) * (phi_dot_max + phi_ddot_max * chi_max)
    """
    x = as_matrix(x, "X")
    if chi_max <= 0:
        raise ValueError(f"chi_max must be positive, got {chi_max}")
    feats = phi.fn(theta0.W @ x)
    smax_f, smin_f = svd_extremes(feats)
    if smin_f == 0.0:
        raise DegenerateCertificateError(
            "feature matrix phi(W0 X) is rank deficient (mu = 0)",
            diagnostics={
                "feature_shape": feats.shape,
                "sigma_max_features": smax_f,
                "hint": "increase d1 or check that d0**t >= n for a usable order t",
            },
        )
    smax_x = svd_extremes(x).sigma_max
    smax_v = svd_extremes(theta0.V).sigma_max
    mu = smin_f
    nu = phi.phi_dot_max * smax_x * smax_v + smax_f
    beta = math.sqrt(2.0) * smax_x * (phi.phi_dot_max + phi.phi_ddot_max * chi_max)
    return TheoryConstants(
        mu_phi=mu,
        nu_phi=nu,
        beta_phi=beta,
        rho_phi=mu / (2.0 * beta),
        chi_max=chi_max,
    )


def certify_init(h0: float, c: TheoryConstants, c_init: float = 1e-2):
    """Check the initialization condition h0 <= C alpha_f mu^6 / (beta^2 nu^2).

    Returns (satisfied, margin) with margin = rhs / h0, so margins above 1
    certify the condition with that much headroom.
    """
    if c_init <= 0:
        raise ValueError(f"c_init must be positive, got {c_init}")
    rhs = c_init * c.alpha_f * c.mu_phi**6 / (c.beta_phi**2 * c.nu_phi**2)
    margin = rhs / max(h0, 1e-300)
    return h0 <= rhs, margin


def learning_rate(
    c: TheoryConstants, grad_f_norm_at_init: float, c_eta: float = 1.0
) -> float:
    """Step size eta = C / (beta_phi ||Df(z0)|| + beta_f mu^2 + beta_f nu^2).

    ``grad_f_norm_at_init`` is the output-space gradient norm 2 ||Z0 - Y||.
    """
    if c_eta <= 0:
        raise ValueError(f"c_eta must be positive, got {c_eta}")
    denom = (
        c.beta_phi * grad_f_norm_at_init
        + c.beta_f * c.mu_phi**2
        + c.beta_f * c.nu_phi**2
    )
    if denom <= 0:
        raise DegenerateCertificateError("learning-rate denominator is zero")
    return c_eta / denom


def khatri_rao_sigma_min(x, t: int) -> float:
    """sigma_min of the t-th Khatri-Rao power, via its n x n Gram."""
    return math.sqrt(sym_eig_extremes(khatri_rao_gram(x, t)).sigma_min)


def gram_bounds(
    x,
    expansion: HermiteExpansion,
    d1: int,
    t: int,
    omega1: float,
    r1: float,
    r2: float,
    probes: ProbeParams,
):
    """High-probability band for the extreme singular values of phi(W0 X).

    lower = omega1^r1 sqrt((1 - delta1) (c_t^2 / t!) d1) sigma_min(X*t)
    upper = sqrt(1 + delta2) omega1^r2
            (sqrt((c_1^2 + c_inf^2) d1) sigma_max(X) + |c_0| sqrt(d1 n))
    """
    x = as_matrix(x, "X")
    if d1 < 1:
        raise ValueError(f"d1 must be positive, got {d1}")
    if omega1 <= 0:
        raise ValueError(f"omega1 must be positive, got {omega1}")
    ct = expansion.coefficient(t)
    if ct == 0.0:
        raise UnusableOrderError(
            f"Hermite coefficient c_{t} vanishes; no spectral lower bound at this order",
            next_order=expansion.first_usable_order(t + 1),
        )
    smin_xt = khatri_rao_sigma_min(x, t)
    if smin_xt <= 0.0:
        raise ValueError(
            f"sigma_min(X^(*{t})) = 0; the Khatri-Rao power is rank deficient"
        )
    n = x.shape[1]
    smax_x = svd_extremes(x).sigma_max
    c1 = expansion.coefficient(1)
    c0 = expansion.coefficient(0)
    lower = (
        omega1**r1
        * math.sqrt((1.0 - probes.delta1) * ct**2 / math.factorial(t) * d1)
        * smin_xt
    )
    upper = (
        math.sqrt(1.0 + probes.delta2)
        * omega1**r2
        * (
            math.sqrt((c1**2 + expansion.c_infinity_sq) * d1) * smax_x
            + abs(c0) * math.sqrt(d1 * n)
        )
    )
    return lower, upper


def monte_carlo_gram(
    x,
    phi: ActivationProfile,
    omega1: float,
    d1: int,
    num_samples: int,
    rng: RngStream,
    expansion: HermiteExpansion | None = None,
    batch: int = 256,
) -> GramDiagnostics:
    """Average phi(X^T W0^T) phi(W0 X) over W0 draws and compare with the
    Hermite-series expectation.

    The closed-form target assumes standard-normal rows (omega1 = 1); for
    other scales the comparison is still populated but the relative error
    reflects the scale mismatch.  Sampling is chunked in a fixed order, so
    the result depends only on the stream.
    """
    x = as_matrix(x, "X")
    if num_samples < 100:
        raise ValueError(f"need at least 100 samples, got {num_samples}")
    if expansion is None:
        expansion = hermite_coefficients(phi, order=30)
    n = x.shape[1]
    d0 = x.shape[0]
    gen = rng.generator()
    acc = np.zeros((n, n))
    done = 0
    while done < num_samples:
        b = min(batch, num_samples - done)
        w = omega1 * gen.standard_normal((b, d1, d0))
        feats = phi.fn(np.einsum("bij,jk->bik", w, x))
        acc += np.einsum("bij,bik->jk", feats, feats)
        done += b
    emp = acc / num_samples
    emp = (emp + emp.T) / 2.0

    expect = expected_gram(x, expansion, d1)
    rel = float(np.linalg.norm(emp - expect) / np.linalg.norm(expect))
    emp_ext = sym_eig_extremes(emp)
    exp_ext = sym_eig_extremes(expect)
    return GramDiagnostics(
        empirical_gram=emp,
        expected_gram=expect,
        rel_frobenius_error=rel,
        sigma_min_emp=emp_ext.sigma_min,
        sigma_max_emp=emp_ext.sigma_max,
        lower_bound=exp_ext.sigma_min,
        upper_bound=exp_ext.sigma_max,
    )


def width_requirement(
    x,
    expansion: HermiteExpansion,
    phi: ActivationProfile,
    probes: ProbeParams,
    omega1: float,
    chi_max: float,
    d1_actual: int,
) -> WidthCertificate:
    """Evaluate the minimal-width formula with its leading constant xi.

    Picks the smallest order t >= 1 whose Hermite coefficient is nonzero
    and whose Khatri-Rao Gram is nonsingular, then computes

      xi = sqrt(d3^2 c0^2 (1+d2) d4^4 (phi_dot + phi_ddot chi)^2 t!^3
                / (omega1^(6 r1 - 2 r2) (1-d1)^3 c_t^6))
      d1_required = xi sigma_max(X)^2 sqrt(n) / sigma_min(X*t)^3.
    """
    x = as_matrix(x, "X")
    if omega1 <= 0:
        raise ValueError(f"omega1 must be positive, got {omega1}")
    d0, n = x.shape

    t = None
    smin_xt = 0.0
    for cand in range(1, expansion.order + 1):
        if expansion.coefficient(cand) == 0.0:
            continue
        smin = khatri_rao_sigma_min(x, cand)
        if smin > 1e-8:
            t = cand
            smin_xt = smin
            break
    if t is None:
        raise InfeasibleDataError(
            "no order t has both a nonzero coefficient and a nonsingular "
            f"Khatri-Rao Gram (d0={d0}, n={n}); the data cannot certify a width"
        )

    c0 = expansion.coefficient(0)
    ct = expansion.coefficient(t)
    if c0 == 0.0:
        warnings.warn(
            f"activation {expansion.name or phi.name!r} has c0 = 0 (odd function); "
            "the width requirement degenerates and the spectral upper bound "
            "loses its dominant term",
            RuntimeWarning,
            stacklevel=2,
        )
    smax_x = svd_extremes(x).sigma_max
    deriv_sum = phi.phi_dot_max + phi.phi_ddot_max * chi_max
    xi = math.sqrt(
        probes.delta3**2
        * c0**2
        * (1.0 + probes.delta2)
        * probes.delta4**4
        * deriv_sum**2
        * math.factorial(t) ** 3
        / (omega1 ** (6.0 * phi.r1 - 2.0 * phi.r2) * (1.0 - probes.delta1) ** 3 * ct**6)
    )
    d1_required = width_from_spectra(xi, smax_x, smin_xt, n)

    # Is the |c0| sqrt(d1 n) term actually dominant in the nu estimate?
    c1 = expansion.coefficient(1)
    fluct = math.sqrt((c1**2 + expansion.c_infinity_sq) * d1_actual) * smax_x
    dominant = abs(c0) * math.sqrt(d1_actual * n) >= fluct
    return WidthCertificate(
        t=t,
        sigma_min_xt=smin_xt,
        sigma_max_x=smax_x,
        xi=xi,
        d1_required=d1_required,
        d1_actual=d1_actual,
        satisfied=d1_actual >= d1_required,
        c0_term_dominant=dominant,
        notes=(
            "without a spectral-norm cap on V the same analysis needs "
            f"d1 of order n^(5/3)/d0 = {n ** (5.0 / 3.0) / d0:.1f}"
        ),
    )


def width_from_spectra(xi: float, sigma_max_x: float, sigma_min_xt: float, n: int) -> float:
    """d1_required = xi sigma_max(X)^2 sqrt(n) / sigma_min(X*t)^3."""
    return xi * sigma_max_x**2 * math.sqrt(n) / sigma_min_xt**3


def failure_probability(
    dims,
    x,
    probes: ProbeParams,
    expected_gram_extremes,
    phi_dot_max: float,
) -> float:
    """Total probability psi = p1 + ... + p5 that some concentration event fails.

    ``expected_gram_extremes`` must be the extreme eigenvalues of the
    width-normalized expected Gram (compute ``expected_gram`` with d1 = 1),
    so the same data can be swept across widths.  The five terms: row-norm
    events for both layers, lower and upper spectral concentration with
    the Lipschitz constant kappa = 4 phi_dot^2 sigma_max(X)^2 delta4
    sqrt(d0 log d1), the top-singular-value bound for V0, and the
    Hoeffding term exp(-C delta3^2).  Capped at 1.
    """
    d0, d1, d2, n = dims
    if d1 < 2:
        raise ValueError("d1 must be at least 2 for the log d1 terms")
    base_min, base_max = expected_gram_extremes
    smax_x = svd_extremes(x).sigma_max
    c = probes.c_universal
    log_d1 = math.log(d1)

    p1 = math.exp(-c * probes.delta4 * d0 * log_d1) + math.exp(
        -c * probes.delta4 * d2 * log_d1
    )
    kappa = 4.0 * phi_dot_max**2 * smax_x**2 * probes.delta4 * math.sqrt(d0 * log_d1)
    p2 = math.exp(-((probes.delta1 * d1 * base_min / kappa) ** 2))
    p3 = math.exp(-((probes.delta2 * d1 * base_max / kappa) ** 2))
    p4 = math.exp(-c * d1)
    p5 = math.exp(-c * probes.delta3**2)
    return min(p1 + p2 + p3 + p4 + p5, 1.0)


def lazy_regime_report(
    omega1: float,
    omega2: float,
    dims,
    constants: TheoryConstants | None,
    expansion: HermiteExpansion,
    phi: ActivationProfile,
    sigma_max_x: float | None = None,
    sigma_min_xt: float = 1.0,
    delta2: float = 0.5,
    r1: float = 1.0,
    r2: float = 1.0,
) -> LazyRegimeReport:
    """Evaluate the linearization-gap upper bound and classify the regime.

    The bound follows the homogeneous rewriting of the network (r1 = r2 = 1
    by default, overridable), with the in-training spectral cap on V
    replaced by its trajectory estimate.  It diverges as omega2/omega1
    grows and vanishes as it shrinks; the extremes classify as non-lazy
    possible / lazy guaranteed, everything in between is inconclusive.
    """
    if omega1 <= 0 or omega2 <= 0:
        raise ValueError("omega1 and omega2 must be positive")
    d0, d1, d2, n = dims
    if sigma_max_x is None:
        sigma_max_x = math.sqrt(n / d0)
    c0 = abs(expansion.coefficient(0))
    sq_d1 = math.sqrt(d1)

    chi_hat = (
        (omega2 * phi.phi_dot_max * sigma_max_x + omega1**r2 * c0 * math.sqrt(n))
        * sigma_max_x
        / (omega1 ** (2.0 * r1) * sq_d1 * sigma_min_xt**2)
        + omega2 * sq_d1
    )
    numer = math.sqrt(2.0) * sigma_max_x * (
        phi.phi_dot_max + phi.phi_ddot_max * chi_hat
    )
    denom = (
        omega2 * phi.phi_dot_max * sigma_max_x * sq_d1
        + omega1**r2 * c0 * math.sqrt((1.0 + delta2) * d1 * n)
    ) ** 2
    bound = numer / denom

    ratio = omega2 / omega1
    if ratio >= 100.0:
        label = NON_LAZY
    elif ratio <= 0.01:
        label = LAZY
    else:
        label = INCONCLUSIVE
    return LazyRegimeReport(
        omega1=omega1,
        omega2=omega2,
        ratio=ratio,
        bound_value=bound,
        classification=label,
    )
