"""Full-batch gradient descent, gradient flow, and run certificates.

The descent loop optionally runs a linearized twin alongside the true
iterates: the twin's predictions go through the Jacobian frozen at the
starting point, so the gap |h(theta_i) - h_lin(theta_lin_i)| measures how
far training strays from its linearization (the lazy-training diagnostic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .activations import ActivationProfile
from .errors import DimensionError, DivergenceError
from .network import Dataset, NetParams, gradient, loss, residual_gradient


@dataclass(frozen=True)
class TrainingTrace:
    """Per-iteration record of a descent run.

    ``losses[i]`` is the loss at iterate i (index 0 = initialization);
    ``path_length`` accumulates step norms, so it always dominates the
    final distance from the start.  ``chi_running_max`` tracks the largest
    top singular value of V seen along the run.
    """

    losses: np.ndarray
    grad_norms: np.ndarray
    path_length: float
    dist_from_init: np.ndarray
    chi_running_max: float
    lazy_deviation: np.ndarray | None = None
    fitted_rate: float | None = None
    final_params: NetParams | None = None

    @property
    def iterations(self) -> int:
        return len(self.losses) - 1

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


@dataclass(frozen=True)
class FlowTrace:
    times: np.ndarray
    losses: np.ndarray
    path_length: float
    dist_from_init: np.ndarray

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def _sigma_max_small_side(v: np.ndarray) -> float:
    """Top singular value via the Gram on the smaller side."""
    g = v @ v.T if v.shape[0] <= v.shape[1] else v.T @ v
    return math.sqrt(max(float(np.linalg.eigvalsh(g)[-1]), 0.0))


def _loss_and_grad_arrays(w, v, x, y, phi: ActivationProfile):
    """Fused loss/gradient on raw arrays, tolerant of overflow.

    Returns (loss, grad_W, grad_V) without finiteness validation so the
    caller can turn a blow-up into a DivergenceError with its iteration.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        wx = w @ x
        feats = phi.fn(wx)
        r = v @ feats - y
        rg = 2.0 * r
        gw = (phi.deriv1(wx) * (v.T @ rg)) @ x.T
        gv = rg @ feats.T
        return float(np.vdot(r, r)), gw, gv


def _loss_and_grad(theta: NetParams, data: Dataset, phi: ActivationProfile):
    cur, gw, gv = _loss_and_grad_arrays(theta.W, theta.V, data.X, data.Y, phi)
    return cur, NetParams(gw, gv)


class _FrozenLinearization:
    """Prediction map of the network linearized at theta0."""

    def __init__(self, theta0: NetParams, data: Dataset, phi: ActivationProfile):
        self.w0 = theta0.W
        self.v0 = theta0.V
        self.x = data.X
        self.y = data.Y
        wx0 = theta0.W @ data.X
        self.dphi0 = phi.deriv1(wx0)
        self.feats0 = phi.fn(wx0)
        self.z0 = theta0.V @ self.feats0

    def predict_arrays(self, w, v) -> np.ndarray:
        return (
            self.z0
            + self.v0 @ (self.dphi0 * ((w - self.w0) @ self.x))
            + (v - self.v0) @ self.feats0
        )

    def loss_arrays(self, w, v) -> float:
        r = self.predict_arrays(w, v) - self.y
        return float(np.vdot(r, r))

    def gradient_arrays(self, w, v):
        r = residual_gradient(self.predict_arrays(w, v), self.y)
        gw = (self.dphi0 * (self.v0.T @ r)) @ self.x.T
        gv = r @ self.feats0.T
        return gw, gv

    def loss(self, theta: NetParams) -> float:
        return self.loss_arrays(theta.W, theta.V)


def gd_train(
    theta0: NetParams,
    data: Dataset,
    phi: ActivationProfile,
    eta: float,
    max_iters: int,
    stop_loss: float = 1e-10,
    track_lazy: bool = False,
) -> TrainingTrace:
    """Run theta_{i+1} = theta_i - eta * grad h(theta_i) until the loss
    drops to ``stop_loss`` or ``max_iters`` steps are taken.

    With ``track_lazy`` a twin sequence descends the frozen-Jacobian
    linearized loss from the same starting point with the same step size,
    and the absolute loss gap is recorded per iteration (exactly 0 at
    iterate 0 by construction).
    """
    if eta <= 0:
        raise ValueError(f"learning rate must be positive, got {eta}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be positive, got {max_iters}")

    twin = _FrozenLinearization(theta0, data, phi) if track_lazy else None
    w, v = theta0.W, theta0.V
    w0, v0 = theta0.W, theta0.V
    w_lin, v_lin = w0, v0
    x, y = data.X, data.Y

    losses = []
    grad_norms = []
    dists = [0.0]
    lazy = [] if track_lazy else None
    path = 0.0
    chi = _sigma_max_small_side(v0)

    for i in range(max_iters + 1):
        cur, gw, gv = _loss_and_grad_arrays(w, v, x, y, phi)
        gnorm_sq = float(np.vdot(gw, gw) + np.vdot(gv, gv))
        if not math.isfinite(cur) or not math.isfinite(gnorm_sq):
            raise DivergenceError("non-finite loss in gradient descent", i)
        losses.append(cur)
        grad_norms.append(math.sqrt(gnorm_sq))
        if track_lazy:
            lazy.append(abs(cur - twin.loss_arrays(w_lin, v_lin)))
        if i > 0:
            dists.append(
                math.sqrt(
                    float(np.vdot(w - w0, w - w0) + np.vdot(v - v0, v - v0))
                )
            )
            chi = max(chi, _sigma_max_small_side(v))
        if cur <= stop_loss or i == max_iters:
            break
        path += eta * math.sqrt(gnorm_sq)
        w = w - eta * gw
        v = v - eta * gv
        if track_lazy:
            lw, lv = twin.gradient_arrays(w_lin, v_lin)
            w_lin = w_lin - eta * lw
            v_lin = v_lin - eta * lv

    return TrainingTrace(
        losses=np.asarray(losses),
        grad_norms=np.asarray(grad_norms),
        path_length=path,
        dist_from_init=np.asarray(dists),
        chi_running_max=chi,
        lazy_deviation=None if lazy is None else np.asarray(lazy),
        final_params=NetParams(w, v),
    )


def gradient_flow(
    theta0: NetParams,
    data: Dataset,
    phi: ActivationProfile,
    dt: float,
    t_end: float,
) -> FlowTrace:
    """Integrate the steepest-descent curve gamma' = -grad h(gamma) with
    classical fixed-step fourth-order Runge-Kutta."""
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    n_steps = max(1, int(round(t_end / dt)))

    def vel(th: NetParams) -> NetParams:
        return -1.0 * gradient(th, data, phi)

    theta = theta0
    times = [0.0]
    losses = [loss(theta0, data, phi)]
    dists = [0.0]
    path = 0.0

    for k in range(n_steps):
        try:
            k1 = vel(theta)
            k2 = vel(theta + (dt / 2.0) * k1)
            k3 = vel(theta + (dt / 2.0) * k2)
            k4 = vel(theta + dt * k3)
            step = (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            theta = theta + step
        except DimensionError as exc:
            raise DivergenceError("non-finite state in gradient flow", k + 1) from exc
        cur = loss(theta, data, phi)
        if not math.isfinite(cur) or not theta.is_finite():
            raise DivergenceError("non-finite state in gradient flow", k + 1)
        path += step.norm()
        times.append((k + 1) * dt)
        losses.append(cur)
        dists.append((theta - theta0).norm())

    return FlowTrace(
        times=np.asarray(times),
        losses=np.asarray(losses),
        path_length=path,
        dist_from_init=np.asarray(dists),
    )


def rate_certificate(trace: TrainingTrace, constants, eta: float):
    """Fit geometric decay  losses[i] ~ losses[0] (1 - r)^i  and report it.

    Returns (monotone, fitted_rate, r_squared).  ``monotone`` allows a
    1e-12 relative tolerance; the fit runs over the segment of the trace
    with losses above 1e-14 and keeps the intercept pinned at the first
    loss, so a positive ``fitted_rate`` together with a high r_squared
    certifies linear convergence.  Constant losses fit exactly with
    rate 0.
    """
    losses = np.asarray(trace.losses, dtype=np.float64)
    if len(losses) < 10:
        raise ValueError(f"need at least 10 recorded losses, got {len(losses)}")
    if losses[0] <= 0:
        raise ValueError("initial loss must be positive for a rate fit")

    monotone = bool(np.all(losses[1:] <= losses[:-1] * (1.0 + 1e-12)))

    keep = losses > 1e-14
    idx = np.nonzero(keep)[0]
    ys = np.log(losses[idx])
    ii = idx.astype(np.float64)
    ii_c = ii - ii.mean()
    ys_c = ys - ys.mean()
    denom = float(np.dot(ii_c, ii_c))
    slope = float(np.dot(ii_c, ys_c) / denom) if denom > 0 else 0.0
    fitted_rate = 1.0 - math.exp(slope)

    resid = ys_c - slope * ii_c
    ss_res = float(np.dot(resid, resid))
    ss_tot = float(np.dot(ys_c, ys_c))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return monotone, fitted_rate, r_squared


def confinement_check(trace: TrainingTrace, constants, h0: float, k_len: float = 10.0):
    """Compare the realized trajectory against the theory's length budget.

    ``length_bound`` is k_len * nu * sqrt(h0) / (mu^2 sqrt(alpha_f)); the
    run is confined when its accumulated path stays under that budget and
    every iterate stays within the radius rho of the start.
    """
    length_bound = (
        k_len
        * constants.nu_phi
        * math.sqrt(max(h0, 0.0))
        / (constants.mu_phi**2 * math.sqrt(constants.alpha_f))
    )
    max_dist = float(np.max(trace.dist_from_init)) if len(trace.dist_from_init) else 0.0
    confined = trace.path_length <= length_bound and max_dist <= constants.rho_phi
    return confined, length_bound
