"""Angle-dependent threshold and generalised Pareto tail regression.

Two MLP heads take a unit direction ``w`` as input:

* the threshold head outputs ``u(w) = exp(raw)``, trained with the tilted
  (pinball) loss at level ``1 - zeta``;
* the tail head outputs ``nu(w) = exp(raw_1)`` and
  ``xi(w) = -0.5 + 0.6 * logistic(raw_2)``, trained by GP maximum
  likelihood with scale ``sigma = nu / (1 + xi)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .nnet import MlpArchitecture, MlpParams, TrainConfig, TrainHistory, forward, init_params, train
from .stats import binomial_ci

log = logging.getLogger(__name__)

XI_LOW = -0.5
XI_HIGH = 0.1
XI_INIT = 0.05
SMALL_XI = 1e-6
DEFAULT_HIDDEN = (16, 16, 16)
DEFAULT_ZETA = 0.1


_S_EPS = 1e-15  # keeps xi strictly inside the bounds when the logistic saturates


def _xi_logistic(raw):
    return np.clip(expit(raw), _S_EPS, 1.0 - _S_EPS)


def xi_transform(raw):
    return XI_LOW + (XI_HIGH - XI_LOW) * _xi_logistic(raw)


def xi_inverse(xi):
    p = (np.asarray(xi, dtype=float) - XI_LOW) / (XI_HIGH - XI_LOW)
    return np.log(p / (1.0 - p))


def tilted_loss(r, u, zeta):
    """Pinball loss ``rho_{1-zeta}(r - u)`` and its derivative w.r.t. ``u``."""
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    alpha = 1.0 - zeta
    t = r - u
    loss = t * (alpha - (t < 0))
    grad = np.where(t > 0, -alpha, np.where(t < 0, 1.0 - alpha, 0.0))
    return loss, grad


def gp_nll(z, nu, xi):
    """GP negative log-likelihood with modified scale ``nu = sigma*(1+xi)``.

    Returns ``(nll, dnll/dnu, dnll/dxi)``. Excesses at or beyond a finite
    upper endpoint give ``+inf`` with zero gradient.
    """
    z = np.asarray(z, dtype=float)
    nu = np.asarray(nu, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if np.any(z < 0):
        raise ValueError("excesses must be nonnegative")
    z, nu, xi = np.broadcast_arrays(z, nu, xi)
    sigma = nu / (1.0 + xi)
    y = z / sigma
    nll = np.empty(z.shape)
    d_sigma = np.empty(z.shape)
    d_xi = np.empty(z.shape)

    small = np.abs(xi) < SMALL_XI
    # second-order expansion of (1 + 1/xi) log(1 + xi y) about xi = 0
    if np.any(small):
        ys, xs, ss = y[small], xi[small], sigma[small]
        c1 = ys - 0.5 * ys**2
        c2 = ys**3 / 3.0 - 0.5 * ys**2
        nll[small] = np.log(ss) + ys + xs * c1 + xs**2 * c2
        d_sigma[small] = 1.0 / ss - (ys / ss) * (1.0 + xs * (1.0 - ys) + xs**2 * (ys**2 - ys))
        d_xi[small] = c1 + 2.0 * xs * c2

    big = ~small
    if np.any(big):
        yb, xb, sb = y[big], xi[big], sigma[big]
        a = 1.0 + xb * yb
        inside = a > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            la = np.log1p(xb * yb)
            val = np.log(sb) + (1.0 + 1.0 / xb) * la
            ds = 1.0 / sb - (1.0 + xb) * yb / (sb * a)
            dx = -la / xb**2 + (1.0 + 1.0 / xb) * yb / a
        nll[big] = np.where(inside, val, np.inf)
        d_sigma[big] = np.where(inside, ds, 0.0)
        d_xi[big] = np.where(inside, dx, 0.0)

    # chain rule through sigma = nu / (1 + xi)
    d_nu = d_sigma / (1.0 + xi)
    d_xi_total = d_xi - d_sigma * sigma / (1.0 + xi)
    return nll, d_nu, d_xi_total


def gp_quantile_excess(sigma, xi, p):
    """Excess with survival probability ``p`` under GP(``sigma``, ``xi``)."""
    sigma = np.asarray(sigma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    L = -np.log(p)
    small = np.abs(xi) < SMALL_XI
    safe = np.where(small, 1.0, xi)
    exact = sigma * np.expm1(safe * L) / safe
    limit = sigma * L * (1.0 + 0.5 * xi * L)
    return np.where(small, limit, exact)


@dataclass
class ThresholdModel:
    arch: MlpArchitecture
    params: MlpParams
    zeta: float
    history: TrainHistory | None = field(default=None, repr=False)
    degraded: bool = False
    exceedance_fraction: float = float("nan")

    def __call__(self, w):
        return np.exp(forward(self.params, w)[..., 0])


@dataclass
class GpModel:
    arch: MlpArchitecture
    params: MlpParams
    history: TrainHistory | None = field(default=None, repr=False)
    degraded: bool = False
    warmup_history: TrainHistory | None = field(default=None, repr=False)

    def predict(self, w):
        """Return ``(nu, xi, sigma)`` at ``w``."""
        raw = forward(self.params, w)
        nu = np.exp(raw[..., 0])
        xi = xi_transform(raw[..., 1])
        return nu, xi, nu / (1.0 + xi)


def _threshold_loss(zeta):
    def loss(raw, r):
        u = np.exp(raw[:, 0])
        values, g = tilted_loss(r, u, zeta)
        return values, (g * u)[:, None]

    return loss


def _gp_loss(raw, z):
    nu = np.exp(raw[:, 0])
    s = _xi_logistic(raw[:, 1])
    xi = XI_LOW + (XI_HIGH - XI_LOW) * s
    values, dnu, dxi = gp_nll(z, nu, xi)
    dout = np.stack([dnu * nu, dxi * (XI_HIGH - XI_LOW) * s * (1.0 - s)], axis=1)
    return values, dout


def fit_threshold(angles, radii, zeta: float = DEFAULT_ZETA, arch: MlpArchitecture | None = None, config=TrainConfig()):
    """Quantile-regress the ``1 - zeta`` radial quantile on direction.

    The output bias starts at the log of the pooled empirical quantile with
    zero output weights, so training begins from the best constant fit.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    radii = np.asarray(radii, dtype=float)
    n, d = angles.shape
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    if n * zeta < 50:
        log.warning("only %.0f expected exceedances; threshold fit will be noisy", n * zeta)
    if arch is None:
        arch = MlpArchitecture(d, DEFAULT_HIDDEN, 1)
    if arch.output_dim != 1:
        raise ValueError("threshold network needs one output")
    init = init_params(arch, np.random.default_rng([config.seed, 1]))
    init.weights[-1][:] = 0.0
    init.biases[-1][:] = np.log(np.quantile(radii, 1.0 - zeta))
    params, hist = train(angles, radii, _threshold_loss(zeta), arch, config, init=init)
    model = ThresholdModel(arch, params, zeta, hist, hist.degraded)
    frac = float(np.mean(radii > model(angles)))
    lo, hi = binomial_ci(n, zeta, 0.99)
    model.exceedance_fraction = frac
    if not lo <= frac * n <= hi:
        model.degraded = True
        log.warning("exceedance fraction %.4f outside the 99%% band around %.4f", frac, zeta)
    return model


def exceedance_set(angles, radii, threshold: ThresholdModel):
    """Indices with ``r > u(w)`` and their excesses ``r - u(w)``."""
    radii = np.asarray(radii, dtype=float)
    u = threshold(np.atleast_2d(angles))
    idx = np.flatnonzero(radii > u)
    if idx.size == 0:
        raise ValueError("no threshold exceedances")
    return idx, radii[idx] - u[idx]


def init_gp_nonneg_shape(arch: MlpArchitecture, mean_excess: float, seed=None) -> MlpParams:
    """Random hidden layers; output layer gives ``xi = 0.05`` and
    ``nu = mean_excess`` at every direction."""
    if arch.output_dim != 2:
        raise ValueError("GP network needs two outputs")
    params = init_params(arch, seed)
    params.weights[-1][:] = 0.0
    params.biases[-1][0] = np.log(mean_excess)
    params.biases[-1][1] = xi_inverse(XI_INIT)
    return params


def fit_gp(
    angles,
    excesses,
    arch: MlpArchitecture | None = None,
    config=TrainConfig(),
    warmup: bool = True,
) -> GpModel:
    """Fit the ``(nu, xi)`` network to threshold excesses by GP likelihood.

    Training starts from :func:`init_gp_nonneg_shape`. With ``warmup`` a
    first pass moves only the output biases (a direction-free GP fit, at ten
    times the learning rate) before all weights are trained; both passes use
    the same validation split.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    excesses = np.asarray(excesses, dtype=float)
    if len(excesses) < 50:
        log.warning("only %d exceedances for the GP fit", len(excesses))
    if arch is None:
        arch = MlpArchitecture(angles.shape[1], DEFAULT_HIDDEN, 2)
    params = init_gp_nonneg_shape(arch, float(np.mean(excesses)), np.random.default_rng([config.seed, 2]))
    warm_hist = None
    if warmup:
        flags = [False] * (2 * len(params.weights))
        flags[-1] = True
        warm_cfg = replace(config, learning_rate=10.0 * config.learning_rate, patience=min(config.patience, 20))
        params, warm_hist = train(angles, excesses, _gp_loss, arch, warm_cfg, init=params, trainable=flags)
    params, hist = train(angles, excesses, _gp_loss, arch, config, init=params)
    degraded = hist.degraded or (warm_hist is not None and warm_hist.degraded)
    return GpModel(arch, params, hist, degraded, warm_hist)


def predict_radial(threshold: ThresholdModel, gp: GpModel, w):
    """Return ``(u, sigma, xi)`` at ``w``."""
    u = threshold(w)
    _, xi, sigma = gp.predict(w)
    return u, sigma, xi


def conditional_quantile(threshold: ThresholdModel, gp: GpModel, w, beta: float):
    """Radius exceeded with total probability ``beta`` at direction ``w``."""
    zeta = threshold.zeta
    if not 0.0 < beta <= zeta:
        raise ValueError("beta must lie in (0, zeta]")
    u, sigma, xi = predict_radial(threshold, gp, w)
    return u + gp_quantile_excess(sigma, xi, beta / zeta)
