"""Acceptance criteria, one test each.

Every test prints a ``[PASS]``/``[FAIL]`` line, repeated in the pytest
terminal summary under "acceptance criteria".
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import record_acceptance
from oracles import beta_affine_cdf, central_fd, fibonacci_sphere
from spar.angular import DEFAULT_K_EXCLUDE, DEFAULT_KAPPA_GRID, DEFAULT_M_PRED, ps_log_density, sample_ps
from spar.config import RunConfig
from spar.diagnostics import (
    DEFAULT_BLOCK_LEN,
    DEFAULT_MIN_COUNT,
    DEFAULT_N_BOOT,
    DEFAULT_Q_LEVEL,
    DEFAULT_THETA_MAX,
    DEFAULT_ZETA_GRID,
    binomial_cdf,
    observed_vs_expected,
)
from spar.geometry import sphere_grid, to_polar
from spar.model import contour_radius, fit_spar, load, log_joint_density, save, simulate
from spar.nnet import MlpArchitecture, TrainConfig, backward, forward, init_params
from spar.preprocess import DEFAULT_STEEPNESS_CAP
from spar.radial import _gp_loss, _threshold_loss, fit_threshold, gp_nll, tilted_loss
from spar.stats import binomial_ci
from spar.synthetic import stationary_tail_sample, uniform_sphere

GOLDEN_CONFIG = Path(__file__).parent / "data" / "default_config.yaml"


@pytest.fixture(scope="module")
def stationary_fit():
    X = stationary_tail_sample(50_000, 5, u=2.3, sigma=2.0, xi=-0.1, zeta=0.1, seed=2024)
    t0 = time.perf_counter()
    model = fit_spar(X, 0.1, kappa=200.0, threshold_config=TrainConfig(seed=0))
    return X, model, time.perf_counter() - t0


@pytest.fixture(scope="module")
def model_d2():
    X = stationary_tail_sample(20_000, 2, seed=77)
    return fit_spar(X, 0.1, kappa=40.0, threshold_config=TrainConfig(seed=1))


def test_sphere_grid_counts():
    t0 = time.perf_counter()
    cases = {(3, 5): 102, (5, 5): 1002, (5, 8): 5890, (5, 20): 216002}
    got = {k: len(sphere_grid(*k).directions) for k in cases}
    dt = time.perf_counter() - t0
    ok = got == cases and dt < 10
    record_acceptance("sphere-grid counts", ok, f"{got} in {dt:.2f}s (limit 10s)")
    assert ok


def test_power_spherical_normalisation():
    t0 = time.perf_counter()
    P = fibonacci_sphere(1_000_000)
    mu = np.array([0.48, -0.6, 0.64])
    integrals = {k: 4 * np.pi * float(np.mean(np.exp(ps_log_density(P, mu, k)))) for k in (0.0, 1.0, 10.0, 100.0, 5000.0)}
    uniform = ps_log_density(P[:1000], mu, 0.0)
    err0 = float(np.max(np.abs(np.exp(uniform) - 1 / (4 * np.pi))))
    dt = time.perf_counter() - t0
    ok = all(abs(v - 1) <= 0.02 for v in integrals.values()) and err0 < 1e-12 and dt < 30
    detail = ", ".join(f"k={k:g}: {v:.5f}" for k, v in integrals.items())
    record_acceptance("power-spherical normalisation", ok, f"{detail}; |f0-1/4pi|={err0:.1e}; {dt:.1f}s (limit 30s)")
    assert ok


def test_sampling_law_ks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(31)
    pvals = {}
    for d in (2, 3, 5):
        for kappa in (1.0, 50.0, 1000.0):
            mu = uniform_sphere(1, d, rng)[0]
            t = sample_ps(mu, kappa, 100_000, rng) @ mu
            pvals[(d, kappa)] = stats.kstest(t, lambda x: beta_affine_cdf(x, kappa, d)).pvalue
    dt = time.perf_counter() - t0
    ok = min(pvals.values()) > 0.01 and dt < 60
    record_acceptance("sampling law (KS, 1% level)", ok, f"min p-value {min(pvals.values()):.3f} over 9 cases; {dt:.1f}s (limit 60s)")
    assert ok


def _rel(a, b, floor):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def test_gradient_suites():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    arch = MlpArchitecture(5, (16, 16, 16), 2)

    # backprop through the MLP, central differences with step 1e-5
    worst_bp, n_bp = 0.0, 0
    while n_bp < 100:
        p = init_params(arch, rng)
        for b in p.biases:
            b[:] = 0.1 * rng.standard_normal(b.shape)
        x = rng.standard_normal(5)
        h = x
        near_kink = False
        for a, b in zip(p.weights[:-1], p.biases[:-1]):
            z = a @ h + b
            near_kink |= bool(np.min(np.abs(z)) < 1e-3)
            h = np.maximum(z, 0)
        if near_kink:
            continue
        cot = rng.standard_normal(2)
        g = backward(p, x, cot)
        for arrs, garrs in ((p.weights, g.weights), (p.biases, g.biases)):
            for l, target in enumerate(arrs):

                def f(v, target=target):
                    old = target.copy()
                    target[...] = v
                    val = float(forward(p, x) @ cot)
                    target[...] = old
                    return val

                worst_bp = max(worst_bp, _rel(garrs[l], central_fd(f, target.copy()), 1e-6))
        n_bp += 1

    # GP negative log-likelihood w.r.t. (nu, xi) and tilted loss w.r.t. u
    worst_gp = worst_tl = 0.0
    for _ in range(100):
        xi = rng.uniform(-0.49, 0.099)
        nu = rng.uniform(0.2, 4.0)
        sigma = nu / (1 + xi)
        z = rng.uniform(0, 0.9 * (-sigma / xi) if xi < 0 else 10 * sigma)
        _, dnu, dxi = gp_nll(z, nu, xi)
        fd = central_fd(lambda v: float(gp_nll(z, v[0], v[1])[0]), np.array([nu, xi]))
        worst_gp = max(worst_gp, _rel(np.array([dnu, dxi]), fd, 1e-3))
        r, u = rng.uniform(0.5, 5.0, 2)
        if abs(r - u) > 1e-3:
            _, gu = tilted_loss(r, u, 0.1)
            fd = central_fd(lambda v: float(tilted_loss(r, v[0], 0.1)[0]), np.array([u]))
            worst_tl = max(worst_tl, _rel(np.atleast_1d(gu), fd, 1e-3))
    # both heads' losses through the raw-output transforms
    worst_heads = 0.0
    for _ in range(100):
        raw = rng.standard_normal((1, 2))
        zz = np.array([rng.uniform(0.05, 1.0)])
        if np.isfinite(_gp_loss(raw, zz)[0][0]):
            fd = central_fd(lambda v: float(_gp_loss(v.reshape(1, 2), zz)[0][0]), raw[0])
            worst_heads = max(worst_heads, _rel(_gp_loss(raw, zz)[1][0], fd, 1e-3))
        raw1 = rng.standard_normal((1, 1))
        rr = np.array([rng.uniform(0.1, 5.0)])
        if abs(np.exp(raw1[0, 0]) - rr[0]) > 1e-3:
            fd = central_fd(lambda v: float(_threshold_loss(0.1)(v.reshape(1, 1), rr)[0][0]), raw1[0])
            worst_heads = max(worst_heads, _rel(_threshold_loss(0.1)(raw1, rr)[1][0], fd, 1e-3))
    dt = time.perf_counter() - t0
    ok = max(worst_bp, worst_gp, worst_tl, worst_heads) < 1e-4 and dt < 60
    record_acceptance(
        "gradient suites",
        ok,
        f"max rel err backprop {worst_bp:.1e}, gp_nll {worst_gp:.1e}, tilted {worst_tl:.1e}, heads {worst_heads:.1e}; {dt:.1f}s (limit 60s)",
    )
    assert ok


def test_stationary_recovery(stationary_fit):
    _, model, dt = stationary_fit
    W = uniform_sphere(1000, 5, 99)
    u, sigma, xi = model.radial(W)
    e_xi = float(np.median(np.abs(xi + 0.1)))
    e_sigma = float(np.median(np.abs(sigma - 2.0)) / 2.0)
    e_u = float(np.median(np.abs(u - 2.3)) / 2.3)
    ok = e_xi < 0.05 and e_sigma < 0.1 and e_u < 0.05 and dt < 600
    record_acceptance(
        "stationary recovery",
        ok,
        f"median |xi err| {e_xi:.4f} (<0.05), |sigma err|/2 {e_sigma:.4f} (<0.1), |u err|/2.3 {e_u:.4f} (<0.05); fit {dt:.1f}s (limit 600s)",
    )
    assert ok


def test_threshold_calibration():
    X = stationary_tail_sample(50_000, 5, seed=4242)
    p = to_polar(X)
    parts = []
    ok = True
    for zeta in (0.05, 0.1, 0.2):
        th = fit_threshold(p.angles, p.radii, zeta, config=TrainConfig(seed=3))
        count = int(round(th.exceedance_fraction * len(p)))
        lo, hi = binomial_ci(len(p), zeta, 0.99)
        good = lo <= count <= hi
        ok &= good
        parts.append(f"zeta={zeta}: {count} in [{lo}, {hi}]")
    record_acceptance("threshold calibration (99% band)", ok, "; ".join(parts))
    assert ok


def test_simulation_self_consistency(stationary_fit):
    _, model, _ = stationary_fit
    n = 1_000_000
    p = to_polar(simulate(model, n, seed=8))
    parts = []
    ok = True
    for div in (2, 10, 100):
        beta = model.zeta / div
        count = int(np.sum(p.radii > contour_radius(model, p.angles, beta)))
        lo, hi = binomial_ci(n, beta, 0.99)
        good = lo <= count <= hi
        ok &= good
        parts.append(f"beta={beta:g}: {count} in [{lo}, {hi}]")
    record_acceptance("simulation self-consistency (99% band)", ok, "; ".join(parts))
    assert ok


def test_diagnostic_self_consistency(stationary_fit):
    _, model, _ = stationary_fit
    n = 10_000
    obs = to_polar(simulate(model, n, seed=21)).angles
    sim = to_polar(simulate(model, 100 * n, seed=22)).angles
    table = observed_vs_expected(obs, sim, sphere_grid(5, 5), level=0.95)
    K = len(table.cell)
    needed = 0.95 - 3 * np.sqrt(0.95 * 0.05 / K)
    cov = table.coverage()
    cdf = binomial_cdf(1, 2, 0.5)
    ok = cov >= needed and cdf == 0.75
    record_acceptance(
        "diagnostic self-consistency",
        ok,
        f"{cov:.3f} of {K} occupied cells inside 95% CI (need >= {needed:.3f}); binomial_cdf(1,2,0.5)={cdf}",
    )
    assert ok


def test_mass_check_d2(model_d2):
    from scipy.integrate import quad

    n_theta = 720
    th = (np.arange(n_theta) + 0.5) * 2 * np.pi / n_theta
    W = np.column_stack([np.cos(th), np.sin(th)])
    u, sigma, xi = model_d2.radial(W)
    total = 0.0
    for i in range(n_theta):
        end = u[i] - sigma[i] / xi[i] if xi[i] < 0 else np.inf
        f = lambda r, i=i: np.exp(log_joint_density(model_d2, r * W[i])) * r  # noqa: E731
        total += quad(f, u[i] * (1 + 1e-12), end, limit=200)[0]
    mass = total * 2 * np.pi / n_theta
    ok = abs(mass - model_d2.zeta) <= 0.01 * model_d2.zeta
    record_acceptance("2-D mass check", ok, f"mass {mass:.6f} vs zeta {model_d2.zeta} (tolerance 1%)")
    assert ok


def test_serialisation_bit_exact(model_d2, tmp_path):
    path = tmp_path / "model.spar"
    save(model_d2, path)
    m2 = load(path)
    X = simulate(model_d2, 20_000, seed=3)
    p = to_polar(X)
    above = p.radii > model_d2.threshold(p.angles)
    same_density = np.array_equal(log_joint_density(m2, X[above]), log_joint_density(model_d2, X[above]))
    same_contour = np.array_equal(contour_radius(m2, p.angles, 0.001), contour_radius(model_d2, p.angles, 0.001))
    same_sim = np.array_equal(simulate(m2, 20_000, seed=3), X)
    ok = same_density and same_contour and same_sim
    record_acceptance("serialisation round trip", ok, f"density {same_density}, contour {same_contour}, simulation {same_sim}")
    assert ok


def test_defaults_conformance():
    c = RunConfig()
    dump_ok = c.dump() == GOLDEN_CONFIG.read_text()
    checks = {
        "zeta sweep": np.allclose(c.diagnostics.zeta_grid(), 0.0125 * np.arange(1, 21))
        and np.allclose(DEFAULT_ZETA_GRID, 0.0125 * np.arange(1, 21)),
        "kappa grid": np.allclose(c.model.kappa_grid(), np.logspace(1, 4, 50))
        and np.allclose(DEFAULT_KAPPA_GRID, np.logspace(1, 4, 50)),
        "m_pred": c.model.m_pred == DEFAULT_M_PRED == 1000,
        "k_exclude": c.model.k_exclude == DEFAULT_K_EXCLUDE == 48,
        "theta_max": c.diagnostics.theta_max_deg == 15.0 and np.isclose(DEFAULT_THETA_MAX, np.radians(15)),
        "min_count": c.diagnostics.min_count == DEFAULT_MIN_COUNT == 200,
        "bootstrap": c.diagnostics.n_boot == DEFAULT_N_BOOT == 200 and c.diagnostics.block_len == DEFAULT_BLOCK_LEN == 96,
        "q_level": c.diagnostics.q_level == DEFAULT_Q_LEVEL == 1e-6,
        "steepness cap": c.steepness_cap == DEFAULT_STEEPNESS_CAP == 0.1,
        "zeta": c.model.zeta == 0.1,
        "architecture": c.model.hidden == [16, 16, 16],
    }
    ok = dump_ok and all(checks.values())
    bad = [k for k, v in checks.items() if not v]
    record_acceptance("defaults conformance", ok, f"golden dump {'matches' if dump_ok else 'differs'}; mismatches: {bad or 'none'}")
    assert ok
