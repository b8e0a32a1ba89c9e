import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import beta_affine_cdf, fibonacci_sphere, ps_log_density_direct
from spar.angular import (
    DEFAULT_K_EXCLUDE,
    DEFAULT_KAPPA_GRID,
    DEFAULT_M_PRED,
    KdeModel,
    kde_log_density,
    optimize_bandwidth,
    ps_log_density,
    sample_kde,
    sample_ps,
)
from spar.diagnostics import voronoi_assign
from spar.geometry import householder_to, sphere_grid
from spar.stats import binomial_ci
from spar.synthetic import uniform_sphere


def test_uniform_kernel_s2():
    w, mu = np.array([0.0, 0, 1]), np.array([1.0, 0, 0])
    assert ps_log_density(w, mu, 0.0) == pytest.approx(np.log(1 / (4 * np.pi)), abs=1e-12)


def test_mode_value_kappa10():
    mu = np.array([0.0, 1.0, 0.0])
    ref = ps_log_density_direct(mu, mu, 10.0)
    assert ps_log_density(mu, mu, 10.0) == pytest.approx(ref, abs=1e-12)


def test_large_kappa_stirling():
    mu = np.eye(5)[2]
    val = ps_log_density(mu, mu, 5000.0)
    assert np.isfinite(val)
    eta = 2.0
    gamma_ratio = val + eta * np.log(4 * np.pi)
    assert gamma_ratio == pytest.approx(eta * np.log(5000.0), rel=1e-3)


def test_antipode_is_minus_inf():
    mu = np.array([1.0, 0.0, 0.0])
    assert ps_log_density(-mu, mu, 3.0) == -np.inf
    assert np.isfinite(ps_log_density(-mu, mu, 0.0))


def test_negative_kappa_rejected():
    with pytest.raises(ValueError):
        ps_log_density(np.array([1.0, 0]), np.array([1.0, 0]), -1.0)


@pytest.mark.parametrize("kappa", [0.0, 1.0, 10.0, 100.0])
def test_normalisation_s2_qmc(kappa):
    P = fibonacci_sphere(400_000)
    mu = np.array([0.3, -0.5, 0.81])
    mu /= np.linalg.norm(mu)
    integral = 4 * np.pi * np.mean(np.exp(ps_log_density(P, mu, kappa)))
    assert integral == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("kappa", [0.0, 3.0, 40.0])
def test_normalisation_circle(kappa):
    th = np.linspace(0, 2 * np.pi, 200_001)[:-1]
    P = np.column_stack([np.cos(th), np.sin(th)])
    integral = 2 * np.pi * np.mean(np.exp(ps_log_density(P, np.array([0.0, 1.0]), kappa)))
    assert integral == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.floats(0, 500), st.integers(0, 2**31))
def test_rotation_invariance(d, kappa, seed):
    rng = np.random.default_rng(seed)
    w, mu = uniform_sphere(2, d, rng)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    a = ps_log_density(w, mu, kappa)
    b = ps_log_density(Q @ w, Q @ mu, kappa)
    if np.isfinite(a):
        assert abs(a - b) < 1e-12 * max(1.0, abs(a))


def test_kde_single_center_uniform():
    c = np.array([[0.0, 0.0, 1.0]])
    m = KdeModel(c, 0.0)
    assert kde_log_density(c[0], m) == pytest.approx(np.log(1 / (4 * np.pi)), abs=1e-14)


def test_kde_duplicate_centers(rng):
    c = uniform_sphere(1, 3, rng)
    w = uniform_sphere(20, 3, rng)
    a = kde_log_density(w, KdeModel(c, 25.0))
    b = kde_log_density(w, KdeModel(np.vstack([c, c]), 25.0))
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_kde_mc_normalisation():
    centers = uniform_sphere(50, 3, 7)
    m = KdeModel(centers, 30.0)
    P = uniform_sphere(1_000_000, 3, 8)
    assert 4 * np.pi * np.mean(np.exp(kde_log_density(P, m))) == pytest.approx(1.0, abs=0.02)


def test_kde_order_invariance(rng):
    centers = uniform_sphere(200, 4, rng)
    w = uniform_sphere(30, 4, rng)
    a = kde_log_density(w, KdeModel(centers, 400.0))
    b = kde_log_density(w, KdeModel(centers[rng.permutation(200)], 400.0))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_kde_underflow_safe():
    centers = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    w = np.array([0.0, 0.0, 1.0])
    v = kde_log_density(w, KdeModel(centers, 5000.0))
    assert np.isfinite(v)
    assert v == pytest.approx(ps_log_density_direct(w, centers[0], 5000.0), rel=1e-12)


def test_kde_exclusion(rng):
    centers = uniform_sphere(40, 3, rng)
    m = KdeModel(centers, 20.0)
    w = centers[0]
    full = kde_log_density(w, m)
    assert kde_log_density(w, m, exclude=[]) == full
    # excluding the farthest center: the change is bounded by that kernel's contribution
    far = int(np.argmin(centers @ w))
    ex = kde_log_density(w, m, exclude=[far])
    k_far = np.exp(ps_log_density(w, centers[far], 20.0))
    assert abs(np.exp(ex) * 39 / 40 - np.exp(full)) <= k_far / 40 + 1e-15
    # mean over the remaining centers
    keep = np.delete(centers, far, axis=0)
    assert ex == pytest.approx(kde_log_density(w, KdeModel(keep, 20.0)), abs=1e-13)
    with pytest.raises(ValueError):
        kde_log_density(w, m, exclude=range(40))


def test_bandwidth_defaults():
    assert len(DEFAULT_KAPPA_GRID) == 50
    assert DEFAULT_KAPPA_GRID[0] == pytest.approx(10.0) and DEFAULT_KAPPA_GRID[-1] == pytest.approx(1e4)
    assert np.allclose(np.diff(np.log(DEFAULT_KAPPA_GRID)), np.log(1e3) / 49)
    assert DEFAULT_M_PRED == 1000 and DEFAULT_K_EXCLUDE == 48


def test_bandwidth_uniform_truth():
    angles = uniform_sphere(2000, 3, 4)
    kappa, nll = optimize_bandwidth(angles, seed=1)
    assert kappa <= DEFAULT_KAPPA_GRID[2]
    assert nll.shape == (50,)


def _full_cv_nll(angles, kappa_grid, k):
    # direct leave-window-out, one point and one bandwidth at a time
    n = len(angles)
    out = []
    for kappa in kappa_grid:
        tot = 0.0
        for i in range(n):
            keep = np.abs(np.arange(n) - i) > k
            tot -= kde_log_density(angles[i], KdeModel(angles[keep], kappa))
        out.append(tot)
    return np.array(out)


def test_bandwidth_matches_full_cv_oracle():
    rng = np.random.default_rng(3)
    mus = uniform_sphere(4, 3, rng)
    angles = np.vstack([sample_ps(mu, 60.0, 50, rng) for mu in mus])
    grid = np.logspace(0.5, 3, 8)
    k = 2
    kappa, nll = optimize_bandwidth(angles, grid, m_pred=200, k_exclude=k, seed=0)
    ref = _full_cv_nll(angles, grid, k)
    np.testing.assert_allclose(nll, ref, rtol=1e-10)
    assert kappa == grid[np.argmin(ref)]


def test_bandwidth_tie_prefers_smaller():
    angles = uniform_sphere(30, 3, 2)
    grid = np.array([5.0, 5.0, 7.0])
    kappa, nll = optimize_bandwidth(angles, grid, m_pred=10, k_exclude=2, seed=0)
    assert kappa == 5.0 and nll[0] == nll[1]


def test_bandwidth_errors():
    angles = uniform_sphere(30, 3, 2)
    with pytest.raises(ValueError):
        optimize_bandwidth(angles, [], 10, 2)
    with pytest.raises(ValueError):
        optimize_bandwidth(angles, [1.0], 0, 2)
    with pytest.raises(ValueError):
        optimize_bandwidth(angles, [1.0], 10, 20)


def test_bandwidth_seed_determinism():
    angles = uniform_sphere(500, 3, 2)
    a = optimize_bandwidth(angles, DEFAULT_KAPPA_GRID[:10], 100, 5, seed=9)
    b = optimize_bandwidth(angles, DEFAULT_KAPPA_GRID[:10], 100, 5, seed=9)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_sample_ps_circle_arcsine():
    t = sample_ps(np.array([0.0, 1.0]), 0.0, 50_000, seed=1) @ np.array([0.0, 1.0])
    arcsine = stats.beta(0.5, 0.5, loc=-1, scale=2)
    assert stats.kstest(t, arcsine.cdf).pvalue > 0.01


@pytest.mark.parametrize("d", [2, 3, 5])
@pytest.mark.parametrize("kappa", [1.0, 50.0, 1000.0])
def test_sample_ps_marginal_ks(d, kappa):
    rng = np.random.default_rng(100 * d + int(kappa))
    mu = uniform_sphere(1, d, rng)[0]
    W = sample_ps(mu, kappa, 100_000, rng)
    assert np.max(np.abs(np.linalg.norm(W, axis=1) - 1)) < 1e-12
    t = W @ mu
    res = stats.kstest(t, lambda x: beta_affine_cdf(x, kappa, d))
    assert res.statistic < 1.5 * 1.36 / np.sqrt(1e5)


def test_sample_ps_chi2_against_density():
    # histogram of t against the analytic marginal f(t) ~ ((1+t)/2)^kappa (1-t^2)^((d-3)/2)
    d, kappa = 4, 20.0
    mu = np.eye(d)[1]
    t = sample_ps(mu, kappa, 200_000, seed=5) @ mu
    edges = np.quantile(t, np.linspace(0, 1, 41))
    edges[0], edges[-1] = -1.0, 1.0
    obs, _ = np.histogram(t, edges)
    from scipy.integrate import quad

    f = lambda x: ((1 + x) / 2) ** kappa * (1 - x * x) ** ((d - 3) / 2)  # noqa: E731
    mass = np.array([quad(f, a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    exp = mass / mass.sum() * len(t)
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_sample_ps_mean_direction():
    mu = np.array([0.2, -0.4, 0.7, 0.1, 0.5])
    mu /= np.linalg.norm(mu)
    W = sample_ps(mu, 100.0, 100_000, seed=2)
    m = W.mean(axis=0)
    ang = np.degrees(np.arccos(m @ mu / np.linalg.norm(m)))
    assert ang < 1.0


def test_sample_ps_at_e1_and_minus_e1():
    for mu in (np.array([1.0, 0, 0]), np.array([-1.0, 0, 0])):
        W = sample_ps(mu, 500.0, 2000, seed=0)
        assert np.all(W @ mu > 0.9)
    np.testing.assert_allclose(householder_to(np.array([-1.0, 0, 0])) @ [1, 0, 0], [-1, 0, 0], atol=1e-15)


def test_sample_kde_uniform_kernel():
    m = KdeModel(uniform_sphere(3, 3, 0), 0.0)
    W = sample_kde(m, 200_000, seed=1)
    assert np.all(np.abs(W.mean(axis=0)) < 0.01)


def test_sample_kde_concentrated():
    c = uniform_sphere(1, 4, 3)
    W = sample_kde(KdeModel(c, 1e5), 5000, seed=1)
    assert np.degrees(np.max(np.arccos(np.clip(W @ c[0], -1, 1)))) < 2.0


def test_sample_kde_seeded():
    m = KdeModel(uniform_sphere(10, 3, 0), 30.0)
    assert np.array_equal(sample_kde(m, 50, seed=4), sample_kde(m, 50, seed=4))


@pytest.mark.slow
def test_sample_kde_cell_probabilities_d5():
    rng = np.random.default_rng(21)
    centers = uniform_sphere(20, 5, rng)
    m = KdeModel(centers, 30.0)
    grid = sphere_grid(5, 3).directions
    n = 1_000_000
    obs = np.bincount(voronoi_assign(sample_kde(m, n, rng), grid), minlength=len(grid))
    # exact cell probabilities of the mixture, estimated with a much larger independent sample
    ref = np.zeros(len(grid))
    for _ in range(20):
        ref += np.bincount(voronoi_assign(sample_kde(m, 1_000_000, rng), grid), minlength=len(grid))
    p = ref / ref.sum()
    lo, hi = binomial_ci(n, p, 0.95)
    occupied = p > 0
    inside = (obs >= lo) & (obs <= hi)
    # coverage of a 95% interval, with 3-sigma binomial slack over the cells
    K = int(occupied.sum())
    assert inside[occupied].mean() >= 0.95 - 3 * np.sqrt(0.95 * 0.05 / K)
