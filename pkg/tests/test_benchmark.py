"""Tests for the benchmark sampler's volatility blocks and driver.

Single-site Metropolis updates are checked against grid-integrated site
posteriors; the increment-variance block against its closed-form
inverse-gamma posterior.
"""
from __future__ import annotations

import numpy as np
import pytest
from pytest import approx
from scipy import stats

from lvdfm.benchmark import (
    BenchmarkChain,
    Q_PRIOR_DOF,
    Q_PRIOR_SCALE,
    _logvol_site_sweep,
    draw_logvol_rw,
    draw_rw_variance,
    estimate_benchmark,
)
from lvdfm.model import ModelConfig
from lvdfm.simulate import DgpSpec, simulate_panel


def grid_moments(grid, log_density):
    w = np.exp(log_density - log_density.max())
    w /= w.sum()
    mean = float(np.sum(grid * w))
    sd = float(np.sqrt(np.sum((grid - mean) ** 2 * w)))
    return mean, sd


def run_single_site(paths, ls, has_lik, q, step, parity, n_iter, seed, site):
    rng = np.random.default_rng(seed)
    samples = np.empty(n_iter)
    for it in range(n_iter):
        _logvol_site_sweep(ls, has_lik, paths, q, step, rng, parity)
        samples[it] = paths[0, site]
    return samples[2000:]


class TestLogvolSiteSweep:
    def test_interior_site_matches_grid_posterior(self):
        # neighbors pinned by only ever updating the odd-parity site
        a, b, q, eps = 0.3, -0.4, 0.2, 1.3
        ls1 = np.log(eps * eps)
        ls = np.array([[0.0, ls1, 0.0]])
        has_lik = np.array([True, True, True])
        paths = np.array([[a, 0.0, b]])

        grid = np.linspace(-4.0, 4.0, 4001)
        logd = (-0.5 * (grid + np.exp(ls1 - grid))
                - 0.5 * (grid - a) ** 2 / q
                - 0.5 * (b - grid) ** 2 / q)
        want_mean, want_sd = grid_moments(grid, logd)

        kept = run_single_site(paths, ls, has_lik, np.array([q]),
                               np.array([0.8]), parity=1, n_iter=25_000,
                               seed=0, site=1)
        assert np.array_equal(paths[0, [0, 2]], [a, b])
        assert kept.mean() == approx(want_mean, abs=4 * want_sd / np.sqrt(800))
        assert kept.std() == approx(want_sd, rel=0.15)

    def test_first_site_has_forward_link_only(self):
        # diffuse start: no backward penalty, so the site sees the likelihood
        # term plus a single random-walk link to its right neighbor
        b, q, eps = 0.5, 0.3, 0.9
        ls0 = np.log(eps * eps)
        ls = np.array([[ls0, 0.0]])
        has_lik = np.array([True, True])
        paths = np.array([[0.0, b]])

        grid = np.linspace(-5.0, 5.0, 4001)
        logd = -0.5 * (grid + np.exp(ls0 - grid)) - 0.5 * (b - grid) ** 2 / q
        want_mean, want_sd = grid_moments(grid, logd)

        kept = run_single_site(paths, ls, has_lik, np.array([q]),
                               np.array([0.9]), parity=0, n_iter=25_000,
                               seed=1, site=0)
        assert kept.mean() == approx(want_mean, abs=4 * want_sd / np.sqrt(800))
        assert kept.std() == approx(want_sd, rel=0.15)

    def test_presample_site_is_pure_random_walk_bridge(self):
        # without a likelihood term the conditional is exactly
        # N((left + right) / 2, q / 2)
        a, b, q = -1.0, 2.0, 0.4
        ls = np.zeros((1, 3))
        has_lik = np.array([False, False, False])
        paths = np.array([[a, 0.0, b]])
        kept = run_single_site(paths, ls, has_lik, np.array([q]),
                               np.array([0.9]), parity=1, n_iter=25_000,
                               seed=2, site=1)
        want_mean, want_sd = (a + b) / 2.0, np.sqrt(q / 2.0)
        assert kept.mean() == approx(want_mean, abs=4 * want_sd / np.sqrt(800))
        assert kept.std() == approx(want_sd, rel=0.15)

    def test_parity_partition_updates_disjoint_sites(self):
        rng = np.random.default_rng(3)
        paths = rng.normal(size=(2, 8))
        before = paths.copy()
        ls = rng.normal(size=(2, 8))
        _logvol_site_sweep(ls, np.ones(8, dtype=bool), paths,
                           np.full(2, 0.5), np.full(2, 50.0), rng, parity=0)
        # huge steps get rejected, but only even sites may have moved
        assert np.array_equal(paths[:, 1::2], before[:, 1::2])


class TestDrawLogvolRw:
    def test_full_sweep_moves_path_and_reports_rate(self):
        rng = np.random.default_rng(4)
        path = np.zeros(20)
        log_eps_sq = rng.normal(size=16)
        new, rate = draw_logvol_rw(log_eps_sq, path, q=0.2, step=0.3, rng=rng,
                                   n_presample=4)
        assert new.shape == (20,)
        assert 0.0 <= rate <= 1.0
        assert not np.array_equal(new, path)

    def test_reproducible(self):
        log_eps_sq = np.random.default_rng(5).normal(size=10)
        p1, r1 = draw_logvol_rw(log_eps_sq, np.zeros(10), 0.2, 0.3,
                                np.random.default_rng(6))
        p2, r2 = draw_logvol_rw(log_eps_sq, np.zeros(10), 0.2, 0.3,
                                np.random.default_rng(6))
        assert np.array_equal(p1, p2) and r1 == r2


class TestDrawRwVariance:
    def test_matches_inverse_gamma_posterior(self):
        rng = np.random.default_rng(7)
        log_omega = rng.normal(size=(2, 30)).cumsum(axis=1)
        diffs = np.diff(log_omega, axis=1)
        scale = Q_PRIOR_SCALE + np.sum(diffs * diffs, axis=1)
        dof = Q_PRIOR_DOF + diffs.shape[1]
        draws = np.array([draw_rw_variance(log_omega, rng) for _ in range(4000)])
        for i in range(2):
            dist = stats.invgamma(dof / 2.0, scale=scale[i] / 2.0)
            _, p = stats.kstest(draws[:, i], dist.cdf)
            assert p > 0.005
        assert draws.mean(axis=0) == approx(scale / (dof - 2), rel=0.05)


@pytest.fixture(scope="module")
def bench_setup():
    spec = DgpSpec(n_series=4, t_total=120, t_burn=40)
    panel, _ = simulate_panel(spec, seed=8)
    config = ModelConfig(n_series=4, n_draws=12, n_burn=4, thin=2, seed=9)
    return panel, config


class TestEstimateBenchmark:
    def test_dimension_mismatch(self, bench_setup):
        panel, _ = bench_setup
        with pytest.raises(ValueError, match="panel does not match config"):
            estimate_benchmark(panel, ModelConfig(n_series=7, n_draws=4, n_burn=1))

    def test_storage_shapes_and_diagnostics(self, bench_setup):
        panel, config = bench_setup
        chain = estimate_benchmark(panel, config)
        assert isinstance(chain, BenchmarkChain)
        assert chain.n_stored == 4
        n, t = panel.data.shape
        for d in chain.draws:
            assert d.b_level.shape == (n, 1) and d.b_level[0, 0] == 1.0
            assert d.rho.shape == (n, 2)
            assert d.log_omega.shape == (n, t)
            assert d.q.shape == (n,) and np.all(d.q > 0)
            assert d.a_mat.shape == (1, 1) and d.h_diag.shape == (1,)
        for key in ("accept_logvol", "step_logvol", "gamma_retry_fail"):
            assert key in chain.diagnostics
        for fp in chain.factor_draws:
            assert fp.path.shape == (t, 1)
            assert np.all(fp.path[:2] == 0.0)  # presample pinned

    def test_reproducible_from_config_seed(self, bench_setup):
        panel, config = bench_setup
        c1 = estimate_benchmark(panel, config)
        c2 = estimate_benchmark(panel, config)
        for d1, d2 in zip(c1.draws, c2.draws):
            assert np.array_equal(d1.log_omega, d2.log_omega)
            assert np.array_equal(d1.gamma, d2.gamma)
        assert np.array_equal(c1.factor_draws[-1].path, c2.factor_draws[-1].path)

    def test_runs_without_idio_lags(self, bench_setup):
        panel, _ = bench_setup
        config = ModelConfig(n_series=4, n_draws=6, n_burn=2, thin=1,
                             lag_idio=0, seed=10)
        chain = estimate_benchmark(panel, config)
        assert chain.n_stored == 4
        assert chain.draws[0].rho.shape == (4, 0)
