"""Relay-chain channel model: kernel, majorant, service and delay bounds."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from hybridv2v.mmwave import (
    DomainError,
    EmptyStabilityRegion,
    InvalidCDF,
    MmWaveParams,
    UnstableRegime,
    chain_arrival,
    g_tau_n,
    link_gamma_cdf,
    link_sinr,
    mmwave_delay_ccdf,
    mmwave_service_bound,
    optimize_theta,
    q_hat,
    shadow_factor_cdf,
)
from hybridv2v.snc import poisson_arrival

PARAMS = MmWaveParams()


def lognormal_mu_sigma(params, relay_index):
    _, median = link_sinr(params, relay_index)
    return math.log(median), params.shadow_sigma_db * math.log(10.0) / 10.0


class TestLinkSinr:
    def test_median_gain_from_pathloss_fit(self):
        gain, _ = link_sinr(PARAMS, 1)
        expected_db = -(61.4 + 10 * 2.0 * math.log10(5.0))
        assert gain == pytest.approx(10.0 ** (expected_db / 10.0), rel=1e-12)

    def test_full_duplex_damping_splits_hops(self):
        _, relay = link_sinr(PARAMS, 1)
        _, middle = link_sinr(PARAMS, 4)
        _, dest = link_sinr(PARAMS, PARAMS.n_vehicles)
        # 20 dB SNR with 1% coupling halves the effective SNR of relays
        assert relay == pytest.approx(middle, rel=1e-12)
        assert dest == pytest.approx(2.0 * relay, rel=1e-12)
        assert relay == pytest.approx(22.96307242993764, rel=1e-9)

    def test_index_bounds_checked(self):
        with pytest.raises(ValueError):
            link_sinr(PARAMS, 0)
        with pytest.raises(ValueError):
            link_sinr(PARAMS, PARAMS.n_vehicles + 1)

    def test_gamma_cdf_is_lognormal_around_median(self):
        cdf = link_gamma_cdf(PARAMS, 1)
        _, median = link_sinr(PARAMS, 1)
        assert cdf(np.array([median]))[0] == pytest.approx(0.5, abs=1e-12)
        xs = np.geomspace(median / 100, median * 100, 50)
        vals = cdf(xs)
        assert np.all(np.diff(vals) >= 0)
        assert cdf(np.array([0.0]))[0] == 0.0

    def test_shadow_factor_cdf_median_one(self):
        cdf = shadow_factor_cdf(PARAMS)
        assert cdf(np.array([1.0]))[0] == pytest.approx(0.5, abs=1e-12)


class TestQHat:
    def test_matches_adaptive_quadrature_on_lognormal(self):
        mu, sig = lognormal_mu_sigma(PARAMS, 1)
        exact, _ = integrate.quad(
            lambda z: (1.0 + math.exp(mu + sig * z)) ** -1.0 * stats.norm.pdf(z),
            -14, 14)
        approx = q_hat(1.0, 1e-3, link_gamma_cdf(PARAMS, 1))
        assert approx == pytest.approx(exact, abs=1e-3)
        assert approx >= exact  # grid construction majorizes the integral

    def test_point_mass_recovers_closed_form(self):
        x0, theta = 2.5, 1.3

        def step(x):
            return (np.asarray(x, dtype=float) >= x0).astype(float)

        assert q_hat(theta, 1e-4, step) == pytest.approx((1 + x0) ** -theta, abs=1e-3)

    def test_zero_exponent_gives_one(self):
        assert q_hat(0.0, 1e-2, link_gamma_cdf(PARAMS, 1)) == pytest.approx(1.0)
        assert q_hat(1e-12, 1e-2, link_gamma_cdf(PARAMS, 1)) == pytest.approx(1.0, abs=1e-6)

    def test_in_unit_interval_and_decreasing_in_theta(self):
        cdf = link_gamma_cdf(PARAMS, 1)
        vals = [q_hat(t, 1e-2, cdf) for t in (0.3, 1.0, 3.0, 10.0)]
        assert all(0.0 < v <= 1.0 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_non_monotone_cdf_rejected(self):
        def bad(x):
            x = np.asarray(x, dtype=float)
            return 0.5 + 0.4 * np.sin(x)

        with pytest.raises(InvalidCDF):
            q_hat(1.0, 1e-2, bad)

    def test_bad_arguments_rejected(self):
        cdf = link_gamma_cdf(PARAMS, 1)
        with pytest.raises(ValueError):
            q_hat(1.0, 0.0, cdf)
        with pytest.raises(ValueError):
            q_hat(-1.0, 1e-2, cdf)


def series_tail(tau, n, x, terms=10_000):
    ks = np.arange(tau, tau + terms)
    logs = (np.vectorize(math.lgamma)(n + ks + 1.0)
            - math.lgamma(n + 1)
            - np.vectorize(math.lgamma)(ks + 1.0))
    return float(np.sum(np.exp(logs + ks * math.log(x))))


class TestGMajorant:
    def test_zero_offset_closed_form(self):
        assert g_tau_n(0, 0, 0.5) == pytest.approx(2.0, rel=1e-12)
        for n in (0, 1, 4, 9):
            for x in (0.1, 0.5, 0.9):
                assert g_tau_n(0, n, x) == pytest.approx((1 - x) ** -(n + 1), rel=1e-12)

    def test_frozen_regression_value(self):
        assert g_tau_n(3, 4, 0.3) == pytest.approx(4.0599018266198605, rel=1e-12)

    def test_majorizes_truncated_series(self):
        for tau, n, x in [(3, 4, 0.3), (5, 2, 0.5), (1, 6, 0.2), (10, 3, 0.6)]:
            assert g_tau_n(tau, n, x) >= series_tail(tau, n, x) * (1 - 1e-12)

    def test_monotone_in_n_and_tau(self):
        for x in (0.1, 0.5, 0.9):
            for tau in (0, 2, 5):
                vals_n = [g_tau_n(tau, n, x) for n in range(6)]
                assert all(a <= b + 1e-12 for a, b in zip(vals_n, vals_n[1:]))
            for n in (0, 2, 5):
                vals_t = [g_tau_n(tau, n, x) for tau in range(7)]
                assert all(a + 1e-12 >= b for a, b in zip(vals_t, vals_t[1:]))

    def test_domain_checked(self):
        for x in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(DomainError):
                g_tau_n(2, 3, x)
        with pytest.raises(ValueError):
            g_tau_n(-1, 3, 0.5)


class TestServiceBound:
    def test_assembled_fields(self):
        env = poisson_arrival(0.3, 1.0, increment=1.4)
        sb = mmwave_service_bound(PARAMS, env)
        assert sb.theta == 1.0
        assert sb.sigma_theta == env.sigma
        assert sb.pa_theta == pytest.approx(math.exp(env.rho), rel=1e-12)
        assert 0.0 < sb.qhat <= 1.0
        assert sb.g_value_fn is g_tau_n

    def test_unstable_load_raises(self):
        env = poisson_arrival(5.0, 2.0, increment=1.4)
        with pytest.raises(UnstableRegime):
            mmwave_service_bound(PARAMS, env)

    def test_majorizes_monte_carlo_service_mgf(self):
        # single hop, three-slot window, against 1e6 sampled shadowing draws
        params = MmWaveParams(n_vehicles=2)
        theta, window = 1.0, 3
        mu, sig = lognormal_mu_sigma(params, 2)
        rng = np.random.default_rng(7)
        gammas = np.exp(mu + sig * rng.standard_normal((1_000_000, window)))
        mgf = float(np.mean(np.exp(-theta * np.log1p(gammas).sum(axis=1))))
        env = poisson_arrival(0.05, theta, increment=params.packet_size)
        sb = mmwave_service_bound(params, env)
        bound = (math.exp(theta * sb.sigma_theta) * sb.pa_theta ** window
                 * g_tau_n(0, params.n_vehicles - 1, sb.pa_theta * sb.qhat))
        assert bound > mgf


class TestDelayCcdf:
    def test_vanishes_at_large_horizon(self):
        params = MmWaveParams(n_vehicles=6)
        env = poisson_arrival(0.5, 1.0, increment=params.packet_size)
        assert mmwave_delay_ccdf(params, env, 5_000.0) < 1e-50

    def test_monotone_and_clamped(self):
        params = MmWaveParams(n_vehicles=6)
        env = poisson_arrival(0.5, 1.0, increment=params.packet_size)
        grid = np.linspace(0.0, 120.0, 61)
        vals = mmwave_delay_ccdf(params, env, grid)
        assert vals.shape == grid.shape
        assert np.all((vals >= 0.0) & (vals <= 1.0))
        assert np.all(np.diff(vals) <= 1e-12)
        assert vals[0] == 1.0  # store-and-forward pipeline keeps small x at 1

    def test_grows_with_chain_length_and_load(self):
        x = 40.0
        short = MmWaveParams(n_vehicles=6)
        long_ = MmWaveParams(n_vehicles=12)
        assert (mmwave_delay_ccdf(long_, chain_arrival(long_, 0.1), x)
                >= mmwave_delay_ccdf(short, chain_arrival(short, 0.1), x))
        light = mmwave_delay_ccdf(short, chain_arrival(short, 0.05), 14.0)
        heavy = mmwave_delay_ccdf(short, chain_arrival(short, 0.15), 14.0)
        assert heavy >= light

    def test_optimized_no_worse_than_fixed_exponent(self):
        params = MmWaveParams(n_vehicles=6)
        x = 15.0
        fixed = mmwave_delay_ccdf(
            params, poisson_arrival(0.5, 1.0, increment=params.packet_size), x)
        tuned = mmwave_delay_ccdf(params, chain_arrival(params, 0.1), x)
        assert tuned <= fixed + 1e-12

    def test_unstable_envelope_raises(self):
        params = MmWaveParams(n_vehicles=10)
        with pytest.raises(UnstableRegime):
            mmwave_delay_ccdf(
                params, poisson_arrival(3.0, 1.0, increment=params.packet_size), 10.0)
        with pytest.raises(EmptyStabilityRegion):
            mmwave_delay_ccdf(params, chain_arrival(params, 3.0), 10.0)

    def test_dominates_fluid_tandem_simulation(self):
        from hybridv2v.sim import simulate_mmwave_mc

        params = MmWaveParams(n_vehicles=6)
        arrival = chain_arrival(params, 0.1)
        mc = simulate_mmwave_mc(params, 0.1, runs=10_000, seed=3)
        grid = np.arange(1.0, 26.0)
        bound = mmwave_delay_ccdf(params, arrival, grid)
        envelope = mc.upper_envelope(grid)
        # compare where the bound clears the binomial confidence floor
        usable = bound >= 5e-4
        assert usable.sum() >= 8
        assert np.all(bound[usable] >= envelope[usable] - 1e-12)

    def test_well_below_contention_bound_at_light_load(self):
        from hybridv2v.cellular import BackoffParams, cellular_delay_ccdf

        x = 5e4
        contention = cellular_delay_ccdf(BackoffParams(), np.array([x]))[0]
        params = MmWaveParams(n_vehicles=10)
        relay = mmwave_delay_ccdf(params, chain_arrival(params, 0.1), x)
        assert relay < contention / 100


class TestOptimizeTheta:
    def test_close_to_dense_grid_minimum(self):
        params = MmWaveParams(n_vehicles=6)
        arrival = chain_arrival(params, 0.1)
        x = 15.0
        theta = optimize_theta(params, arrival, x)
        chosen = mmwave_delay_ccdf(params, arrival(theta), x)
        dense = np.inf
        for t in np.geomspace(1e-3, 50.0, 200):
            try:
                dense = min(dense, mmwave_delay_ccdf(params, arrival(float(t)), x))
            except UnstableRegime:
                continue
        assert chosen <= dense * 1.01

    def test_flat_profile_returns_smallest_grid_point(self):
        params = MmWaveParams(n_vehicles=6)
        # x = 0 saturates the bound for every stable exponent
        assert optimize_theta(params, chain_arrival(params, 0.1), 0.0) == pytest.approx(1e-3)

    def test_no_stable_exponent_raises(self):
        params = MmWaveParams(n_vehicles=10)
        with pytest.raises(EmptyStabilityRegion):
            optimize_theta(params, chain_arrival(params, 3.0), 50.0)


class TestChainArrival:
    def test_aggregates_upstream_flows(self):
        params = MmWaveParams(n_vehicles=6)
        env = chain_arrival(params, 0.1)(1.2)
        direct = poisson_arrival(0.5, 1.2, increment=params.packet_size)
        assert env.rho == pytest.approx(direct.rho, rel=1e-12)
        assert env.theta == 1.2
