"""Contention-channel analytics against protocol-level and queueing oracles."""

import numpy as np
import pytest

from hybridv2v.cellular import (BackoffParams, CellularMetrics, InvalidRegime,
                                NoConvergence, UnstableQueue, cellular_delay_ccdf,
                                cellular_metrics, cellular_service_curve,
                                contention_windows, raw_deviation_bound,
                                service_time_moments, solve_collision_fixed_point)
from hybridv2v.sim import simulate_cellular_mc

TABLE = BackoffParams()  # W=4, m=3, M=5, n=10, slots 10/5/10, L=100, rate 0.1
STABLE = BackoffParams(n_stations=4, arrival_rate=0.002)


def chain_service_samples(params, p_c, t_b, rng, size):
    """Draw i.i.d. service times from the truncated backoff-stage chain."""
    windows, _, _ = contention_windows(params)
    fails = rng.geometric(1.0 - p_c, size=size) - 1
    out = np.zeros(size)
    for j, w in enumerate(windows):
        hit = fails >= j
        out[hit] += rng.integers(0, w + 1, size=int(hit.sum())) * t_b + params.tx_slot
    return out


# ---------------------------------------------------------------- windows

def test_window_progression_table_point():
    cw, mu, wsum = contention_windows(TABLE)
    assert cw == [4, 8, 16, 32, 32, 32]
    assert mu == [2.0, 4.0, 8.0, 16.0, 16.0, 16.0]
    assert wsum == 118


def test_window_progression_smallest_protocol():
    cw, _, _ = contention_windows(BackoffParams(min_window=1, window_doublings=1,
                                                max_stage=1))
    assert cw == [1, 2]


def test_params_validation():
    with pytest.raises(ValueError):
        BackoffParams(min_window=0)
    with pytest.raises(ValueError):
        BackoffParams(window_doublings=4, max_stage=3)
    with pytest.raises(ValueError):
        BackoffParams(arrival_rate=-0.1)


# ---------------------------------------------------------------- fixed point

def test_fixed_point_single_station():
    p_c, p_a = solve_collision_fixed_point(BackoffParams(n_stations=1))
    assert p_c == 0.0
    assert p_a == pytest.approx(0.5)  # 1 / mean initial window


def test_fixed_point_vanishes_with_huge_windows():
    p = BackoffParams(min_window=4096, window_doublings=1, max_stage=1)
    p_c, p_a = solve_collision_fixed_point(p)
    assert p_c < 0.01
    assert p_a < 1e-3


def test_fixed_point_methods_agree_and_residuals():
    for n in [2, 5, 10, 15]:
        p = BackoffParams(n_stations=n)
        pc_d, pa_d = solve_collision_fixed_point(p, method="damped")
        pc_b, pa_b = solve_collision_fixed_point(p, method="bisect")
        assert abs(pc_d - pc_b) < 1e-9
        assert abs(pa_d - pa_b) < 1e-9
        from hybridv2v.cellular import _attempt_prob
        _, mu, _ = contention_windows(p)
        assert abs(pc_d - (1 - np.exp(-(n - 1) * pa_d))) < 1e-10
        assert abs(pa_d - _attempt_prob(pc_d, mu)) < 1e-10


def test_collision_prob_grows_with_station_count():
    vals = [solve_collision_fixed_point(BackoffParams(n_stations=n))[0]
            for n in range(2, 13)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_fixed_point_budget_exhaustion():
    with pytest.raises(NoConvergence):
        solve_collision_fixed_point(TABLE, max_iter=2)
    with pytest.raises(ValueError):
        solve_collision_fixed_point(TABLE, method="newton")


# ---------------------------------------------------------------- moments

def test_wait_is_zero_without_arrivals():
    p = BackoffParams(arrival_rate=0.0)
    p_c, p_a = solve_collision_fixed_point(p)
    *_, t_q = service_time_moments(p, p_c, p_a)
    assert t_q == 0.0


def test_single_stage_collapse_without_collisions():
    p_c, p_a = 0.0, 0.2
    t_b, mean_serv, _, _ = service_time_moments(STABLE, p_c, p_a)
    _, mu, _ = contention_windows(STABLE)
    assert mean_serv == pytest.approx(mu[0] * t_b + STABLE.tx_slot)


def test_saturated_queue_raises():
    p_c, p_a = solve_collision_fixed_point(TABLE)
    with pytest.raises(UnstableQueue):
        service_time_moments(TABLE, p_c, p_a)


def test_chain_moments_match_sampler():
    p_c, p_a = solve_collision_fixed_point(STABLE)
    t_b, mean_serv, var_serv, _ = service_time_moments(STABLE, p_c, p_a)
    rng = np.random.default_rng(7)
    s = chain_service_samples(STABLE, p_c, t_b, rng, 1_000_000)
    assert s.mean() == pytest.approx(mean_serv, rel=5e-3)
    assert s.var() == pytest.approx(var_serv, rel=2e-2)


def test_wait_matches_queue_simulation():
    """Mean number in system from a Lindley-recursion run of 1e6 packets."""
    p_c, p_a = solve_collision_fixed_point(STABLE)
    t_b, mean_serv, _, t_q = service_time_moments(STABLE, p_c, p_a)
    rng = np.random.default_rng(7)
    s = chain_service_samples(STABLE, p_c, t_b, rng, 1_000_000)
    gaps = rng.exponential(1.0 / STABLE.arrival_rate, size=s.size)
    walk = np.concatenate([[0.0], np.cumsum(s - gaps)])
    wait = walk[:-1] - np.minimum.accumulate(walk)[:-1]
    in_system = STABLE.arrival_rate * (wait + s).mean()
    assert in_system == pytest.approx(t_q, rel=0.05)


def test_metrics_saturation_fallback():
    m = cellular_metrics(TABLE)
    assert m.saturated
    assert m.mean_wait == m.mean_service
    s = cellular_metrics(STABLE)
    assert not s.saturated
    assert s.mean_wait < 1.0


# ---------------------------------------------------------------- service curve

def test_service_curve_takes_min_rate():
    m = cellular_metrics(STABLE)
    beta, _ = cellular_service_curve(STABLE, m)
    want = min(m.mean_service, m.mean_wait) * STABLE.arrival_rate
    assert beta.final_slope == pytest.approx(want, rel=1e-12)
    assert beta(3.0) == pytest.approx(want * 3.0, rel=1e-12)


def test_raw_bound_limit_at_zero_deviation():
    m = cellular_metrics(TABLE)
    raw = raw_deviation_bound(TABLE, m)
    from hybridv2v.cellular import _deviation_scale
    _, q = _deviation_scale(TABLE, m)
    offset = TABLE.queue_len * TABLE.busy_slot
    want = (1.0 - q) ** TABLE.queue_len
    assert raw(offset) == pytest.approx(want, rel=1e-9)
    assert raw(offset * (1 + 1e-9)) == pytest.approx(want, rel=1e-6)
    # outside the valid region the raw form reports no information
    assert raw(offset - 1.0) == 1.0


def test_tail_monotone_and_bounded():
    m = cellular_metrics(TABLE)
    _, tail = cellular_service_curve(TABLE, m)
    xs = np.linspace(0.0, 3e6, 4000)
    vals = tail(xs)
    assert np.all(vals <= 1.0) and np.all(vals >= 0.0)
    assert np.all(np.diff(vals) <= 1e-15)
    assert tail(tail.support_floor * 0.5) == 1.0


def test_invalid_regime_detected():
    bad = CellularMetrics(collision_prob=0.5, attempt_prob=0.1,
                          windows=(4, 8, 16, 32, 32, 32),
                          mean_backoffs=(2, 4, 8, 16, 16, 16), window_sum=118,
                          backoff_slot=5.0, mean_service=10.0, service_var=100.0,
                          mean_wait=2300.0)
    with pytest.raises(InvalidRegime):
        cellular_service_curve(TABLE, bad)
    with pytest.raises(InvalidRegime):
        raw_deviation_bound(TABLE, bad)


# ---------------------------------------------------------------- delay ccdf

def test_delay_ccdf_vacuous_at_zero():
    assert cellular_delay_ccdf(TABLE, 0.0) == 1.0


def test_delay_ccdf_monotone_in_load():
    xs = np.geomspace(1e3, 2e5, 15)
    lo = cellular_delay_ccdf(BackoffParams(arrival_rate=0.1), xs)
    hi = cellular_delay_ccdf(BackoffParams(arrival_rate=0.2), xs)
    assert np.all(hi >= lo - 1e-12)
    # strictly ordered at a stable pair, probed past both deterministic floors
    lo_s = cellular_delay_ccdf(BackoffParams(n_stations=4, arrival_rate=0.001),
                               np.array([2e4]))
    hi_s = cellular_delay_ccdf(BackoffParams(n_stations=4, arrival_rate=0.004),
                               np.array([2e4]))
    assert hi_s[0] > lo_s[0]


def test_delay_ccdf_dominates_protocol_simulation():
    m = cellular_metrics(TABLE)
    emp = simulate_cellular_mc(TABLE, runs=10_000, seed=1)
    xs = np.geomspace(1e3, 1.8e5, 25)
    bound = cellular_delay_ccdf(TABLE, xs, m)
    upper = emp.upper_envelope(xs)
    active = bound < 1.0
    assert np.all(bound[active] >= upper[active])
    assert active.any()
