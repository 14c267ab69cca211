"""Line-of-sight multi-hop channel: fading model, MGF service bound, delay tail.

A chain of full-duplex relays forwards traffic toward its head over
shadowed high-band links. Per-slot service of a hop is log(1 + SINR); its
negative-moment kernel q_hat, combined with the combinatorial majorant of
the multi-hop MGF, yields a pegged-rate stochastic service curve and from
it an upper bound on the end-to-end delay CCDF.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .snc import StochasticArrival, TailBound, convolve_tailbounds, poisson_arrival

LN10_OVER_10 = math.log(10.0) / 10.0


class DomainError(ValueError):
    """Majorant argument outside its open unit interval."""


class InvalidCDF(ValueError):
    """Supplied distribution function is not monotone in [0, 1]."""


class UnstableRegime(RuntimeError):
    """Arrival envelope rate reaches the channel's effective capacity."""


class EmptyStabilityRegion(RuntimeError):
    """No MGF parameter keeps the chain stable for this load."""


@dataclass(frozen=True)
class MmWaveParams:
    """Propagation, hardware, and discretization knobs of the relay chain.

    Distances in meters, shadowing in dB, rates in nats per slot. The
    defaults describe a short line-of-sight hop at 20 dB transmit SNR.
    """
    pathloss_intercept_db: float = 61.4
    pathloss_exponent: float = 2.0
    shadow_sigma_db: float = 5.8
    self_interference: float = 0.01
    snr: float = 100.0
    sinr_scale: float = 10.0 ** 7.2
    n_vehicles: int = 10
    link_length: float = 5.0
    qhat_step: float = 1e-2
    theta: float = 1.0
    packet_size: float = 1.4
    qhat_input: str = "sinr"

    def __post_init__(self):
        if not 0.0 <= self.self_interference <= 1.0:
            raise ValueError("self_interference must be in [0, 1]")
        if self.snr <= 0 or self.sinr_scale <= 0:
            raise ValueError("snr and sinr_scale must be positive")
        if self.n_vehicles < 2:
            raise ValueError("need at least two vehicles for one hop")
        if self.qhat_step <= 0 or self.theta <= 0:
            raise ValueError("qhat_step and theta must be positive")
        if self.packet_size <= 0:
            raise ValueError("packet_size must be positive")
        if self.qhat_input not in ("sinr", "shadowing"):
            raise ValueError("qhat_input must be 'sinr' or 'shadowing'")


@dataclass(frozen=True)
class ServiceBound:
    """Assembled MGF bound of the multi-hop service process."""
    sigma_theta: float
    pa_theta: float
    qhat: float
    g_value_fn: Callable
    theta: float


def link_sinr(params: MmWaveParams, relay_index: int):
    """Median link gain and SINR of hop `relay_index` (1..n_vehicles).

    Every hop but the last runs full duplex, so its effective SNR is damped
    by the self-interference coupling; the final hop to the destination
    radio is undamped.
    """
    if not 1 <= relay_index <= params.n_vehicles:
        raise ValueError("relay_index out of range")
    gain_db = -(params.pathloss_intercept_db
                + 10.0 * params.pathloss_exponent * math.log10(params.link_length))
    gain = 10.0 ** (gain_db / 10.0)
    if relay_index == params.n_vehicles:
        omega = params.snr
    else:
        omega = params.snr / (1.0 + params.self_interference * params.snr)
    return gain, params.sinr_scale * omega * gain


def link_gamma_cdf(params: MmWaveParams, relay_index: int) -> Callable:
    """CDF of the shadowed SINR of one hop (log-normal through the dB chain)."""
    _, median = link_sinr(params, relay_index)
    sigma_ln = params.shadow_sigma_db * LN10_OVER_10

    def cdf(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0.0
        if sigma_ln == 0.0:
            out[pos] = (x[pos] >= median).astype(float)
        else:
            out[pos] = ndtr((np.log(x[pos]) - math.log(median)) / sigma_ln)
        return out

    return cdf


def shadow_factor_cdf(params: MmWaveParams) -> Callable:
    """CDF of the bare shadowing factor (median 1), the alternate kernel input."""
    sigma_ln = params.shadow_sigma_db * LN10_OVER_10

    def cdf(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0.0
        if sigma_ln == 0.0:
            out[pos] = (x[pos] >= 1.0).astype(float)
        else:
            out[pos] = ndtr(np.log(x[pos]) / sigma_ln)
        return out

    return cdf


def q_hat(theta: float, delta: float, cdf_of_X: Callable) -> float:
    """Upper bound on E[(1+X)^(-theta)] by a summation-by-parts grid.

    Every truncation point of the grid gives a valid upper bound; the
    returned value is the minimum over all of them. Smaller delta tightens
    the discretization.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if theta < 0:
        raise ValueError("theta must be >= 0")
    cap = 1_000_000
    end = delta
    while (end / delta) < cap:
        tail = (1.0 + end) ** (-theta) * (1.0 - float(cdf_of_X(np.array([end]))[0]))
        if tail < 1e-6:
            break
        end *= 2.0
    n_terms = min(cap, int(math.ceil(end / delta)))
    xs = delta * np.arange(1, n_terms + 1)
    fvals = np.asarray(cdf_of_X(xs), dtype=float)
    if np.any(np.diff(fvals) < -1e-12) or fvals.min() < -1e-12 or fvals.max() > 1.0 + 1e-12:
        raise InvalidCDF("distribution function must be monotone within [0, 1]")
    heads = (1.0 + xs) ** (-theta)
    jumps = np.concatenate([[1.0], heads[:-1]]) - heads
    candidates = heads + np.cumsum(jumps * fvals)
    value = min(1.0, float(candidates.min()))
    return max(value, 0.0)


def g_tau_n(tau: int, n: int, x: float) -> float:
    """Combinatorial majorant of the shifted negative-binomial series.

    min of the two closed forms; a non-positive second form is vacuous for
    a series of positive terms, so the first form is used then. Binomials
    run in log space.
    """
    if not 0.0 < x < 1.0:
        raise DomainError(f"argument {x!r} outside (0, 1)")
    if tau < 0 or n < 0:
        raise ValueError("tau and n must be non-negative integers")
    log_x = math.log(x)
    tail = -(n + 1) * math.log1p(-x)
    log_comb1 = math.lgamma(n + tau + 1) - math.lgamma(n + 1) - math.lgamma(tau + 1)
    num = tau * log_x + log_comb1
    g1 = math.exp(tail) if num >= 0.0 else math.exp(num + tail)
    if tau == 0:
        return g1
    log_comb2 = math.lgamma(n + tau + 1) - math.lgamma(n + 2) - math.lgamma(tau)
    log_term = log_comb2 + (tau - 1) * log_x
    g2 = math.exp(tail) - (math.inf if log_term > 700.0 else math.exp(log_term))
    if g2 <= 0.0:
        return g1
    return min(g1, g2)


def _kernel_cdf(params: MmWaveParams):
    if params.qhat_input == "shadowing":
        return shadow_factor_cdf(params)
    # worst hop present: a damped relay whenever the chain has one
    idx = 1 if params.n_vehicles >= 3 else params.n_vehicles
    return link_gamma_cdf(params, idx)


@lru_cache(maxsize=4096)
def _hop_qhat(params: MmWaveParams, theta: float) -> float:
    return q_hat(theta, params.qhat_step, _kernel_cdf(params))


def mmwave_service_bound(params: MmWaveParams, arrival: StochasticArrival) -> ServiceBound:
    """MGF bound of the chain's service under the given arrival envelope.

    The envelope's exponent parameter is the one used throughout; stability
    requires the per-slot arrival factor times the service kernel to stay
    below 1.
    """
    theta = arrival.theta
    qh = _hop_qhat(params, theta)
    if theta * arrival.rho > 700.0:
        raise UnstableRegime(f"per-slot arrival factor overflows at theta={theta:g}")
    pa = math.exp(theta * arrival.rho)
    if pa * qh >= 1.0:
        raise UnstableRegime(f"pa*qhat = {pa * qh:.4f} >= 1 at theta={theta:g}")
    return ServiceBound(sigma_theta=arrival.sigma, pa_theta=pa, qhat=qh,
                        g_value_fn=g_tau_n, theta=theta)


def chain_arrival(params: MmWaveParams, per_vehicle_rate: float) -> Callable:
    """Envelope factory for the aggregate relayed flow, by exponent parameter.

    All upstream vehicles forward through the chain, so the flow bundles
    n_vehicles - 1 packet streams, each packet worth packet_size nats.
    """
    total = (params.n_vehicles - 1) * per_vehicle_rate

    def make(theta: float) -> StochasticArrival:
        return poisson_arrival(total, theta, increment=params.packet_size)

    return make


def _delay_bound_at(params: MmWaveParams, env: StochasticArrival, delay: float) -> float:
    sb = mmwave_service_bound(params, env)
    # store-and-forward latching holds every packet one tick per hop, on
    # top of the queueing the fluid service model accounts for
    backlog_horizon = delay - (params.n_vehicles - 1)
    if backlog_horizon < 0.0:
        return 1.0
    theta = sb.theta
    gval = sb.g_value_fn(int(math.floor(backlog_horizon)), params.n_vehicles - 1,
                         sb.pa_theta * sb.qhat)
    scale = math.exp(theta * sb.sigma_theta) * gval

    service_tail = TailBound(lambda v: np.minimum(1.0, scale * np.exp(-theta * np.asarray(v, dtype=float))))
    arrival_tail = TailBound.exponential(1.0 / theta)
    x0 = env.rho * backlog_horizon - env.sigma
    return min(1.0, max(0.0, convolve_tailbounds(arrival_tail, service_tail, x0)))


def optimize_theta(params: MmWaveParams, arrival, x: float) -> float:
    """Exponent parameter minimizing the delay bound at x, grid plus refine.

    `arrival` is the envelope factory (theta -> envelope). Ties keep the
    smallest stable grid value; the golden refinement is adopted only when
    strictly better.
    """
    grid = np.geomspace(1e-3, 50.0, 40)
    vals = np.full(grid.size, np.inf)
    for i, th in enumerate(grid):
        try:
            vals[i] = _delay_bound_at(params, arrival(float(th)), x)
        except UnstableRegime:
            continue
    if not np.isfinite(vals).any():
        raise EmptyStabilityRegion(f"no stable exponent on the grid for x={x:g}")
    best = int(np.argmin(vals))  # argmin takes the first, so ties go small
    best_theta, best_val = float(grid[best]), float(vals[best])
    if best_val >= 1.0:
        return best_theta  # saturated bound, nothing to refine

    lo = math.log(grid[max(best - 1, 0)])
    hi = math.log(grid[min(best + 1, grid.size - 1)])

    def h(logt):
        try:
            return _delay_bound_at(params, arrival(math.exp(logt)), x)
        except UnstableRegime:
            return np.inf

    golden = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - golden * (b - a), a + golden * (b - a)
    fc, fd = h(c), h(d)
    for _ in range(24):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - golden * (b - a)
            fc = h(c)
        else:
            a, c, fc = c, d, fd
            d = a + golden * (b - a)
            fd = h(d)
    for logt, val in ((c, fc), (d, fd)):
        if val < best_val:
            best_theta, best_val = math.exp(logt), val
    return best_theta


def mmwave_delay_ccdf(params: MmWaveParams, arrival, x):
    """Upper bound on P{end-to-end delay > x slots} for the relay chain.

    `arrival` is either a fixed envelope (used as-is) or a factory
    (theta -> envelope), in which case the exponent is optimized per
    evaluation point.
    """
    xs = np.asarray(x, dtype=float)
    out = []
    for d in np.atleast_1d(xs):
        d = float(d)
        if callable(arrival):
            theta = optimize_theta(params, arrival, d)
            env = arrival(theta)
        else:
            env = arrival
        out.append(_delay_bound_at(params, env, d))
    out = np.array(out)
    return out.reshape(xs.shape) if xs.ndim else float(out[0])
