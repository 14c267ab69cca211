"""Pooled two-channel delay bound and scalar summaries.

The contention radio and the relay chain jointly drain one queue, so the
total service curve is the sum of the per-channel curves and the combined
deviation tail is the Stieltjes convolution of the per-channel tails at
half the argument. Composition runs in packet work units: the contention
station contributes one packet per mean service time, the chain a chosen
nats-per-slot rate played against its per-slot service kernel.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .cellular import BackoffParams, cellular_delay_ccdf, cellular_metrics, cellular_service_curve
from .mmwave import (MmWaveParams, UnstableRegime, _hop_qhat, chain_arrival,
                     g_tau_n, mmwave_delay_ccdf)
from .snc import TailBound, convolve_tailbounds, stieltjes_convolve


class TruncationWarning(UserWarning):
    """Averaging grid ended while the tail still carries visible mass."""


@dataclass(frozen=True)
class HybridConfig:
    """Two-channel deployment: traffic split and both channel configs."""
    split: float = 0.5
    cellular: BackoffParams = field(default_factory=BackoffParams)
    mmwave: MmWaveParams = field(default_factory=MmWaveParams)
    lambda_total: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.split <= 1.0:
            raise ValueError("split must be in [0, 1]")
        if self.lambda_total < 0.0:
            raise ValueError("lambda_total must be non-negative")


def _route_params(cfg: HybridConfig):
    cell = replace(cfg.cellular, arrival_rate=(1.0 - cfg.split) * cfg.lambda_total)
    return cell, cfg.split * cfg.lambda_total


def _log_tail_interp(ws, vals, floor):
    ws = np.asarray(ws, dtype=float)
    logs = np.log(np.clip(np.asarray(vals, dtype=float), 1e-300, None))
    if logs.size >= 2 and ws[-1] > ws[-2]:
        slope = (logs[-1] - logs[-2]) / (ws[-1] - ws[-2])
    else:
        slope = 0.0

    def evaluate(w):
        w = np.asarray(w, dtype=float)
        inside = np.interp(w, ws, logs)
        beyond = logs[-1] + slope * (w - ws[-1])
        return np.exp(np.where(w > ws[-1], beyond, inside))

    return TailBound(evaluate, support_floor=floor)


def _combined_tail(cell_tail: TailBound, mean_service: float, g2_scale: float,
                   theta_nats: float, packet_size: float, w_max: float) -> TailBound:
    """Tabulate the pooled deviation tail (packet work units)."""
    floor_w = cell_tail.support_floor / mean_service
    cell_w = TailBound(lambda w: cell_tail(np.asarray(w, dtype=float) * mean_service),
                       support_floor=floor_w)
    chain_w = TailBound(lambda w: np.minimum(
        1.0, g2_scale * np.exp(-theta_nats * packet_size * np.asarray(w, dtype=float))))

    start = 2.0 * floor_w
    hi = max(w_max, start + 10.0)
    # the chain tail is flat at 1 out to its knee, so hand the integrator a
    # window that provably contains all of its variation
    knee = max(math.log(max(g2_scale, 1.0)), 0.0) / (theta_nats * packet_size)
    window = (0.0, knee + 60.0 / (theta_nats * packet_size))
    ws = np.unique(np.concatenate([
        [max(start, 1e-9)],
        np.geomspace(max(start, 1e-9) * (1 + 1e-9), hi, 150)]))
    vals = np.empty(ws.size)
    for i, w in enumerate(ws):
        if w <= start:
            vals[i] = 1.0
        else:
            vals[i] = min(1.0, stieltjes_convolve(cell_w, chain_w, w / 2.0,
                                                  window=window))
    return _log_tail_interp(ws, vals, floor=start)


def _check_route_stability(cfg: HybridConfig, cell_params: BackoffParams,
                           mm_rate: float, thetas) -> None:
    cellular_metrics(cell_params)  # raises if the fixed point fails
    if mm_rate <= 0.0:
        return
    size = cfg.mmwave.packet_size
    for theta in thetas:
        qh = _hop_qhat(cfg.mmwave, float(theta))
        rho = mm_rate * math.expm1(theta * size) / theta
        if theta * rho <= 700.0 and math.exp(theta * rho) * qh < 1.0:
            return
    raise UnstableRegime(
        f"relay-chain route cannot carry its share {mm_rate:g} packets/slot")


def hybrid_delay_ccdf(cfg: HybridConfig, x):
    """Upper bound on P{delay > x slots} with both channels pooled.

    split extremes short-circuit to the exact single-channel models. In
    between, the bound searches a small grid of MGF exponents and claimed
    chain rates, keeping the best composition per evaluation point.
    """
    xs = np.asarray(x, dtype=float)
    flat = np.atleast_1d(xs).astype(float)

    if cfg.split == 0.0:
        out = cellular_delay_ccdf(
            replace(cfg.cellular, arrival_rate=cfg.lambda_total), flat)
    elif cfg.split == 1.0:
        out = mmwave_delay_ccdf(
            cfg.mmwave, chain_arrival(cfg.mmwave, cfg.lambda_total), flat)
    else:
        out = _pooled_ccdf(cfg, flat)
    out = np.clip(out, 0.0, 1.0)
    return out.reshape(xs.shape) if xs.ndim else float(out[0])


_TAB_HORIZON = 1e6  # slots of delay the tabulated pooled tails must cover


@lru_cache(maxsize=32)
def _pooled_machinery(cfg: HybridConfig):
    """Feasible (rate, arrival flank, pooled tail) triples plus the latch."""
    cell_params, mm_rate = _route_params(cfg)
    thetas = np.geomspace(0.05, 3.0, 6)
    _check_route_stability(cfg, cell_params, mm_rate, thetas)

    metrics = cellular_metrics(cell_params)
    _, cell_tail = cellular_service_curve(cell_params, metrics)
    rate_cell = 1.0 / metrics.mean_service
    size = cfg.mmwave.packet_size
    hops = cfg.mmwave.n_vehicles - 1
    # neither leg can hand a packet over faster than its latching path
    latch = min(float(hops), cfg.cellular.tx_slot)

    combos = []
    for theta in thetas:
        qh = _hop_qhat(cfg.mmwave, float(theta))
        cap = -math.log(qh) / theta
        env_rate = cfg.lambda_total * math.expm1(theta * size) / (theta * size)
        hi = 0.98 * cap
        if rate_cell + hi / size <= env_rate:
            continue
        # candidate rates are placed independently of the load so that a
        # heavier load can only shrink the feasible set, never improve the min
        for frac in (0.25, 0.6, 0.95):
            rho2 = frac * hi
            total_rate = rate_cell + rho2 / size
            if total_rate <= env_rate:
                continue
            g2 = g_tau_n(0, hops, math.exp(theta * rho2) * qh)
            pooled = _combined_tail(cell_tail, metrics.mean_service, g2,
                                    theta, size,
                                    w_max=total_rate * _TAB_HORIZON)
            flank = TailBound.exponential(1.0 / (theta * size))
            combos.append((total_rate, flank, pooled))
    if not combos:
        raise UnstableRegime(
            f"pooled service cannot cover {cfg.lambda_total:g} packets/slot")
    return latch, tuple(combos)


def _pooled_ccdf(cfg: HybridConfig, xs: np.ndarray) -> np.ndarray:
    latch, combos = _pooled_machinery(cfg)
    best = np.ones(xs.size)
    for total_rate, flank, pooled in combos:
        for i, d in enumerate(xs):
            if best[i] <= 1e-280:
                continue
            slack = d - latch
            if slack < 0.0:
                continue
            val = convolve_tailbounds(flank, pooled, total_rate * slack)
            if val < best[i]:
                best[i] = val
    return best


def mean_from_ccdf(ccdf, x_end: float = None, points: int = 600) -> float:
    """Trapezoid mean of a survival function, doubling the horizon as needed.

    `ccdf` maps an array of non-negative delays to tail probabilities.
    Warns with TruncationWarning when the horizon cap still leaves more
    than 1e-3 of tail probability at the end point.
    """
    end = float(x_end) if x_end is not None else 1e3
    for _ in range(24):
        tail_at_end = float(np.asarray(ccdf(np.array([end])))[0])
        if tail_at_end <= 1e-6 or end >= 1e9:
            break
        end *= 2.0
    if tail_at_end > 1e-3:
        warnings.warn(
            f"tail probability {tail_at_end:.2e} at grid end {end:g}",
            TruncationWarning)
    grid = np.concatenate([[0.0], np.geomspace(1e-3, end, points)])
    vals = np.asarray(ccdf(grid), dtype=float)
    return float(np.trapezoid(vals, grid))


def average_delay(cfg: HybridConfig, mode: str = "hybrid") -> float:
    """Bound-derived mean delay (slots) for one deployment choice.

    "cellular" and "mmwave" evaluate the single-channel models carrying the
    whole load; "hybrid" pools them at cfg.split. The relay-chain mean uses
    one exponent tuned at a representative point, which stays a valid bound
    at every grid point.
    """
    if mode == "cellular":
        params = replace(cfg.cellular, arrival_rate=cfg.lambda_total)
        metrics = cellular_metrics(params)

        def ccdf(xs):
            return cellular_delay_ccdf(params, xs, metrics=metrics)

        start = cfg.cellular.queue_len * 5e4
    elif mode == "mmwave":
        from .mmwave import optimize_theta

        factory = chain_arrival(cfg.mmwave, cfg.lambda_total)
        theta = optimize_theta(cfg.mmwave, factory, 4.0 * cfg.mmwave.n_vehicles)
        env = factory(theta)

        def ccdf(xs):
            return mmwave_delay_ccdf(cfg.mmwave, env, xs)

        start = 40.0 * cfg.mmwave.n_vehicles
    elif mode == "hybrid":
        def ccdf(xs):
            return hybrid_delay_ccdf(cfg, xs)

        start = 2e3
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return mean_from_ccdf(ccdf, x_end=start)
