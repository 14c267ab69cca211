"""Contention-channel analytics: collision fixed point, service moments, delay tail.

Models a slotted broadcast channel with exponential backoff. Stations walk a
chain of backoff stages with growing contention windows; collisions advance
the stage, success (or a collision in the last stage) resets it. The exported
pipeline turns protocol parameters into a stochastic service curve plus a
tail bound, and finally into an upper bound on the packet delay CCDF.
"""

from dataclasses import dataclass

import numpy as np

from .snc import (Curve, TailBound, convolve_tailbounds, horizontal_deviation,
                  minplus_convolve)


class NoConvergence(RuntimeError):
    """Fixed-point iteration exhausted its budget."""


class UnstableQueue(RuntimeError):
    """Offered load meets or exceeds service capacity; waiting time diverges."""


class InvalidRegime(ValueError):
    """Deviation fraction q outside (0, 1); the tail bound is meaningless."""


@dataclass(frozen=True)
class BackoffParams:
    """Protocol and load parameters of the contention channel.

    Times are in channel slots; slot_duration converts to seconds at the
    boundary. arrival_rate is packets per slot per station.
    """
    min_window: int = 4
    window_doublings: int = 3
    max_stage: int = 5
    n_stations: int = 10
    busy_slot: float = 10.0
    collision_slot: float = 5.0
    tx_slot: float = 10.0
    queue_len: int = 100
    arrival_rate: float = 0.1
    slot_duration: float = 50e-6

    def __post_init__(self):
        if self.min_window < 1:
            raise ValueError("min_window must be >= 1")
        if not 0 < self.window_doublings <= self.max_stage:
            raise ValueError("need 0 < window_doublings <= max_stage")
        if self.n_stations < 1:
            raise ValueError("n_stations must be >= 1")
        if min(self.busy_slot, self.collision_slot, self.tx_slot) <= 0:
            raise ValueError("slot lengths must be positive")
        if self.queue_len < 1:
            raise ValueError("queue_len must be >= 1")
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")


@dataclass(frozen=True)
class CellularMetrics:
    """Solved channel state: fixed point plus service and waiting moments."""
    collision_prob: float
    attempt_prob: float
    windows: tuple
    mean_backoffs: tuple
    window_sum: int
    backoff_slot: float
    mean_service: float
    service_var: float
    mean_wait: float
    saturated: bool = False


def contention_windows(params: BackoffParams):
    """Window sizes per stage, their mean counter draws, and the window sum."""
    cap = 2 ** params.window_doublings * params.min_window
    windows = [min(2 ** i * params.min_window, cap)
               for i in range(params.max_stage + 1)]
    # counter is uniform on the integers 0..CW inclusive
    means = [w / 2.0 for w in windows]
    return windows, means, sum(w - 1 for w in windows)


def _attempt_prob(p_c, means):
    powers = p_c ** np.arange(len(means))
    return min(1.0, float(powers.sum() / (np.asarray(means) * powers).sum()))


def solve_collision_fixed_point(params: BackoffParams, method: str = "damped",
                                max_iter: int = 100_000):
    """Self-consistent per-slot collision and attempt probabilities.

    method "damped" relaxes p_c toward the map value; "bisect" brackets the
    root of the composed residual. Both land on the same point, which the
    acceptance sweep checks.
    """
    _, means, _ = contention_windows(params)
    n = params.n_stations
    if n == 1:
        return 0.0, _attempt_prob(0.0, means)

    def fmap(p_c):
        return 1.0 - np.exp(-(n - 1) * _attempt_prob(p_c, means))

    if method == "bisect":
        lo, hi = 0.0, 1.0 - 1e-15
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid - fmap(mid) > 0.0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-15:
                break
        p_c = 0.5 * (lo + hi)
        return p_c, _attempt_prob(p_c, means)
    if method != "damped":
        raise ValueError(f"unknown method {method!r}")

    p_c, damp = 0.5, 0.5
    best = np.inf
    stuck = 0
    for _ in range(max_iter):
        target = fmap(p_c)
        resid = abs(p_c - target)
        if resid < 1e-13:
            return p_c, _attempt_prob(p_c, means)
        if resid < best - 1e-16:
            best, stuck = resid, 0
        else:
            stuck += 1
            if stuck > 500:  # oscillating; relax harder
                damp, stuck = max(damp / 2.0, 1e-3), 0
        p_c = (1.0 - damp) * p_c + damp * target
    raise NoConvergence(f"residual {abs(p_c - fmap(p_c)):.3e} after {max_iter} iterations")


def _service_moments(params: BackoffParams, p_c, p_a):
    """Backoff slot length and the first two moments of the stage chain."""
    windows, means, _ = contention_windows(params)
    n = params.n_stations
    t_b = ((1.0 - p_a) ** n
           + n * p_a * (1.0 - p_a) ** (n - 1) * params.tx_slot
           + p_c * params.collision_slot)
    stage_mean = np.array([mu * t_b + params.tx_slot for mu in means])
    reach = p_c ** np.arange(len(means))  # probability the chain gets to stage j
    mean_serv = float(reach @ stage_mean)
    # exact second moment of the truncated-geometric stage sum: the counter
    # at stage j is uniform on 0..CW_j, so Var = CW(CW+2)/12
    counter_var = np.array([w * (w + 2) / 12.0 for w in windows])
    stage_second = counter_var * t_b ** 2 + stage_mean ** 2
    prefix = np.concatenate([[0.0], np.cumsum(stage_mean)[:-1]])
    second = float(reach @ stage_second + 2.0 * (reach * stage_mean) @ prefix)
    return t_b, mean_serv, second - mean_serv ** 2


def service_time_moments(params: BackoffParams, p_c, p_a):
    """(backoff slot, mean service, service variance, mean wait), all in slots.

    The wait is the Pollaczek-Khinchin number-in-system form evaluated in
    slot units, as the model prescribes. Raises UnstableQueue when the
    utilization reaches 1.
    """
    t_b, mean_serv, var_serv = _service_moments(params, p_c, p_a)
    lam = params.arrival_rate
    rho = lam * mean_serv
    if rho >= 1.0:
        raise UnstableQueue(f"utilization {rho:.3f} >= 1")
    t_q = rho + (rho ** 2 + lam ** 2 * var_serv) / (2.0 * (1.0 - rho))
    return t_b, mean_serv, var_serv, t_q


def cellular_metrics(params: BackoffParams, method: str = "damped") -> CellularMetrics:
    """Solve the channel end to end, falling back to a saturated wait.

    When the queue is unstable the waiting-time formula is undefined; the
    bound pipeline then uses one mean service time of head-of-line backlog
    as the effective wait and flags the metrics as saturated.
    """
    windows, means, wsum = contention_windows(params)
    p_c, p_a = solve_collision_fixed_point(params, method=method)
    t_b, mean_serv, var_serv = _service_moments(params, p_c, p_a)
    lam = params.arrival_rate
    rho = lam * mean_serv
    saturated = rho >= 1.0
    if saturated:
        t_q = mean_serv
    else:
        t_q = rho + (rho ** 2 + lam ** 2 * var_serv) / (2.0 * (1.0 - rho))
    return CellularMetrics(collision_prob=p_c, attempt_prob=p_a,
                           windows=tuple(windows), mean_backoffs=tuple(means),
                           window_sum=wsum, backoff_slot=t_b,
                           mean_service=mean_serv, service_var=var_serv,
                           mean_wait=t_q, saturated=saturated)


def _deviation_scale(params: BackoffParams, metrics: CellularMetrics):
    """Window constant K and deviation fraction q of the service tail."""
    scale = (params.max_stage * params.collision_slot
             + params.queue_len * metrics.mean_service
             + metrics.window_sum * params.busy_slot)
    q = (metrics.mean_service + metrics.mean_wait - params.busy_slot) / scale
    return scale, q


def raw_deviation_bound(params: BackoffParams, metrics: CellularMetrics):
    """Literal binomial-entropy deviation bound, defined on 0 <= y < 1 - q.

    Returns the uncorrected evaluator (1 outside the valid region). It is not
    monotone below y = q; the pipeline uses the corrected tail from
    cellular_service_curve instead.
    """
    scale, q = _deviation_scale(params, metrics)
    if not 0.0 < q < 1.0:
        raise InvalidRegime(f"deviation fraction q={q:.4f} outside (0, 1)")
    length = params.queue_len
    offset = length * params.busy_slot

    def bound(x):
        y = (np.asarray(x, dtype=float) - offset) / (length * scale)
        inside = (y >= 0.0) & (y < 1.0 - q)
        ys = np.clip(y, 1e-300, 1.0 - 1e-12)
        logv = length * (ys * np.log(q / ys)
                         + (1.0 - ys) * np.log((1.0 - q) / (1.0 - ys)))
        out = np.where(inside, np.exp(logv), 1.0)
        # y -> 0 limit of the entropy form
        out = np.where(inside & (y == 0.0), (1.0 - q) ** length, out)
        return out if out.ndim else float(out)

    return bound


def cellular_service_curve(params: BackoffParams, metrics: CellularMetrics):
    """Stochastic service curve of one station: (rate curve, deviation tail).

    The curve is the min-plus product of the two linear components, so its
    rate is the smaller of the two. The tail is the Chernoff form of the
    deviation probability, kept at 1 on the deterministic flank (y <= q)
    where the raw formula dips invalidly below 1, and continued past the
    y < 1 - q region by its monotone limit q^len.
    """
    scale, q = _deviation_scale(params, metrics)
    if not 0.0 < q < 1.0:
        raise InvalidRegime(f"deviation fraction q={q:.4f} outside (0, 1)")
    lam = params.arrival_rate
    beta = minplus_convolve(Curve.linear(metrics.mean_service * lam),
                            Curve.linear(metrics.mean_wait * lam))

    length = params.queue_len
    # time for the full backlog window to drain at one packet per busy slot:
    # the deterministic part of the delay
    offset = horizontal_deviation(Curve([(0.0, float(length))]),
                                  Curve.linear(1.0 / params.busy_slot), 0.0)
    floor = offset + q * length * scale

    def tail(x):
        y = (np.asarray(x, dtype=float) - offset) / (length * scale)
        ys = np.clip(y, q, 1.0 - 1e-15)
        logv = length * (ys * np.log(q / ys)
                         + (1.0 - ys) * np.log((1.0 - q) / (1.0 - ys)))
        out = np.where(y <= q, 1.0, np.where(y >= 1.0, q ** length, np.exp(logv)))
        return out if out.ndim else float(out)

    return beta, TailBound(tail, support_floor=floor)


def cellular_delay_ccdf(params: BackoffParams, x, metrics: CellularMetrics = None):
    """Upper bound on P{packet delay > x slots} for the contention channel.

    Composes the service deviation tail with the arrival bounding function
    through the tail-bound convolution. Arrival burstiness is already folded
    into the calibrated fraction q, so the arrival bound is the unit step
    at zero.
    """
    if metrics is None:
        metrics = cellular_metrics(params)
    _, tail = cellular_service_curve(params, metrics)
    arrivals = TailBound.step(0.0)
    xs = np.asarray(x, dtype=float)
    out = np.array([min(1.0, convolve_tailbounds(arrivals, tail, float(v)))
                    for v in np.atleast_1d(xs)])
    return out.reshape(xs.shape) if xs.ndim else float(out[0])
