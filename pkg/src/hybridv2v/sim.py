"""Monte Carlo channel oracles and the deterministic platoon simulator.

Everything here is reference ground truth for the analytic bounds: a
slot-level contention-channel simulator, a fluid multi-hop relay simulator,
and (further down) the discrete-time platoon scenario runner. All runs are
deterministic given a seed.
"""

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cellular import BackoffParams, contention_windows
from .control import (ChannelOutlook, ControlConfig, Message, VehicleState,
                      control_step, lead_step, pessimistic_outlook)
from .predictor import discretize
from .surrogate import DelayQuery, query_config


@dataclass(frozen=True)
class EmpiricalCcdf:
    """Sorted sample of delays with Clopper-Pearson tail envelopes."""
    delays: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delays",
                           np.sort(np.asarray(self.delays, dtype=float)))

    @property
    def n(self) -> int:
        return int(self.delays.size)

    def exceed_counts(self, x):
        return self.n - np.searchsorted(self.delays, np.asarray(x, dtype=float),
                                        side="right")

    def ccdf(self, x):
        if self.n == 0:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.exceed_counts(x) / self.n

    def envelope(self, x, confidence: float = 0.95):
        """Two-sided Clopper-Pearson (lower, upper) for P{delay > x}."""
        alpha = 1.0 - confidence
        k = np.atleast_1d(self.exceed_counts(x)).astype(float)
        n = self.n
        if n == 0:
            return np.zeros_like(k), np.ones_like(k)
        lower = np.where(k == 0, 0.0,
                         stats.beta.ppf(alpha / 2.0, k, n - k + 1.0))
        upper = np.where(k == n, 1.0,
                         stats.beta.ppf(1.0 - alpha / 2.0, k + 1.0, n - k))
        return lower, upper

    def upper_envelope(self, x, confidence: float = 0.95):
        return self.envelope(x, confidence)[1]


def simulate_cellular_mc(params: BackoffParams, runs: int = 10_000, seed: int = 0,
                         max_slots: float = 5e7, return_stats: bool = False):
    """Slot-level contention channel; returns delays of delivered packets.

    Stations hold FIFO queues capped at queue_len. Backoff counters are drawn
    uniformly on 0..CW(stage) and tick down once per channel round (idle,
    successful, or collided). A broadcast is never retransmitted: a collision
    drops the packet and advances the stage (the last stage wraps to 0), a
    success resets the stage. Runs until `runs` packets are delivered or the
    slot budget is exhausted.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rng = np.random.default_rng(seed)
    n = params.n_stations
    lam = params.arrival_rate
    stats_out = {"collisions": 0, "delivered": 0, "dropped": 0,
                 "lost_arrivals": 0, "slots": 0.0}
    if lam == 0.0:
        empty = EmpiricalCcdf(np.array([]))
        return (empty, stats_out) if return_stats else empty

    windows, _, _ = contention_windows(params)
    windows = np.asarray(windows)
    stage = np.zeros(n, dtype=int)
    counter = rng.integers(0, windows[0] + 1, size=n)
    queues = [deque() for _ in range(n)]
    backlog = np.zeros(n, dtype=bool)
    delays = []
    now = 0.0

    while len(delays) < runs and now < max_slots:
        ready = backlog & (counter == 0)
        n_tx = int(ready.sum())
        if n_tx == 0:
            length = 1.0
        elif n_tx == 1:
            length = params.tx_slot
            i = int(np.flatnonzero(ready)[0])
            delays.append(now + length - queues[i].popleft())
            stats_out["delivered"] += 1
            stage[i] = 0
            counter[i] = rng.integers(0, windows[0] + 1)
        else:
            length = params.collision_slot
            stats_out["collisions"] += 1
            for i in np.flatnonzero(ready):
                queues[i].popleft()  # broadcast lost, not retransmitted
                stats_out["dropped"] += 1
                stage[i] = 0 if stage[i] == params.max_stage else stage[i] + 1
                counter[i] = rng.integers(0, windows[stage[i]] + 1)
        ticking = backlog & (counter > 0) & ~ready
        counter[ticking] -= 1
        now += length

        arriving = rng.poisson(lam * length, size=n)
        for i in np.flatnonzero(arriving):
            space = params.queue_len - len(queues[i])
            take = min(int(arriving[i]), space)
            stats_out["lost_arrivals"] += int(arriving[i]) - take
            if take > 0 and not queues[i]:
                # queue was empty: start a fresh countdown at the current stage
                counter[i] = rng.integers(0, windows[stage[i]] + 1)
            queues[i].extend([now] * take)
        for i in range(n):
            backlog[i] = bool(queues[i])

    stats_out["slots"] = now
    ccdf = EmpiricalCcdf(np.array(delays))
    return (ccdf, stats_out) if return_stats else ccdf


def simulate_mmwave_mc(params, per_vehicle_rate: float, runs: int = 10_000,
                       seed: int = 0, packet_size: float = None):
    """Fluid store-and-forward tandem over the shadowed relay chain.

    Aggregate Poisson packet traffic enters the chain head; every hop
    forwards at a per-tick capacity of log2(1 + SINR) bits, redrawing the
    shadowing each tick, with infinite buffers. Fluid latched at a hop
    leaves it the following tick, so an unloaded chain delivers in exactly
    one tick per hop. Returns the empirical end-to-end delay CCDF of the
    first `runs` packets, delays counted in ticks.
    """
    from .mmwave import link_sinr

    hops = params.n_vehicles - 1
    size_bits = (packet_size or params.packet_size) / math.log(2.0)
    total_rate = (params.n_vehicles - 1) * per_vehicle_rate
    if total_rate <= 0:
        return EmpiricalCcdf(np.array([]))
    sigma_ln = params.shadow_sigma_db * math.log(10.0) / 10.0
    medians = np.array([link_sinr(params, h)[1] for h in range(1, hops + 1)])

    ticks = int(math.ceil(runs / total_rate * 1.3)) + 10 * hops + 100
    for _ in range(8):
        rng = np.random.default_rng(seed)
        counts = rng.poisson(total_rate, size=ticks)
        shadow = rng.standard_normal(size=(hops, ticks))
        caps = np.log2(1.0 + medians[:, None] * np.exp(sigma_ln * shadow))

        flow = counts.astype(float) * size_bits
        for h in range(hops):
            out = np.empty(ticks)
            backlog = 0.0
            for t in range(ticks):
                served = backlog if backlog < caps[h, t] else caps[h, t]
                out[t] = served
                backlog += flow[t] - served
            flow = out
        delivered_bits = np.cumsum(flow)

        n_packets = int(counts.sum())
        if n_packets < runs:
            ticks *= 2
            continue
        arrival_tick = np.repeat(np.arange(1, ticks + 1), counts)[:runs]
        need = size_bits * np.arange(1, runs + 1)
        idx = np.searchsorted(delivered_bits, need - 1e-9, side="left")
        if idx[-1] >= ticks:
            ticks *= 2
            continue
        depart_tick = idx + 1
        return EmpiricalCcdf((depart_tick - arrival_tick).astype(float))
    raise RuntimeError("tandem simulation horizon kept overflowing")


def _contention_service_sampler(params, metrics, rng):
    """Tagged-station service times under the calibrated contention state.

    Backoff slots stretch by the behavior of the other stations (idle,
    one talker, pile-up), own attempts collide with the calibrated
    probability; stages wrap like the slotted simulator.
    """
    windows, _, _ = contention_windows(params)
    windows = np.array(windows, dtype=np.int64)
    others = (params.n_stations - 1) * metrics.attempt_prob
    p_idle = math.exp(-others)
    p_one = others * p_idle
    lengths = np.array([1.0, params.tx_slot, params.collision_slot])
    probs = np.array([p_idle, p_one, max(0.0, 1.0 - p_idle - p_one)])
    probs = probs / probs.sum()
    p_fail = metrics.collision_prob

    def draw():
        total = 0.0
        stage = 0
        while True:
            pulls = int(rng.integers(0, windows[stage] + 1))
            if pulls:
                total += float(rng.choice(lengths, size=pulls, p=probs).sum())
            if rng.random() >= p_fail:
                return total + params.tx_slot
            total += params.collision_slot
            stage = 0 if stage == params.max_stage else stage + 1

    return draw


def simulate_hybrid_mc(cfg, runs: int = 10_000, seed: int = 0):
    """Work-conserving pooled drain of one queue by both channels.

    Fluid packets queue up at the tagged sender; the contention radio
    delivers one packet's worth per sampled service completion while the
    relay tandem ingests whatever fluid remains at its head-hop capacity,
    forwarding store-and-forward. A packet leaves when the two delivery
    streams jointly cover it. Returns the empirical delay CCDF in slots.
    """
    from dataclasses import replace

    from .cellular import cellular_metrics
    from .mmwave import link_sinr

    cell_params = replace(cfg.cellular,
                          arrival_rate=(1.0 - cfg.split) * cfg.lambda_total)
    metrics = cellular_metrics(cell_params)
    mm = cfg.mmwave
    hops = mm.n_vehicles - 1
    size = mm.packet_size
    lam = cfg.lambda_total
    if lam <= 0:
        return EmpiricalCcdf(np.array([]))
    sigma_ln = mm.shadow_sigma_db * math.log(10.0) / 10.0
    medians = np.array([link_sinr(mm, h)[1] for h in range(1, hops + 1)])

    rng = np.random.default_rng(seed)
    sample_service = _contention_service_sampler(cell_params, metrics, rng)

    ticks = int(math.ceil(runs / lam * 1.3)) + 20 * hops + 200
    arrival_tick = []
    delivered = 0.0
    queue = 0.0
    hop_backlog = np.zeros(hops)
    countdown = -1.0  # no contention service in progress
    total_packets = 0
    exits = {}
    next_exit = 1
    t = 0
    while next_exit <= runs:
        t += 1
        if t > ticks * 16 + 1_000_000:
            raise RuntimeError("pooled simulation failed to drain the queue")
        # contention radio: countdown runs only against queued work
        if queue > 1e-12:
            if countdown < 0.0:
                countdown = sample_service()
            countdown -= 1.0
            if countdown <= 0.0:
                grab = min(size, queue)
                queue -= grab
                delivered += grab
                countdown = -1.0
        # relay chain: head hop ingests fluid, later hops forward latched
        gammas = medians * np.exp(sigma_ln * rng.standard_normal(hops))
        caps = np.log(1.0 + gammas)
        moved = min(queue, caps[0])
        queue -= moved
        for h in range(hops - 2, -1, -1):
            out = min(hop_backlog[h], caps[h + 1])
            hop_backlog[h] -= out
            if h == hops - 2:
                delivered += out
            else:
                hop_backlog[h + 1] += out
        if hops == 1:
            delivered += moved
        else:
            hop_backlog[0] += moved
        # record exits before new arrivals land
        while next_exit <= total_packets and delivered >= next_exit * size - 1e-9:
            exits[next_exit] = t
            next_exit += 1
        new = int(rng.poisson(lam))
        if new and total_packets < runs * 4:
            arrival_tick.extend([t] * new)
            total_packets += new
            queue += new * size
    delays = np.array([exits[k] - arrival_tick[k - 1] for k in range(1, runs + 1)],
                      dtype=float)
    return EmpiricalCcdf(delays)


class CollisionDetected(RuntimeError):
    """Some gap closed to zero during a platoon run."""


@dataclass(frozen=True)
class Event:
    """Timed scenario change: channel degradation or a lead full brake."""
    time: float
    kind: str
    noise_level: float = None
    arrival_rate: float = None
    split: float = None

    def __post_init__(self):
        if self.time < 0.0:
            raise ValueError("event time cannot be negative")
        if self.kind not in ("comms-degradation", "lead-brake"):
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    vehicle_count: int = 6
    initial_gap: float = 10.0
    initial_speed: float = 7.5
    duration: float = 40.0
    tick: float = 0.01
    noise_level: float = 0.5
    arrival_rate: float = 0.1
    split: float = 0.5
    events: tuple = ()
    seed: int = 0
    mc_runs: int = 2000

    def __post_init__(self):
        if self.vehicle_count < 2:
            raise ValueError("a platoon needs at least two vehicles")
        if self.initial_gap <= 0.0:
            raise ValueError("initial gap must be positive")
        if self.initial_speed < 0.0:
            raise ValueError("initial speed cannot be negative")
        if self.tick <= 0.0 or self.duration <= 0.0:
            raise ValueError("tick and duration must be positive")
        object.__setattr__(self, "events",
                           tuple(sorted(self.events, key=lambda e: e.time)))


@dataclass
class SimTrace:
    """Tick-resolution platoon history plus run-level flags."""
    times: np.ndarray
    positions: np.ndarray
    speeds: np.ndarray
    commands: np.ndarray
    gaps: np.ndarray
    delay_slots: np.ndarray
    bound_slots: np.ndarray
    safe_gaps: np.ndarray
    stale: np.ndarray
    collision: bool
    collision_time: float
    scenario: ScenarioConfig
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class HeadwayConfig:
    """Constant-time-headway comparison rule."""
    k_speed: float = 0.8
    k_gap: float = 0.4
    headway: float = 1.2
    standstill: float = 2.0
    accel_limit: float = 2.5
    brake_limit: float = 6.0


def baseline_follower(gap: float, rel_speed: float, own_speed: float,
                      cfg: HeadwayConfig = HeadwayConfig()) -> float:
    """Classic headway tracking: close speed and spacing errors jointly."""
    accel = (cfg.k_speed * rel_speed
             + cfg.k_gap * (gap - cfg.headway * own_speed - cfg.standstill))
    return min(max(accel, -cfg.brake_limit), cfg.accel_limit)


def _channel_states(scenario: ScenarioConfig) -> list:
    """Channel operating points the run can visit, in activation order."""
    state = (scenario.noise_level, scenario.arrival_rate, scenario.split)
    out = [(0.0, state)]
    for ev in scenario.events:
        if ev.kind != "comms-degradation":
            continue
        noise, rate, split = out[-1][1]
        state = (ev.noise_level if ev.noise_level is not None else noise,
                 ev.arrival_rate if ev.arrival_rate is not None else rate,
                 ev.split if ev.split is not None else split)
        out.append((ev.time, state))
    return out


def _default_delay_sampler(scenario: ScenarioConfig):
    """Per-state empirical delay pools drawn from the joint channel model."""
    schedule = _channel_states(scenario)
    pools = {}
    children = np.random.SeedSequence(scenario.seed).spawn(len(schedule))
    for child, (_, state) in zip(children, schedule):
        if state in pools:
            continue
        noise, rate, split = state
        cfg = query_config(DelayQuery(
            timeout_prob=0.5, arrival_rate=rate,
            n_vehicles=scenario.vehicle_count, noise_level=noise,
            split=split))
        pool = simulate_hybrid_mc(cfg, runs=scenario.mc_runs,
                                  seed=int(child.generate_state(1)[0]))
        pools[state] = pool.delays

    def sample(state, rng) -> float:
        return float(rng.choice(pools[state]))

    return sample


def run_platoon_scenario(scenario: ScenarioConfig, controller: str = "intelligent",
                         control_cfg: ControlConfig = None, surrogate_model=None,
                         chains: dict = None, predict: bool = True,
                         headway: HeadwayConfig = None, delay_sampler=None,
                         strict: bool = False) -> SimTrace:
    """Single-lane platoon under the chosen following rule.

    Vehicles broadcast their state every tick; each message reaches the
    follower after a delay drawn from the empirical channel distribution,
    so the analytic bound's slack is visible in the trace. Controllers run
    every control period on the freshest delivered report. A lead-brake
    event additionally floods an urgent stop notice to every follower.
    Deterministic for a given scenario seed.
    """
    if controller not in ("intelligent", "baseline"):
        raise ValueError(f"unknown controller {controller!r}")
    ccfg = control_cfg or ControlConfig()
    if controller == "intelligent" and surrogate_model is None:
        raise ValueError("the intelligent controller needs a delay model")
    if controller == "intelligent" and predict and not chains:
        raise ValueError("prediction needs the parameter chains")
    headway = headway or HeadwayConfig()
    if delay_sampler is None:
        delay_sampler = _default_delay_sampler(scenario)

    n = scenario.vehicle_count
    ticks = int(round(scenario.duration / scenario.tick))
    every = max(1, int(round(ccfg.control_period / scenario.tick)))
    rng = np.random.default_rng(scenario.seed)

    fleet = [VehicleState(position=-i * (scenario.initial_gap + 4.5),
                          speed=scenario.initial_speed) for i in range(n)]
    lengths = np.array([v.length for v in fleet])

    schedule = _channel_states(scenario)
    brake_events = [e for e in scenario.events if e.kind == "lead-brake"]
    lead_brake_at = brake_events[0].time if brake_events else math.inf

    contexts = {}
    if controller == "intelligent" and predict:
        noise0, rate0, _ = schedule[0][1]
        current0 = {"noise_level": noise0, "arrival_rate": rate0,
                    "n_vehicles": float(n)}
        for name, model in chains.items():
            lvl = discretize(current0[name], model.config.bin_edges)
            contexts[name] = (lvl,) * model.config.order

    times = np.arange(ticks + 1) * scenario.tick
    positions = np.zeros((ticks + 1, n))
    speeds = np.zeros((ticks + 1, n))
    commands = np.zeros((ticks + 1, n))
    gaps = np.zeros((ticks + 1, n - 1))
    delay_log = np.zeros((ticks + 1, n))
    bound_log = np.full((ticks + 1, n), math.nan)
    safe_log = np.full((ticks + 1, n), math.nan)
    stale_log = np.zeros((ticks + 1, n), dtype=bool)
    positions[0] = [v.position for v in fleet]
    speeds[0] = [v.speed for v in fleet]
    gaps[0] = positions[0, :-1] - lengths[:-1] - positions[0, 1:]

    inbox = [[] for _ in range(n)]       # (arrive_time, seq, Message)
    latest = [None] * n
    urgent_arrive = [math.inf] * n
    urgent_active = [False] * n
    accel = np.zeros(n)
    bound_now = np.full(n, math.nan)
    safe_now = np.full(n, math.nan)
    stale_now = np.zeros(n, dtype=bool)
    collision = False
    collision_time = math.nan
    state_idx = 0
    urgent_sent = False
    seq = 0

    for k in range(ticks + 1):
        now = times[k]
        while state_idx + 1 < len(schedule) and \
                schedule[state_idx + 1][0] <= now + 1e-12:
            state_idx += 1
        state = schedule[state_idx][1]
        lead_braking = now >= lead_brake_at - 1e-12

        # every vehicle reports back; the urgent stop floods once, directly
        for i in range(n - 1):
            d_slots = delay_sampler(state, rng)
            delay_log[k, i] = d_slots
            msg = Message(position=fleet[i].position, speed=fleet[i].speed,
                          a_max_brake=fleet[i].a_max_brake,
                          length=fleet[i].length, sent_at=now)
            heapq.heappush(inbox[i + 1],
                           (now + d_slots * ccfg.slot_duration, seq, msg))
            seq += 1
        if lead_braking and not urgent_sent:
            for i in range(1, n):
                d_slots = delay_sampler(state, rng)
                urgent_arrive[i] = now + d_slots * ccfg.slot_duration
            urgent_sent = True
        for i in range(1, n):
            while inbox[i] and inbox[i][0][0] <= now + 1e-12:
                _, _, msg = heapq.heappop(inbox[i])
                if latest[i] is None or msg.sent_at >= latest[i].sent_at:
                    latest[i] = msg

        # first decision waits one control period so the opening broadcasts
        # can land; commands start at zero
        if k % every == 0 and k > 0:
            noise, rate, split = state
            if controller == "intelligent" and predict:
                current = {"noise_level": noise, "arrival_rate": rate,
                           "n_vehicles": float(n)}
                live = {}
                for name, model in chains.items():
                    lvl = discretize(current[name], model.config.bin_edges)
                    contexts[name] = contexts[name][1:] + (lvl,)
                    live[name] = (model, contexts[name])
                outlook = pessimistic_outlook(live, split=split,
                                              horizon=ccfg.horizon)
            else:
                outlook = ChannelOutlook(arrival_rate=rate, n_vehicles=n,
                                         noise_level=noise, split=split)
            for i in range(n):
                if urgent_active[i] or (i > 0 and now >= urgent_arrive[i]):
                    urgent_active[i] = True
                    accel[i] = -fleet[i].a_max_brake
                    continue
                if i == 0:
                    if lead_braking:
                        accel[0] = -fleet[0].a_max_brake
                    else:
                        accel[0] = lead_step(fleet[0], ccfg).accel
                    continue
                if controller == "baseline":
                    msg = latest[i]
                    if msg is None:
                        accel[i] = 0.0
                        continue
                    gap = msg.position - msg.length - fleet[i].position
                    accel[i] = baseline_follower(
                        gap, msg.speed - fleet[i].speed, fleet[i].speed,
                        headway)
                    accel[i] = min(max(accel[i], -fleet[i].a_max_brake),
                                   fleet[i].a_max_accel)
                    continue
                decision = control_step(fleet[i], latest[i], now, outlook,
                                        surrogate_model, ccfg)
                accel[i] = decision.accel
                bound_now[i] = decision.delay_slots
                safe_now[i] = decision.safe_gap
                stale_now[i] = decision.stale

        commands[k] = accel
        bound_log[k] = bound_now
        safe_log[k] = safe_now
        stale_log[k] = stale_now
        if k == ticks:
            break
        new_speeds = np.maximum(speeds[k] + accel * scenario.tick, 0.0)
        positions[k + 1] = positions[k] + \
            0.5 * (speeds[k] + new_speeds) * scenario.tick
        speeds[k + 1] = new_speeds
        gaps[k + 1] = positions[k + 1, :-1] - lengths[:-1] - positions[k + 1, 1:]
        fleet = [VehicleState(position=float(positions[k + 1, i]),
                              speed=float(speeds[k + 1, i]),
                              a_max_brake=fleet[i].a_max_brake,
                              a_max_accel=fleet[i].a_max_accel,
                              length=fleet[i].length) for i in range(n)]
        if not collision and np.any(gaps[k + 1] <= 0.0):
            collision = True
            collision_time = times[k + 1]

    if strict and collision:
        raise CollisionDetected(f"gap closed at t={collision_time:.2f}s")
    return SimTrace(
        times=times, positions=positions, speeds=speeds, commands=commands,
        gaps=gaps, delay_slots=delay_log, bound_slots=bound_log,
        safe_gaps=safe_log, stale=stale_log, collision=collision,
        collision_time=collision_time, scenario=scenario,
        metadata={"controller": controller, "predict": predict,
                  "speed_change_definition":
                      "per-tick count of vehicles whose command changed"})


def urgent_brake_scenario(scenario: ScenarioConfig, **kwargs) -> SimTrace:
    """Platoon run whose scenario must script a lead full brake."""
    if not any(e.kind == "lead-brake" for e in scenario.events):
        raise ValueError("scenario has no lead-brake event")
    return run_platoon_scenario(scenario, **kwargs)


def compute_metrics(trace: SimTrace, dwell: float = 5.0) -> dict:
    """Run summary: stability counts, convergence, gap extremes, onset."""
    changed = np.abs(np.diff(trace.commands, axis=0)) > 0.0
    counts = changed.sum(axis=1)
    nonzero = np.nonzero(counts)[0]
    convergence = 0.0 if nonzero.size == 0 else \
        float(trace.times[nonzero[-1] + 1] + dwell)

    brake_events = [e for e in trace.scenario.events if e.kind == "lead-brake"]
    onset = math.nan
    if brake_events:
        start = brake_events[0].time
        braking = np.nonzero((trace.commands[:, -1] < 0.0)
                             & (trace.times >= start))[0]
        if braking.size:
            onset = float(trace.times[braking[0]] - start)

    return {
        "collision": bool(trace.collision),
        "collision_time": None if math.isnan(trace.collision_time)
        else float(trace.collision_time),
        "speed_change_counts": counts.astype(int).tolist(),
        "convergence_time": convergence,
        "dwell": float(dwell),
        "avg_gap": trace.gaps.mean(axis=1).tolist(),
        "min_gap": float(trace.gaps.min()),
        "brake_onset_latency": onset,
        "speed_change_definition":
            trace.metadata.get("speed_change_definition", ""),
    }


def trace_to_csv(trace: SimTrace, path) -> None:
    """Long-format tick log, one row per vehicle per tick."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "vehicle", "position", "speed", "gap",
                         "safe_gap", "bound_slots", "command", "stale"])
        for k, t in enumerate(trace.times):
            for i in range(trace.positions.shape[1]):
                gap = trace.gaps[k, i - 1] if i > 0 else math.nan
                writer.writerow([
                    repr(float(t)), i, repr(float(trace.positions[k, i])),
                    repr(float(trace.speeds[k, i])), repr(float(gap)),
                    repr(float(trace.safe_gaps[k, i])),
                    repr(float(trace.bound_slots[k, i])),
                    repr(float(trace.commands[k, i])),
                    int(trace.stale[k, i])])
