"""Inter-vehicle distance control driven by the learned delay bound.

Each follower keeps a safe distance built from its own braking ability,
the stale-data exposure window given by the communication delay bound,
and what its predecessor last reported. A two-threshold hysteresis
around that distance commands brake, coast, or cruise so the gap settles
without chattering.
"""

import math
from dataclasses import dataclass

from .predictor import worst_case_horizon
from .surrogate import DelayQuery, predict_delay


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state on a single lane, position at the front bumper."""
    position: float
    speed: float
    a_max_brake: float = 6.0
    a_max_accel: float = 2.5
    length: float = 4.5

    def __post_init__(self):
        if self.speed < 0.0:
            raise ValueError("speed cannot be negative")
        if self.a_max_brake <= 0.0 or self.a_max_accel <= 0.0:
            raise ValueError("braking and acceleration limits are magnitudes")
        if self.length <= 0.0:
            raise ValueError("length must be positive")


@dataclass(frozen=True)
class ControlConfig:
    k1: float = 1.05
    k2: float = 1.12
    cruise_accel: float = 1.5
    brake_accel: float = -3.0
    timeout_prob: float = 0.01
    horizon: int = 3
    control_period: float = 0.1
    staleness_periods: int = 3
    target_speed: float = 7.5
    slot_duration: float = 50e-6

    def __post_init__(self):
        if not self.k2 > self.k1 > 1.0:
            raise ValueError("need k2 > k1 > 1")
        if self.cruise_accel <= 0.0:
            raise ValueError("cruise_accel must be positive")
        if self.brake_accel >= 0.0:
            raise ValueError("brake_accel must be negative")
        if not 0.0 < self.timeout_prob < 1.0:
            raise ValueError("timeout_prob must be in (0, 1)")
        if self.control_period <= 0.0 or self.slot_duration <= 0.0:
            raise ValueError("periods must be positive")


@dataclass(frozen=True)
class Message:
    """What a vehicle broadcasts to the one behind it."""
    position: float
    speed: float
    a_max_brake: float
    length: float
    sent_at: float


@dataclass(frozen=True)
class ChannelOutlook:
    """Network operating point assumed when querying the delay bound."""
    arrival_rate: float
    n_vehicles: int
    noise_level: float
    split: float = 0.5


@dataclass(frozen=True)
class ControlDecision:
    accel: float
    gap: float = math.nan
    safe_gap: float = math.nan
    delay_slots: float = math.nan
    stale: bool = False


def safe_distance(follower: VehicleState, leader: VehicleState,
                  delay_s: float) -> float:
    """Gap that absorbs a full stop plus the stale-information window."""
    if delay_s < 0.0:
        raise ValueError("delay cannot be negative")
    gap = (follower.speed ** 2 / (2.0 * follower.a_max_brake)
           + delay_s * follower.speed
           - leader.speed ** 2 / (2.0 * leader.a_max_brake))
    return max(gap, 0.0)


def map_acceleration(gap: float, safe_gap: float, cfg: ControlConfig) -> float:
    """Brake below the band, coast inside it, cruise above it.

    Both switching surfaces resolve to the safer command: a gap exactly
    at the lower threshold brakes, exactly at the upper one coasts.
    """
    if safe_gap < 0.0:
        raise ValueError("safe gap cannot be negative")
    if gap <= cfg.k1 * safe_gap:
        return cfg.brake_accel
    if gap <= cfg.k2 * safe_gap:
        return 0.0
    return cfg.cruise_accel


def pessimistic_outlook(chains, split: float = 0.5,
                        horizon: int = None) -> ChannelOutlook:
    """Worst channel parameters reachable within the prediction horizon.

    chains maps "arrival_rate" / "n_vehicles" / "noise_level" to a
    (model, current context) pair; each forecast level is read at its
    upper bin edge, the fleet size truncated to the bin's largest count.
    """
    worst = {}
    for name, (model, context) in chains.items():
        level = worst_case_horizon(model, context, horizon=horizon)
        worst[name] = model.config.bin_edges[level + 1]
    return ChannelOutlook(arrival_rate=worst["arrival_rate"],
                          n_vehicles=int(worst["n_vehicles"]),
                          noise_level=worst["noise_level"],
                          split=split)


def lead_step(own: VehicleState, cfg: ControlConfig) -> ControlDecision:
    """Leader has nobody to follow: close on the target speed and hold."""
    accel = (cfg.target_speed - own.speed) / cfg.control_period
    return ControlDecision(
        accel=min(max(accel, cfg.brake_accel), cfg.cruise_accel))


def control_step(own: VehicleState, message, now: float,
                 outlook: ChannelOutlook, surrogate_model,
                 cfg: ControlConfig) -> ControlDecision:
    """One follower decision from the last heard predecessor report.

    Missing or over-age predecessor data commands the brake outright.
    The reported position is stale, which only under-states the true gap,
    so acting on it stays on the safe side.
    """
    if message is None or \
            now - message.sent_at > cfg.staleness_periods * cfg.control_period:
        return ControlDecision(accel=cfg.brake_accel, stale=True)
    query = DelayQuery(timeout_prob=cfg.timeout_prob,
                       arrival_rate=outlook.arrival_rate,
                       n_vehicles=outlook.n_vehicles,
                       noise_level=outlook.noise_level,
                       split=outlook.split)
    delay_slots = predict_delay(surrogate_model, query)
    leader = VehicleState(position=message.position, speed=message.speed,
                          a_max_brake=message.a_max_brake,
                          length=message.length)
    safe_gap = safe_distance(own, leader, delay_slots * cfg.slot_duration)
    gap = message.position - message.length - own.position
    return ControlDecision(accel=map_acceleration(gap, safe_gap, cfg),
                           gap=gap, safe_gap=safe_gap,
                           delay_slots=delay_slots)
