"""Delay-bound dataset generation and a constant-time learned lookup.

The analytic pooled bound is too slow for a control loop, so a grid of
(query, inverted delay) pairs is generated offline and a small ramp network
learns the map. Queries carry a scalar noise level that stretches both the
shadowing spread and the link SNR between a benign and a harsh channel.
"""

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from ._nn import Diverged, forward, init_layers, mse_loss, train_mse
from .cellular import BackoffParams, NoConvergence, UnstableQueue
from .hybrid import HybridConfig, hybrid_delay_ccdf
from .mmwave import EmptyStabilityRegion, MmWaveParams, UnstableRegime

log = logging.getLogger(__name__)

DATASET_HEADER = ("p", "lambda", "n", "noise_level", "split", "delay_slots")
_MODEL_FORMAT = "delay-mlp"
_MODEL_VERSION = 1
_INFEASIBLE = (UnstableRegime, EmptyStabilityRegion, UnstableQueue, NoConvergence)


class NotReached(RuntimeError):
    """The tail never crosses the requested probability on the search grid."""


class ExtrapolationWarning(UserWarning):
    """A query left the box the model was trained on."""


@dataclass(frozen=True)
class DelayQuery:
    """One lookup: timeout probability plus the channel operating point."""
    timeout_prob: float
    arrival_rate: float
    n_vehicles: int
    noise_level: float = 0.5
    split: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.timeout_prob < 1.0:
            raise ValueError("timeout_prob must be in (0, 1)")
        if self.arrival_rate < 0.0:
            raise ValueError("arrival_rate must be non-negative")
        if self.n_vehicles < 2:
            raise ValueError("n_vehicles must be at least 2")
        if not 0.0 <= self.split <= 1.0:
            raise ValueError("split must be in [0, 1]")


def noise_profile(level: float) -> tuple:
    """Map the scalar noise level to (shadowing dB spread, linear SNR).

    level 0 is a benign street canyon (4 dB shadowing, 26 dB SNR), level 1
    a harsh one (8 dB, 14 dB); 0.5 lands on the calibrated defaults.
    """
    shadow_db = 4.0 + 4.0 * float(level)
    snr_db = 26.0 - 12.0 * float(level)
    return shadow_db, 10.0 ** (snr_db / 10.0)


def query_config(query: DelayQuery) -> HybridConfig:
    """Deployment config for one query, on the calibrated channel defaults."""
    shadow_db, snr = noise_profile(query.noise_level)
    return HybridConfig(
        split=query.split,
        cellular=replace(BackoffParams(), n_stations=query.n_vehicles),
        mmwave=replace(MmWaveParams(), n_vehicles=query.n_vehicles,
                       shadow_sigma_db=shadow_db, snr=snr),
        lambda_total=query.arrival_rate)


def _search_grid(x_max: float, points: int) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-3, x_max, points)])


def _invert_from_values(ccdf, grid, vals, p: float) -> float:
    hits = vals <= p
    if not hits.any():
        raise NotReached(f"tail stays above {p:g} out to {grid[-1]:g}")
    idx = int(np.argmax(hits))
    if idx == 0:
        return 0.0
    left, right = grid[idx - 1], float(grid[idx])
    mid = 0.5 * (left + right)
    if float(np.asarray(ccdf(np.array([mid])))[0]) <= p:
        right = mid
    return right


def invert_ccdf(ccdf, p: float, x_max: float = 1e6, points: int = 400) -> float:
    """Smallest delay whose tail probability is at or below p.

    Scans a log grid, then refines the bracketing pair with one bisection
    step; the returned point always satisfies ccdf(D) <= p. Raises
    NotReached when even x_max keeps more than p of the mass.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    grid = _search_grid(x_max, points)
    vals = np.asarray(ccdf(grid), dtype=float)
    return _invert_from_values(ccdf, grid, vals, p)


def _combo_key(query: DelayQuery) -> tuple:
    return (query.arrival_rate, query.n_vehicles, query.noise_level, query.split)


def _memoized(ccdf):
    # queries sharing an operating point probe the same bracket midpoints
    seen = {}

    def wrapped(x):
        xs = np.asarray(x, dtype=float)
        if xs.shape == (1,):
            key = float(xs[0])
            if key not in seen:
                seen[key] = np.asarray(ccdf(xs), dtype=float)
            return seen[key]
        return ccdf(xs)

    return wrapped


def generate_dataset(queries, path=None, x_max: float = 1e6,
                     points: int = 400) -> list:
    """Label every feasible query with its inverted delay bound.

    Queries sharing a channel operating point reuse one bound evaluation
    pipeline. Infeasible operating points and probabilities the tail never
    reaches are dropped with a log line, never raised.
    """
    queries = list(queries)
    rows = []
    grid = _search_grid(x_max, points)
    evaluated = {}
    for query in queries:
        key = _combo_key(query)
        if key not in evaluated:
            cfg = query_config(query)
            ccdf = _memoized(lambda x, c=cfg: hybrid_delay_ccdf(c, x))
            try:
                vals = np.asarray(ccdf(grid), dtype=float)
            except _INFEASIBLE as err:
                log.warning("dropping operating point %s: %s", key, err)
                vals = None
            evaluated[key] = (ccdf, vals)
        ccdf, vals = evaluated[key]
        if vals is None:
            continue
        try:
            delay = _invert_from_values(ccdf, grid, vals, query.timeout_prob)
        except NotReached as err:
            log.warning("dropping %s: %s", query, err)
            continue
        rows.append((query, delay))
    if path is not None:
        write_dataset(path, rows, queries=queries)
    return rows


def write_dataset(path, rows, queries=None) -> None:
    """CSV of labeled rows plus a sibling .meta.json with the provenance."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for query, delay in rows:
            writer.writerow([repr(query.timeout_prob), repr(query.arrival_rate),
                             query.n_vehicles, repr(query.noise_level),
                             repr(query.split), repr(float(delay))])
    meta = {
        "format": "delay-dataset",
        "version": 1,
        "package_version": __version__,
        "rows": len(rows),
        "requested": len(queries) if queries is not None else len(rows),
        "base_cellular": {k: getattr(BackoffParams(), k)
                          for k in BackoffParams.__dataclass_fields__},
        "base_mmwave": {k: getattr(MmWaveParams(), k)
                        for k in MmWaveParams.__dataclass_fields__},
    }
    with open(f"{path}.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != DATASET_HEADER:
            raise ValueError(f"unexpected dataset header {header}")
        for rec in reader:
            query = DelayQuery(timeout_prob=float(rec[0]),
                               arrival_rate=float(rec[1]),
                               n_vehicles=int(rec[2]),
                               noise_level=float(rec[3]),
                               split=float(rec[4]))
            rows.append((query, float(rec[5])))
    return rows


@dataclass
class MLPModel:
    """Trained ramp network plus the normalization that framed it."""
    dims: tuple
    weights: list
    biases: list
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    box_low: np.ndarray
    box_high: np.ndarray
    holdout_rel_err: float


def _raw_features(query: DelayQuery) -> np.ndarray:
    return np.array([query.timeout_prob, query.arrival_rate,
                     float(query.n_vehicles), query.noise_level, query.split])


def _features(query: DelayQuery) -> np.ndarray:
    raw = _raw_features(query)
    return np.concatenate([[math.log(raw[0])], raw[1:]])


def train_mlp(rows, hidden=(64, 64), seed: int = 0, epochs: int = 1500,
              lr: float = 1e-2, batch_size: int = 64,
              holdout: float = 0.2) -> MLPModel:
    """Fit log-delay on z-scored features; returns the held-out error too.

    Deterministic for a given seed. Raises Diverged when the loss leaves
    the finite range and ValueError on datasets too small to split.
    """
    rows = list(rows)
    if len(rows) < 50:
        raise ValueError(f"need at least 50 rows, got {len(rows)}")
    if any(delay <= 0.0 for _, delay in rows):
        raise ValueError("delay labels must be positive")
    feats = np.array([_features(q) for q, _ in rows])
    raws = np.array([_raw_features(q) for q, _ in rows])
    targets = np.log(np.array([d for _, d in rows]))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rows))
    n_hold = max(1, int(round(holdout * len(rows))))
    hold, fit = order[:n_hold], order[n_hold:]

    x_mean = feats[fit].mean(axis=0)
    x_std = np.maximum(feats[fit].std(axis=0), 1e-12)
    y_mean = float(targets[fit].mean())
    y_std = float(max(targets[fit].std(), 1e-12))
    x_fit = (feats[fit] - x_mean) / x_std
    y_fit = ((targets[fit] - y_mean) / y_std)[:, None]

    dims = (feats.shape[1],) + tuple(hidden) + (1,)
    weights, biases = init_layers(dims, rng)
    train_mse(weights, biases, x_fit, y_fit, rng, epochs=epochs,
              batch_size=batch_size, lr=lr)

    model = MLPModel(dims=dims, weights=weights, biases=biases,
                     x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std,
                     box_low=raws.min(axis=0), box_high=raws.max(axis=0),
                     holdout_rel_err=0.0)
    held_pred = np.array([predict_delay(model, rows[i][0]) for i in hold])
    held_true = np.array([rows[i][1] for i in hold])
    model.holdout_rel_err = float(
        np.mean(np.abs(held_pred - held_true) / held_true))
    return model


def predict_delay(model: MLPModel, query: DelayQuery) -> float:
    """Constant-time delay estimate; warns when the query leaves the box."""
    raw = _raw_features(query)
    if np.any(raw < model.box_low) or np.any(raw > model.box_high):
        warnings.warn(f"query {query} is outside the trained box",
                      ExtrapolationWarning)
    x = (_features(query) - model.x_mean) / model.x_std
    out = forward(model.weights, model.biases, x[None, :])[-1]
    # deep extrapolation can push the log estimate past what exp can hold
    log_delay = min(float(out[0, 0]) * model.y_std + model.y_mean, 700.0)
    return max(math.exp(log_delay), 0.0)


def monotonicity_defect_rate(model: MLPModel, base_queries,
                             p_low: float = 0.01, p_high: float = 0.1) -> float:
    """Fraction of operating points where the stricter probability does not
    get the larger delay estimate."""
    bad = 0
    total = 0
    with warnings.catch_warnings():
        # the sweep probes pairs on purpose, off-box pairs still count
        warnings.simplefilter("ignore", ExtrapolationWarning)
        for query in base_queries:
            strict = predict_delay(model, replace(query, timeout_prob=p_low))
            loose = predict_delay(model, replace(query, timeout_prob=p_high))
            total += 1
            bad += strict < loose
    return bad / total if total else 0.0


def save_model(model: MLPModel, path) -> None:
    doc = {
        "format": _MODEL_FORMAT,
        "version": _MODEL_VERSION,
        "activation": "ramp",
        "dims": list(model.dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "x_mean": model.x_mean.tolist(),
        "x_std": model.x_std.tolist(),
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "box_low": model.box_low.tolist(),
        "box_high": model.box_high.tolist(),
        "holdout_rel_err": model.holdout_rel_err,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MLPModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _MODEL_FORMAT or doc.get("version") != _MODEL_VERSION:
        raise ValueError(
            f"unsupported model document {doc.get('format')!r} "
            f"v{doc.get('version')!r}")
    return MLPModel(
        dims=tuple(doc["dims"]),
        weights=[np.array(w) for w in doc["weights"]],
        biases=[np.array(b) for b in doc["biases"]],
        x_mean=np.array(doc["x_mean"]),
        x_std=np.array(doc["x_std"]),
        y_mean=float(doc["y_mean"]),
        y_std=float(doc["y_std"]),
        box_low=np.array(doc["box_low"]),
        box_high=np.array(doc["box_high"]),
        holdout_rel_err=float(doc["holdout_rel_err"]),
    )


def grid_queries(ps, arrival_rates, n_vehicles, noise_levels, splits) -> list:
    """Cartesian product of the axis values as DelayQuery rows."""
    return [DelayQuery(timeout_prob=p, arrival_rate=rate, n_vehicles=n,
                       noise_level=z, split=s)
            for rate in arrival_rates for n in n_vehicles
            for z in noise_levels for s in splits for p in ps]
