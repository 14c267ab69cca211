"""Discrete-state parameter forecasting for the online controller.

A channel parameter (noise level, fleet size, offered load) is binned into
levels and modeled as a fixed-order Markov chain. Transition frequencies are
counted from history, unseen successors get a confidence-weighted share of
the mass, and a small ramp network memorizes the smoothed table so lookups
stay constant-time. A pessimistic rollout turns the fitted chain into a
worst-level forecast over a short horizon.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._nn import Diverged, forward, init_layers, train_mse

_EPS = 1e-9


@dataclass(frozen=True)
class MarkovConfig:
    """Chain shape for one parameter."""
    levels: int
    order: int = 1
    bin_edges: tuple = None
    zeta: float = -0.1
    horizon: int = 3
    # successor probabilities at or below this are ignored by the rollout;
    # zero keeps every state with any mass at all
    threshold: float = 0.05

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be at least 1")
        if self.levels < 2:
            raise ValueError("need at least two levels")
        if self.zeta >= 0.0:
            raise ValueError("zeta must be negative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.bin_edges is not None:
            edges = tuple(float(e) for e in self.bin_edges)
            if len(edges) != self.levels + 1:
                raise ValueError("bin_edges must bound exactly `levels` bins")
            if any(a >= b for a, b in zip(edges, edges[1:])):
                raise ValueError("bin_edges must be strictly increasing")
            object.__setattr__(self, "bin_edges", edges)


@dataclass
class TransitionTable:
    """Per-context successor counts and the frequencies they imply."""
    levels: int
    order: int
    counts: dict = field(default_factory=dict)
    frequencies: dict = field(default_factory=dict)


def discretize(value: float, bin_edges) -> int:
    """Index of the half-open bin holding value, clamped to the end bins."""
    if not math.isfinite(value):
        raise ValueError(f"cannot bin non-finite value {value!r}")
    edges = np.asarray(bin_edges, dtype=float)
    idx = int(np.searchsorted(edges, value, side="right")) - 1
    return min(max(idx, 0), len(edges) - 2)


def discretize_series(values, bin_edges) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("cannot bin non-finite values")
    edges = np.asarray(bin_edges, dtype=float)
    idx = np.searchsorted(edges, vals, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2).astype(int)


def estimate_frequencies(sequences, config: MarkovConfig) -> TransitionTable:
    """Count successors behind every observed length-`order` context."""
    table = TransitionTable(levels=config.levels, order=config.order)
    for seq in sequences:
        seq = np.asarray(seq, dtype=int)
        if len(seq) < config.order + 1:
            raise ValueError(
                f"sequence of length {len(seq)} cannot feed order "
                f"{config.order}")
        if seq.min() < 0 or seq.max() >= config.levels:
            raise ValueError("levels out of range for this config")
        for t in range(config.order, len(seq)):
            ctx = tuple(int(s) for s in seq[t - config.order:t])
            if ctx not in table.counts:
                table.counts[ctx] = np.zeros(config.levels)
            table.counts[ctx][seq[t]] += 1.0
    for ctx, counts in table.counts.items():
        table.frequencies[ctx] = counts / counts.sum()
    return table


def confidence_factor(count: float, zeta: float) -> float:
    """How much an estimate backed by `count` observations is trusted."""
    if count < 0.0:
        raise ValueError("count must be non-negative")
    if zeta >= 0.0:
        raise ValueError("zeta must be negative")
    return 1.0 - math.exp(zeta * count)


def smooth_frequencies(table: TransitionTable, config: MarkovConfig,
                       verbatim: bool = False) -> TransitionTable:
    """Move a confidence-weighted slice of mass onto unseen successors.

    Contexts whose every successor was observed pass through untouched.
    The raw update does not preserve normalization and can push small
    frequencies negative, so entries are floored and the vector rescaled;
    verbatim=True skips that repair for side-by-side comparison.
    """
    out = TransitionTable(levels=table.levels, order=table.order)
    for ctx, freq in table.frequencies.items():
        out.counts[ctx] = table.counts[ctx].copy()
        zero = freq == 0.0
        n_zero = int(zero.sum())
        if n_zero == 0:
            out.frequencies[ctx] = freq.copy()
            continue
        share = confidence_factor(table.counts[ctx].sum(), config.zeta) / n_zero
        if verbatim:
            out.frequencies[ctx] = np.where(zero, share, freq - share)
            continue
        smoothed = np.where(zero, share, np.maximum(freq - share, _EPS))
        out.frequencies[ctx] = smoothed / smoothed.sum()
    return out


@dataclass
class PredictorModel:
    """Ramp network memorizing a smoothed transition table."""
    config: MarkovConfig
    dims: tuple
    weights: list
    biases: list
    max_tv: float


def _encode(contexts, order: int, levels: int) -> np.ndarray:
    x = np.zeros((len(contexts), order * levels))
    for i, ctx in enumerate(contexts):
        for pos, state in enumerate(ctx):
            x[i, pos * levels + state] = 1.0
    return x


def train_predictor(table: TransitionTable, config: MarkovConfig,
                    hidden: int = 32, seed: int = 0, epochs: int = 3000,
                    lr: float = 1e-2) -> PredictorModel:
    """Fit the network to every context of a smoothed table.

    The fit quality is reported as the largest total-variation distance
    between the table rows and the network's output on those contexts.
    """
    if not table.frequencies:
        raise ValueError("cannot train on an empty table")
    contexts = sorted(table.frequencies)
    x = _encode(contexts, config.order, config.levels)
    y = np.array([table.frequencies[ctx] for ctx in contexts])
    rng = np.random.default_rng(seed)
    dims = (config.order * config.levels, hidden, config.levels)
    weights, biases = init_layers(dims, rng)
    train_mse(weights, biases, x, y, rng, epochs=epochs, lr=lr)
    model = PredictorModel(config=config, dims=dims, weights=weights,
                           biases=biases, max_tv=0.0)
    tv = [0.5 * np.abs(predict_distribution(model, ctx) - y[i]).sum()
          for i, ctx in enumerate(contexts)]
    model.max_tv = float(max(tv))
    return model


def predict_distribution(model: PredictorModel, context) -> np.ndarray:
    """Successor distribution for a context, valid even off the table."""
    ctx = tuple(int(s) for s in context)
    if len(ctx) != model.config.order:
        raise ValueError(f"context must hold {model.config.order} levels")
    if any(s < 0 or s >= model.config.levels for s in ctx):
        raise ValueError("levels out of range for this model")
    x = _encode([ctx], model.config.order, model.config.levels)
    raw = forward(model.weights, model.biases, x)[-1][0]
    prob = np.maximum(raw, 0.0) + 1e-12
    return prob / prob.sum()


def worst_case_horizon(model: PredictorModel, context, horizon: int = None,
                       threshold: float = None) -> int:
    """Worst level reachable within the horizon through credible steps.

    Explores every successor whose predicted probability exceeds the
    threshold, exactly the tree a step-by-step enumeration would walk.
    A step where nothing clears the bar falls back to the single most
    likely successor so the rollout never stalls.
    """
    if horizon is None:
        horizon = model.config.horizon
    if threshold is None:
        threshold = model.config.threshold
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    frontier = {tuple(int(s) for s in context)}
    worst = 0
    for _ in range(horizon):
        nxt = set()
        for ctx in frontier:
            prob = predict_distribution(model, ctx)
            eligible = np.nonzero(prob > threshold)[0]
            if eligible.size == 0:
                eligible = np.array([int(np.argmax(prob))])
            worst = max(worst, int(eligible.max()))
            for state in eligible:
                nxt.add(ctx[1:] + (int(state),))
        frontier = nxt
    return worst


def save_predictor(model: PredictorModel, path) -> None:
    cfg = model.config
    doc = {
        "format": "markov-predictor",
        "version": 1,
        "activation": "ramp",
        "config": {
            "levels": cfg.levels,
            "order": cfg.order,
            "bin_edges": list(cfg.bin_edges) if cfg.bin_edges else None,
            "zeta": cfg.zeta,
            "horizon": cfg.horizon,
            "threshold": cfg.threshold,
        },
        "dims": list(model.dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "max_tv": model.max_tv,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_predictor(path) -> PredictorModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "markov-predictor" or doc.get("version") != 1:
        raise ValueError(
            f"unsupported predictor document {doc.get('format')!r} "
            f"v{doc.get('version')!r}")
    raw = doc["config"]
    cfg = MarkovConfig(levels=raw["levels"], order=raw["order"],
                       bin_edges=tuple(raw["bin_edges"])
                       if raw["bin_edges"] else None,
                       zeta=raw["zeta"], horizon=raw["horizon"],
                       threshold=raw["threshold"])
    return PredictorModel(config=cfg, dims=tuple(doc["dims"]),
                          weights=[np.array(w) for w in doc["weights"]],
                          biases=[np.array(b) for b in doc["biases"]],
                          max_tv=float(doc["max_tv"]))


def read_samples(path) -> tuple:
    """Timestamped parameter samples: (times, column name -> values)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        records = [[float(v) for v in rec] for rec in reader]
    if not records:
        raise ValueError("no samples in file")
    data = np.array(records)
    return data[:, 0], {name: data[:, i + 1]
                        for i, name in enumerate(header[1:])}
