"""Command line front end: JSON configs in, deterministic artifacts out.

Each invocation writes into its own directory under an output root (the
--out-root flag, then the HYBRIDV2V_OUT variable, then ./runs) and finishes
with a manifest recording the SHA-256 of every artifact, so a rerun with the
same seed and config can be compared byte for byte.

Exit codes: 0 success, 2 bad config or arguments, 3 infeasible operating
regime, 4 a validation or reproduction property failed, 5 filesystem errors.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import __version__
from .cellular import (BackoffParams, InvalidRegime, NoConvergence,
                       UnstableQueue, cellular_delay_ccdf)
from .control import ControlConfig
from .hybrid import HybridConfig, average_delay, hybrid_delay_ccdf
from .mmwave import (DomainError, EmptyStabilityRegion, MmWaveParams,
                     UnstableRegime, chain_arrival, mmwave_delay_ccdf)
from .sim import (Event, HeadwayConfig, ScenarioConfig, compute_metrics,
                  run_platoon_scenario, simulate_cellular_mc,
                  simulate_hybrid_mc, simulate_mmwave_mc, trace_to_csv)
from .snc import NonConvergent, UnstableSystem
from .surrogate import (DelayQuery, ExtrapolationWarning, NotReached,
                        generate_dataset, grid_queries, invert_ccdf,
                        load_model, predict_delay, query_config, read_dataset,
                        save_model, train_mlp, write_dataset)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENV_OUT_ROOT = "HYBRIDV2V_OUT"
SUBCOMMANDS = ("bounds", "dataset", "train", "predict", "simulate", "validate")
FIGURES = ("fig5", "fig6", "fig7", "fig8", "fig9", "fig10")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_REGIME = 3
EXIT_VALIDATION = 4
EXIT_IO = 5

# Infeasibility raised while computing, as opposed to bad input up front.
_REGIME_ERRORS = (UnstableRegime, EmptyStabilityRegion, UnstableQueue,
                  NoConvergence, UnstableSystem, NonConvergent, InvalidRegime,
                  DomainError, NotReached)


class ConfigError(Exception):
    """The config file or command line asked for something malformed."""


class ValidationFailure(Exception):
    """A checked property did not hold; details are already on disk."""


# ---------------------------------------------------------------------------
# serialization helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _canonical_bytes(doc) -> bytes:
    return json.dumps(_jsonable(doc), sort_keys=True,
                      separators=(",", ":")).encode()


def _write_manifest(outdir, subcommand: str, seed: int, config_doc) -> None:
    names = sorted(n for n in os.listdir(outdir)
                   if n not in ("manifest.json", "error.json")
                   and os.path.isfile(os.path.join(outdir, n)))
    manifest = {
        "schema": SCHEMA_VERSION,
        "package_version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config_sha256": hashlib.sha256(_canonical_bytes(config_doc)).hexdigest(),
        "artifacts": {n: _sha256_file(os.path.join(outdir, n)) for n in names},
    }
    _write_json(os.path.join(outdir, "manifest.json"), manifest)


# ---------------------------------------------------------------------------
# config parsing

def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema {schema!r}, "
                          f"this build reads schema {SCHEMA_VERSION}")
    return doc


def _as_config_error(build, what: str):
    """Run a constructor; bad config-sourced values become ConfigError."""
    try:
        return build()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what}: {exc}")


def _channel_query(doc: dict, default_p: float = 0.01) -> DelayQuery:
    channel = doc.get("channel", {})
    if not isinstance(channel, dict):
        raise ConfigError("channel section must be an object")
    return _as_config_error(lambda: DelayQuery(
        timeout_prob=float(channel.get("timeout_prob", default_p)),
        arrival_rate=float(channel.get("arrival_rate", 0.1)),
        n_vehicles=int(channel.get("n_vehicles", 10)),
        noise_level=float(channel.get("noise_level", 0.5)),
        split=float(channel.get("split", 0.5)),
    ), "channel section")


def _scenario_config(doc: dict, seed: int) -> ScenarioConfig:
    section = dict(doc.get("scenario", {}))
    raw_events = section.pop("events", [])
    events = tuple(_as_config_error(lambda e=e: Event(**e), "scenario event")
                   for e in raw_events)
    section["events"] = events
    section["seed"] = seed
    return _as_config_error(lambda: ScenarioConfig(**section),
                            "scenario section")


def _required_path(doc: dict, key: str) -> str:
    path = doc.get(key)
    if not path:
        raise ConfigError(f"config needs a {key!r} path")
    if not os.path.isfile(path):
        raise ConfigError(f"{key} file not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands

def _relay_ccdf_clamped(params, factory, xs) -> np.ndarray:
    """Relay-chain tail with the vacuous region reported as 1.

    Under heavy load no exponent certifies anything below the chain's
    minimum latency; the trivial bound 1 is still valid there. Only when
    every requested point is vacuous is the instability re-raised.
    """
    out = np.empty(len(xs), dtype=float)
    vacuous = None
    for i, x in enumerate(xs):
        try:
            out[i] = mmwave_delay_ccdf(params, factory, float(x))
        except (EmptyStabilityRegion, UnstableRegime) as exc:
            out[i] = 1.0
            vacuous = exc
    if vacuous is not None and np.all(out >= 1.0):
        raise vacuous
    return out


def _cmd_bounds(doc: dict, outdir: str, seed: int) -> None:
    query = _channel_query(doc)
    cfg = query_config(query)
    grid = doc.get("grid", {})
    xs = np.geomspace(float(grid.get("start", 1.0)),
                      float(grid.get("stop", 1e5)),
                      int(grid.get("points", 160)))
    modes = doc.get("modes", ["cellular", "mmwave", "hybrid"])
    bad = [m for m in modes if m not in ("cellular", "mmwave", "hybrid")]
    if bad or not modes:
        raise ConfigError(f"modes must be a non-empty subset of "
                          f"cellular/mmwave/hybrid, got {modes!r}")

    columns = {}
    for mode in modes:
        log.info("evaluating %s bound on %d grid points", mode, xs.size)
        if mode == "cellular":
            params = replace(cfg.cellular, arrival_rate=cfg.lambda_total)
            columns[mode] = cellular_delay_ccdf(params, xs)
        elif mode == "mmwave":
            columns[mode] = _relay_ccdf_clamped(
                cfg.mmwave, chain_arrival(cfg.mmwave, cfg.lambda_total), xs)
        else:
            columns[mode] = hybrid_delay_ccdf(cfg, xs)

    rows = [[x] + [columns[m][i] for m in modes] for i, x in enumerate(xs)]
    _write_csv(os.path.join(outdir, "bounds.csv"),
               ["delay_slots"] + list(modes), rows)


def _cmd_dataset(doc: dict, outdir: str, seed: int) -> None:
    grid = doc.get("grid")
    if not isinstance(grid, dict):
        raise ConfigError("dataset config needs a grid section")
    axes = ("timeout_probs", "arrival_rates", "n_vehicles", "noise_levels",
            "splits")
    missing = [a for a in axes if not grid.get(a)]
    if missing:
        raise ConfigError(f"grid section is missing axes: {missing}")
    queries = _as_config_error(
        lambda: grid_queries(*[tuple(grid[a]) for a in axes]), "grid section")
    log.info("labeling %d grid queries", len(queries))
    rows = generate_dataset(queries)
    if not rows:
        raise ConfigError("the requested grid produced no feasible rows")
    write_dataset(os.path.join(outdir, "dataset.csv"), rows, queries)


def _cmd_train(doc: dict, outdir: str, seed: int) -> None:
    section = doc.get("train", {})
    path = _required_path(section if section.get("dataset") else doc, "dataset")
    rows = _as_config_error(lambda: read_dataset(path), "dataset file")
    model = _as_config_error(lambda: train_mlp(
        rows,
        hidden=tuple(section.get("hidden", (64, 64))),
        seed=seed,
        epochs=int(section.get("epochs", 1500)),
        lr=float(section.get("lr", 1e-2)),
        batch_size=int(section.get("batch_size", 64)),
        holdout=float(section.get("holdout", 0.2)),
    ), "training run")
    save_model(model, os.path.join(outdir, "model.json"))
    _write_json(os.path.join(outdir, "train_report.json"), {
        "rows": len(rows),
        "dims": list(model.dims),
        "holdout_rel_err": model.holdout_rel_err,
        "seed": seed,
    })


def _load_model_checked(path):
    try:
        return load_model(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}")


def _cmd_predict(doc: dict, outdir: str, seed: int) -> None:
    model = _load_model_checked(_required_path(doc, "model"))
    query_doc = doc.get("query")
    if not isinstance(query_doc, dict):
        raise ConfigError("predict config needs a query section")
    query = _as_config_error(lambda: DelayQuery(**query_doc), "query section")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ExtrapolationWarning)
        delay = predict_delay(model, query)
    inside = not any(issubclass(w.category, ExtrapolationWarning)
                     for w in caught)
    slot = query_config(query).cellular.slot_duration
    _write_json(os.path.join(outdir, "prediction.json"), {
        "query": query_doc,
        "delay_slots": delay,
        "delay_seconds": delay * slot,
        "inside_training_box": inside,
    })


def _cmd_simulate(doc: dict, outdir: str, seed: int) -> None:
    scenario = _scenario_config(doc, seed)
    controller = doc.get("controller", "intelligent")
    if controller not in ("intelligent", "baseline"):
        raise ConfigError(f"unknown controller {controller!r}")
    model = None
    if controller == "intelligent":
        model = _load_model_checked(_required_path(doc, "model"))
    control_cfg = _as_config_error(
        lambda: ControlConfig(**doc.get("control", {})), "control section")
    headway = _as_config_error(
        lambda: HeadwayConfig(**doc.get("headway", {})), "headway section")

    log.info("running %s platoon scenario: %d vehicles, %.1f s",
             controller, scenario.vehicle_count, scenario.duration)
    trace = run_platoon_scenario(scenario, controller=controller,
                                 control_cfg=control_cfg,
                                 surrogate_model=model, predict=False,
                                 headway=headway)
    trace_to_csv(trace, os.path.join(outdir, "trace.csv"))
    metrics = compute_metrics(trace, dwell=float(doc.get("dwell", 5.0)))
    metrics["seed"] = seed
    _write_json(os.path.join(outdir, "metrics.json"), metrics)


def _dominance_check(name, xs, bound, empirical, runs, confidence):
    """Analytic tail at or above the empirical upper envelope.

    Checked where the bound is informative (< 1) and the envelope is
    resolvable at this sample size (bound above ~10 expected exceedances).
    """
    bound = np.asarray(bound, dtype=float)
    upper = empirical.upper_envelope(xs, confidence)
    mask = (bound < 1.0) & (bound >= 10.0 / runs)
    ok = bool(np.all(bound[mask] >= upper[mask] - 1e-12)) if mask.any() else True
    margin = float(np.min(bound[mask] - upper[mask])) if mask.any() else None
    return {"name": name, "passed": ok, "points": int(mask.sum()),
            "min_margin": margin}


def _cmd_validate(doc: dict, outdir: str, seed: int) -> None:
    doc = doc or {}
    runs = int(doc.get("runs", 10_000))
    confidence = float(doc.get("confidence", 0.95))
    checks = []

    for i, rate in enumerate((0.1, 0.2)):
        params = BackoffParams(arrival_rate=rate)
        log.info("cellular Monte Carlo at rate %.2f, %d runs", rate, runs)
        emp = simulate_cellular_mc(params, runs=runs, seed=seed + i)
        xs = np.geomspace(1e3, 1e6, 80)
        checks.append(_dominance_check(
            f"cellular-dominance-rate-{rate:g}", xs,
            cellular_delay_ccdf(params, xs), emp, runs, confidence))

    mm = MmWaveParams()
    log.info("relay chain Monte Carlo, %d runs", runs)
    emp = simulate_mmwave_mc(mm, 0.1, runs=runs, seed=seed + 2)
    xs = np.geomspace(10.0, 1e4, 60)
    checks.append(_dominance_check(
        "mmwave-dominance-rate-0.1", xs,
        mmwave_delay_ccdf(mm, chain_arrival(mm, 0.1), xs), emp, runs,
        confidence))

    cfg = HybridConfig(split=0.5, lambda_total=0.2)
    xs = np.geomspace(1.0, 1e7, 100)
    hyb = hybrid_delay_ccdf(cfg, xs)
    cell = cellular_delay_ccdf(replace(cfg.cellular, arrival_rate=0.2), xs)
    checks.append({
        "name": "hybrid-never-worse-than-cellular",
        "passed": bool(np.all(hyb <= cell + 1e-12)),
        "points": int(xs.size),
        "min_margin": float(np.min(cell - hyb)),
    })
    log.info("hybrid Monte Carlo, %d runs", runs)
    emp = simulate_hybrid_mc(cfg, runs=runs, seed=seed + 3)
    checks.append(_dominance_check("hybrid-dominance", xs, hyb, emp, runs,
                                   confidence))

    passed = all(c["passed"] for c in checks)
    _write_json(os.path.join(outdir, "validate_report.json"), {
        "runs": runs, "confidence": confidence, "seed": seed,
        "checks": checks, "passed": passed,
    })
    if not passed:
        failed = [c["name"] for c in checks if not c["passed"]]
        raise ValidationFailure(f"checks failed: {', '.join(failed)}")


_COMMANDS = {
    "bounds": _cmd_bounds,
    "dataset": _cmd_dataset,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
}


# ---------------------------------------------------------------------------
# figure reproduction

_SURROGATE_PS = (0.004, 0.007, 0.01, 0.02, 0.04, 0.07)
_SURROGATE_ZS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.1, 5.2,
                 5.3)
_DEGRADED_NOISE = 5.1


def _degraded_surrogate(outdir: str, prefix: str):
    """Dataset plus model for the deep-fade platoon scenarios."""
    queries = grid_queries(_SURROGATE_PS, (0.1,), (6,), _SURROGATE_ZS, (0.5,))
    log.info("labeling %d surrogate queries", len(queries))
    rows = generate_dataset(queries)
    write_dataset(os.path.join(outdir, f"{prefix}_dataset.csv"), rows, queries)
    model = train_mlp(rows, seed=0, epochs=4000)
    save_model(model, os.path.join(outdir, f"{prefix}_model.json"))
    return model


def _degraded_delay_bound() -> float:
    query = DelayQuery(timeout_prob=0.01, arrival_rate=0.1, n_vehicles=6,
                       noise_level=_DEGRADED_NOISE, split=0.5)
    cfg = query_config(query)
    return invert_ccdf(lambda x: hybrid_delay_ccdf(cfg, x), 0.01)


def _fig5(outdir: str) -> dict:
    runs = 10_000
    xs = np.geomspace(2e4, 1e6, 120)
    header = ["delay_slots"]
    columns, passed, details = [], True, {}
    for i, rate in enumerate((0.1, 0.2)):
        params = BackoffParams(arrival_rate=rate)
        bound = cellular_delay_ccdf(params, xs)
        log.info("cellular Monte Carlo at rate %.2f", rate)
        emp = simulate_cellular_mc(params, runs=runs, seed=i)
        upper = emp.upper_envelope(xs)
        header += [f"bound_rate_{rate:g}", f"empirical_upper_rate_{rate:g}"]
        columns += [bound, upper]
        check = _dominance_check(f"rate-{rate:g}", xs, bound, emp, runs, 0.95)
        passed = passed and check["passed"]
        details[f"rate_{rate:g}"] = check
    rows = [[x] + [c[i] for c in columns] for i, x in enumerate(xs)]
    _write_csv(os.path.join(outdir, "fig5.csv"), header, rows)
    return {"property": "analytic contention bound dominates the empirical "
                        "95% upper envelope wherever it is informative",
            "passed": passed, "details": details}


def _fig6(outdir: str) -> dict:
    xs = np.geomspace(10.0, 4e3, 100)
    bounds, inverted = {}, {}
    for n in (10, 20):
        params = replace(MmWaveParams(), n_vehicles=n)
        factory = chain_arrival(params, 0.1)
        log.info("relay chain bound for %d vehicles", n)
        bounds[n] = _relay_ccdf_clamped(params, factory, xs)
        inverted[n] = invert_ccdf(
            lambda x: _relay_ccdf_clamped(params, factory, [x])[0], 0.01,
            x_max=1e5, points=200)
    rows = [[x, bounds[10][i], bounds[20][i]] for i, x in enumerate(xs)]
    _write_csv(os.path.join(outdir, "fig6.csv"),
               ["delay_slots", "bound_n10", "bound_n20"], rows)
    ratio = inverted[20] / inverted[10]
    return {"property": "doubling the chain multiplies the p=0.01 delay by "
                        "a factor in [2.5, 6]",
            "passed": bool(2.5 <= ratio <= 6.0),
            "details": {"delay_n10": inverted[10], "delay_n20": inverted[20],
                        "ratio": ratio}}


def _fig7(outdir: str) -> dict:
    cfg = HybridConfig(split=0.5, lambda_total=0.2)
    xs = np.geomspace(1.0, 1e7, 140)
    hyb = hybrid_delay_ccdf(cfg, xs)
    cell = cellular_delay_ccdf(replace(cfg.cellular, arrival_rate=0.2), xs)
    rows = [[x, hyb[i], cell[i]] for i, x in enumerate(xs)]
    _write_csv(os.path.join(outdir, "fig7.csv"),
               ["delay_slots", "hybrid", "cellular"], rows)
    margin = float(np.min(cell - hyb))
    return {"property": "the pooled deployment is never above the pure "
                        "contention bound on the shared grid",
            "passed": bool(np.all(hyb <= cell + 1e-12)),
            "details": {"min_margin": margin}}


def _fig8(outdir: str) -> dict:
    rates = np.round(np.arange(0.05, 0.3001, 0.025), 4)
    table = {}
    for mode in ("mmwave", "hybrid"):
        means = []
        for rate in rates:
            cfg = HybridConfig(split=0.5, lambda_total=float(rate))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    means.append(average_delay(cfg, mode=mode))
            except _REGIME_ERRORS:
                means.append(float("inf"))
            log.info("%s mean at rate %.3f: %s", mode, rate, means[-1])
        table[mode] = means
    rows = [[r, table["mmwave"][i], table["hybrid"][i]]
            for i, r in enumerate(rates)]
    _write_csv(os.path.join(outdir, "fig8.csv"),
               ["arrival_rate", "mmwave_mean_slots", "hybrid_mean_slots"],
               rows)
    diff = [m - h for m, h in zip(table["mmwave"], table["hybrid"])]
    first_below = next((i for i, d in enumerate(diff) if d < 0), None)
    crossover = (first_below is not None
                 and any(d > 0 for d in diff[first_below + 1:]))
    return {"property": "the relay-only mean starts below the pooled mean "
                        "and degrades past it as load grows",
            "passed": bool(crossover),
            "details": {"rates": list(rates), "difference": diff}}


def _fig9(outdir: str) -> dict:
    model = _degraded_surrogate(outdir, "fig9")
    scenario = ScenarioConfig(
        duration=40.0, tick=0.01,
        events=(Event(time=0.0, kind="comms-degradation",
                      noise_level=_DEGRADED_NOISE),))
    log.info("running degradation scenario")
    trace = run_platoon_scenario(scenario, controller="intelligent",
                                 surrogate_model=model, predict=False)
    metrics = compute_metrics(trace)
    counts = metrics["speed_change_counts"]
    mean_gap = np.mean(trace.gaps, axis=1)
    safe = np.mean(trace.safe_gaps, axis=1)
    rows = [[trace.times[i + 1], counts[i], mean_gap[i + 1], safe[i + 1]]
            for i in range(len(counts))]
    _write_csv(os.path.join(outdir, "fig9.csv"),
               ["t", "speed_changes", "mean_gap", "mean_safe_gap"], rows)

    slot = ControlConfig().slot_duration
    target = _degraded_delay_bound() * slot * scenario.initial_speed
    steady = float(np.mean(trace.gaps[-1000:]))
    converged = metrics["convergence_time"] <= 20.0
    near = abs(steady / target - 1.0) <= 0.15
    return {"property": "speed changes die out within 20 s and the platoon "
                        "settles within 15% of the degraded safe distance",
            "passed": bool(converged and near and not metrics["collision"]),
            "details": {"convergence_time": metrics["convergence_time"],
                        "steady_gap": steady, "safe_distance": target,
                        "collision": metrics["collision"]}}


def _fig10(outdir: str) -> dict:
    model = _degraded_surrogate(outdir, "fig10")
    scenario = ScenarioConfig(
        duration=30.0, tick=0.01,
        events=(Event(time=0.0, kind="comms-degradation",
                      noise_level=_DEGRADED_NOISE),
                Event(time=25.0, kind="lead-brake")))
    log.info("running urgent brake scenario")
    trace = run_platoon_scenario(scenario, controller="intelligent",
                                 surrogate_model=model, predict=False)
    metrics = compute_metrics(trace)
    n = scenario.vehicle_count
    header = ["t"] + [f"speed_{i}" for i in range(n)] + ["min_gap"]
    rows = [[trace.times[k]] + list(trace.speeds[k])
            + [float(np.min(trace.gaps[k]))]
            for k in range(len(trace.times))]
    _write_csv(os.path.join(outdir, "fig10.csv"), header, rows)

    slot = ControlConfig().slot_duration
    allowance = _degraded_delay_bound() * slot + ControlConfig().control_period
    onset = metrics["brake_onset_latency"]
    stopped = bool(np.all(trace.speeds[-1] < 1e-9))
    passed = (onset <= allowance and metrics["min_gap"] > 0.0
              and not metrics["collision"])
    return {"property": "the tail vehicle starts braking within the delay "
                        "bound plus one control period and no gap closes",
            "passed": bool(passed),
            "details": {"brake_onset_latency": onset, "allowance": allowance,
                        "min_gap": metrics["min_gap"],
                        "all_stopped": stopped}}


_FIGURES = {"fig5": _fig5, "fig6": _fig6, "fig7": _fig7, "fig8": _fig8,
            "fig9": _fig9, "fig10": _fig10}


def _cmd_reproduce(figure: str, outdir: str) -> None:
    report = _FIGURES[figure](outdir)
    report["figure"] = figure
    _write_json(os.path.join(outdir, "report.json"), report)
    if not report["passed"]:
        raise ValidationFailure(f"{figure} property did not hold: "
                                f"{report['property']}")


# ---------------------------------------------------------------------------
# argument handling and dispatch

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridv2v",
        description="Delay bounds, surrogate training, and platoon "
                    "simulation for hybrid V2V deployments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        nargs = None if config_required else "?"
        p.add_argument("config", nargs=nargs, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out-root", default=None,
                       help="output root (default: $HYBRIDV2V_OUT or ./runs)")
        p.add_argument("--out", default=None,
                       help="run directory name under the root")
        p.add_argument("-v", "--verbose", action="count", default=0)

    for name in SUBCOMMANDS:
        common(sub.add_parser(name), config_required=(name != "validate"))
    common(sub.add_parser("run",
                          help="dispatch on the config's subcommand field"))
    rep = sub.add_parser("reproduce", help="regenerate one figure's data")
    rep.add_argument("figure", choices=FIGURES)
    rep.add_argument("--out-root", default=None)
    rep.add_argument("--out", default=None)
    rep.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _out_root(args) -> str:
    return args.out_root or os.environ.get(ENV_OUT_ROOT) or "runs"


def _setup_logging(level_count: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(level_count,
                                                      logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(exc, code: int, outdir) -> int:
    print(f"error: {exc}", file=sys.stderr)
    if outdir is not None and os.path.isdir(outdir):
        try:
            _write_json(os.path.join(outdir, "error.json"),
                        {"error": str(exc), "type": type(exc).__name__,
                         "exit_code": code})
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    outdir = None
    try:
        if args.command == "reproduce":
            _setup_logging(args.verbose)
            outdir = os.path.join(_out_root(args), args.out or args.figure)
            os.makedirs(outdir, exist_ok=True)
            _cmd_reproduce(args.figure, outdir)
            _write_manifest(outdir, "reproduce", 0, {"figure": args.figure})
            print(outdir)
            return EXIT_OK

        doc = _load_config(args.config) if args.config else {}
        verbosity = args.verbose or int(doc.get("verbosity", 0))
        _setup_logging(verbosity)

        declared = doc.get("subcommand")
        if args.command == "run":
            if declared not in _COMMANDS:
                raise ConfigError(f"config must name a subcommand out of "
                                  f"{'/'.join(SUBCOMMANDS)}, got {declared!r}")
            command = declared
        else:
            command = args.command
            if declared is not None and declared != command:
                raise ConfigError(f"config says subcommand {declared!r} but "
                                  f"the command line says {command!r}")

        seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
        name = args.out or doc.get("output") or command
        outdir = os.path.join(_out_root(args), name)
        os.makedirs(outdir, exist_ok=True)

        effective = dict(doc)
        effective["subcommand"] = command
        effective["seed"] = seed
        _COMMANDS[command](doc, outdir, seed)
        _write_manifest(outdir, command, seed, effective)
        print(outdir)
        return EXIT_OK

    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG, outdir)
    except ValidationFailure as exc:
        return _fail(exc, EXIT_VALIDATION, outdir)
    except _REGIME_ERRORS as exc:
        return _fail(exc, EXIT_REGIME, outdir)
    except OSError as exc:
        return _fail(exc, EXIT_IO, outdir)
