"""Config-driven front end: load curve files, sweep policies, write reports.

The CLI has three subcommands.  ``run <config>`` executes a sweep described
by a flat key=value config file and writes three report files into the
configured output directory: ``records.csv`` (one row per run),
``aggregates.csv`` (one row per policy and horizon), and ``summary.json``
(config echo, library version, aggregate table).  ``validate <config>``
performs every check ``run`` would perform without executing any runs.
``synth`` writes a synthetic ground-truth curve file from an analytic
family, which is how the test corpus builds its oracles.

Exit codes: 0 on success, 2 on any configuration or parse problem, 3 on
I/O failures.  Sweep cells are independent; a worker pool executes them
and the parent writes rows in deterministic cell order, so record files
are byte-identical regardless of worker count.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .baselines import CorrectedPolicy, CorrectionFactor, RegressionPointPolicy
from .curves import CurveFamily, DomainError, UNREACHABLE, _eval_many
from .planner import LocPolicy, ProblemSpec
from .simulator import (
    GroundTruthCurve1D,
    GroundTruthSurface2D,
    aggregate_metrics,
    run_collection,
)

WORKER_ENV = "DATAPLAN_WORKERS"

_POLICY_TOKENS = ("loc", "regression-point", "regression-corrected")
_SYNTH_KINDS = ("power-law", "logarithmic")


class ConfigError(ValueError):
    """The config file is malformed or internally inconsistent."""


class ParseError(ValueError):
    """A curve file failed to parse; the message names the offending line."""


class DuplicateSize(ParseError):
    """Two rows of a curve file claim the same size coordinate."""


class IncompleteGrid(ParseError):
    """A two-source curve file does not cover its full size grid."""


class NonMonotoneGenerator(ValueError):
    """Synthetic-curve parameters produce decreasing or invalid scores."""


# ---------------------------------------------------------------------------
# curve files


def load_curve_file(path):
    """Read a curve file and return the matching ground-truth oracle.

    One-source files carry the header ``size,score`` with one knot per
    line; two-source files carry ``size1,size2,score`` and must cover a
    complete rectangular grid of sizes.  Rows may appear in any order;
    sorting is applied.  Blank lines and ``#`` comments are ignored.
    """
    with open(path, newline="") as handle:
        raw = list(csv.reader(handle))

    rows = []
    for lineno, cells in enumerate(raw, start=1):
        cells = [c.strip() for c in cells]
        if not cells or all(c == "" for c in cells):
            continue
        if cells[0].startswith("#"):
            continue
        rows.append((lineno, cells))
    if not rows:
        raise ParseError("line 1: file contains no data")

    lineno, header = rows[0]
    header = [h.lower() for h in header]
    if header == ["size", "score"]:
        return _load_curve_1d(rows[1:])
    if header == ["size1", "size2", "score"]:
        return _load_surface_2d(rows[1:])
    raise ParseError(
        f"line {lineno}: unrecognized header {','.join(header)!r}; "
        "expected 'size,score' or 'size1,size2,score'"
    )


def _parse_floats(lineno, cells, expect):
    if len(cells) != expect:
        raise ParseError(f"line {lineno}: expected {expect} fields, got {len(cells)}")
    out = []
    for cell in cells:
        try:
            value = float(cell)
        except ValueError:
            raise ParseError(f"line {lineno}: {cell!r} is not a number") from None
        if not np.isfinite(value):
            raise ParseError(f"line {lineno}: {cell!r} is not finite")
        out.append(value)
    return out


def _load_curve_1d(rows):
    if not rows:
        raise ParseError("line 1: no knots after header")
    knots = {}
    for lineno, cells in rows:
        size, score = _parse_floats(lineno, cells, 2)
        if size in knots:
            raise DuplicateSize(f"line {lineno}: duplicate size {size:g}")
        knots[size] = score
    try:
        return GroundTruthCurve1D(tuple(sorted(knots.items())))
    except ValueError as exc:
        raise ParseError(f"curve rejected: {exc}") from exc


def _load_surface_2d(rows):
    if not rows:
        raise ParseError("line 1: no grid points after header")
    points = {}
    for lineno, cells in rows:
        x, y, score = _parse_floats(lineno, cells, 3)
        if x < 0 or y < 0:
            raise ParseError(f"line {lineno}: negative size")
        if (x, y) in points:
            raise DuplicateSize(f"line {lineno}: duplicate size pair ({x:g}, {y:g})")
        points[(x, y)] = score

    grid_x = sorted({x for x, _ in points})
    grid_y = sorted({y for _, y in points})
    missing = [
        (x, y) for x in grid_x for y in grid_y if (x, y) not in points
    ]
    if missing:
        shown = ", ".join(f"({x:g}, {y:g})" for x, y in missing[:8])
        if len(missing) > 8:
            shown += f", and {len(missing) - 8} more"
        raise IncompleteGrid(
            f"{len(grid_x)}x{len(grid_y)} grid is missing {len(missing)} "
            f"point(s): {shown}"
        )
    scores = np.array(
        [[points[(x, y)] for y in grid_y] for x in grid_x], dtype=float
    )
    try:
        return GroundTruthSurface2D(
            np.array(grid_x, dtype=float), np.array(grid_y, dtype=float), scores
        )
    except ValueError as exc:
        raise ParseError(f"surface rejected: {exc}") from exc


def synth_curve(kind, theta, knot_count, q_range, out):
    """Write a one-source curve file sampled from an analytic family.

    ``kind`` is ``power-law`` or ``logarithmic``; ``theta`` its three
    parameters; knots are placed at ``knot_count`` log-spaced sizes across
    ``q_range``.  Parameters that yield decreasing, negative, or undefined
    scores raise NonMonotoneGenerator.  Returns the output path.
    """
    if kind not in _SYNTH_KINDS:
        raise ConfigError(f"unknown curve kind {kind!r}; expected one of {_SYNTH_KINDS}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (3,) or not np.all(np.isfinite(theta)):
        raise ConfigError("theta must be three finite numbers")
    lo, hi = (float(q_range[0]), float(q_range[1]))
    if not (0 < lo < hi):
        raise ConfigError("q_range must satisfy 0 < lo < hi")
    if not int(knot_count) == knot_count or knot_count < 2:
        raise ConfigError("knot_count must be an integer >= 2")

    sizes = np.geomspace(lo, hi, int(knot_count))
    try:
        scores = _eval_many(CurveFamily(kind), theta, sizes[:, None])
    except DomainError as exc:
        raise NonMonotoneGenerator(
            f"{kind} with theta {tuple(theta)} is undefined on [{lo:g}, {hi:g}]"
        ) from exc
    if np.any(np.diff(scores) < 0):
        raise NonMonotoneGenerator(
            f"{kind} with theta {tuple(theta)} decreases on [{lo:g}, {hi:g}]"
        )
    if scores[0] < 0:
        raise NonMonotoneGenerator(
            f"{kind} with theta {tuple(theta)} starts below zero"
        )

    with open(out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["size", "score"])
        for size, score in zip(sizes, scores):
            writer.writerow([repr(float(size)), repr(float(score))])
    return out


# ---------------------------------------------------------------------------
# config


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated sweep description; see README for the config file format."""

    curve_file: str
    output_dir: str
    policies: tuple[str, ...]
    targets: tuple[float, ...]
    horizons: tuple[int, ...]
    cost_vectors: tuple[tuple[float, ...], ...]
    penalties: tuple[float, ...]
    seeds: tuple[int, ...]
    source_count: int | None = None
    q0: tuple[float, ...] | None = None
    family: str | None = None
    trim_percentile: float = 99.0
    workers: int = 1
    noise_sigma: float = 0.0
    subsample_count: int = 10
    loc_resamples: int = 500
    loc_censor_policy: str = "cap-at-bound"
    loc_components: tuple[int, ...] = (1, 2, 3, 4)
    corrected_tau: float | None = None
    raw: tuple[tuple[str, str], ...] = field(default_factory=tuple)


_CONFIG_KEYS = {
    "curve_file",
    "output_dir",
    "policies",
    "targets",
    "targets_min",
    "targets_max",
    "targets_step",
    "horizons",
    "costs",
    "penalties",
    "seeds",
    "sources",
    "q0",
    "family",
    "trim_percentile",
    "workers",
    "noise_sigma",
    "subsample_count",
    "loc.resamples",
    "loc.censor_policy",
    "loc.components",
    "corrected.tau",
}


def parse_config_text(text):
    """Parse flat key=value config text into an ordered dict of strings."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: key {key!r} has no value")
        entries[key] = value
    return entries


def _split_list(value):
    return [item.strip() for item in value.split(",") if item.strip()]


def _float_list(key, value):
    try:
        return tuple(float(item) for item in _split_list(value))
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not a comma-separated number list") from None


def _int_list(key, value):
    floats = _float_list(key, value)
    ints = tuple(int(x) for x in floats)
    if any(i != x for i, x in zip(ints, floats)):
        raise ConfigError(f"{key}: expected integers, got {value!r}")
    return ints


def _float_scalar(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: {value!r} is not a number") from None


def _int_scalar(key, value):
    scalar = _float_scalar(key, value)
    if int(scalar) != scalar:
        raise ConfigError(f"{key}: {value!r} is not an integer")
    return int(scalar)


def _target_grid(entries):
    explicit = "targets" in entries
    trio = [k for k in ("targets_min", "targets_max", "targets_step") if k in entries]
    if explicit and trio:
        raise ConfigError("give either 'targets' or the targets_min/max/step trio, not both")
    if explicit:
        targets = _float_list("targets", entries["targets"])
    elif len(trio) == 3:
        lo = _float_scalar("targets_min", entries["targets_min"])
        hi = _float_scalar("targets_max", entries["targets_max"])
        step = _float_scalar("targets_step", entries["targets_step"])
        if step <= 0 or hi < lo:
            raise ConfigError("targets sweep needs targets_min <= targets_max and targets_step > 0")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        targets = tuple(float(lo + i * step) for i in range(count))
    elif trio:
        raise ConfigError("targets_min/max/step must be given together")
    else:
        raise ConfigError("config must set 'targets' or targets_min/max/step")
    if not targets:
        raise ConfigError("target sweep is empty")
    if not all(np.isfinite(targets)):
        raise ConfigError("targets must be finite")
    return targets


def build_config(entries):
    """Validate raw config entries and build an ExperimentConfig."""
    unknown = sorted(set(entries) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key in ("curve_file", "output_dir", "policies", "horizons", "costs",
                "penalties", "seeds"):
        if key not in entries:
            raise ConfigError(f"config must set {key!r}")

    policies = tuple(_split_list(entries["policies"]))
    if not policies:
        raise ConfigError("policies list is empty")
    for token in policies:
        if token not in _POLICY_TOKENS:
            raise ConfigError(
                f"unknown policy {token!r}; expected one of {_POLICY_TOKENS}"
            )
    if len(set(policies)) != len(policies):
        raise ConfigError("policies list repeats an entry")

    targets = _target_grid(entries)
    horizons = _int_list("horizons", entries["horizons"])
    if not horizons or any(t < 1 for t in horizons):
        raise ConfigError("horizons must be integers >= 1")

    cost_vectors = []
    for chunk in entries["costs"].split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        vector = _float_list("costs", chunk)
        if any(c <= 0 or not np.isfinite(c) for c in vector):
            raise ConfigError("every cost must be finite and positive")
        cost_vectors.append(vector)
    if not cost_vectors:
        raise ConfigError("costs list is empty")
    if len({len(v) for v in cost_vectors}) != 1:
        raise ConfigError("cost vectors disagree on source count")

    penalties = _float_list("penalties", entries["penalties"])
    if not penalties or any(p <= 0 or not np.isfinite(p) for p in penalties):
        raise ConfigError("penalties must be finite and positive")
    seeds = _int_list("seeds", entries["seeds"])
    if not seeds:
        raise ConfigError("seeds list is empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds list repeats an entry")

    trim = _float_scalar("trim_percentile", entries.get("trim_percentile", "99"))
    if not 0 <= trim <= 100:
        raise ConfigError("trim_percentile must lie in [0, 100]")
    workers = _int_scalar("workers", entries.get("workers", "1"))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    noise = _float_scalar("noise_sigma", entries.get("noise_sigma", "0"))
    if noise < 0:
        raise ConfigError("noise_sigma must be >= 0")
    subsample = _int_scalar("subsample_count", entries.get("subsample_count", "10"))
    if subsample < 1:
        raise ConfigError("subsample_count must be >= 1")
    resamples = _int_scalar("loc.resamples", entries.get("loc.resamples", "500"))
    if resamples < 2:
        raise ConfigError("loc.resamples must be >= 2")
    components = tuple(
        _int_list("loc.components", entries.get("loc.components", "1,2,3,4"))
    )
    if not components or any(c < 1 for c in components):
        raise ConfigError("loc.components must be integers >= 1")

    tau = None
    if "corrected.tau" in entries:
        tau = _float_scalar("corrected.tau", entries["corrected.tau"])
        if tau < 0 or not np.isfinite(tau):
            raise ConfigError("corrected.tau must be finite and >= 0")
    if "regression-corrected" in policies and tau is None:
        raise ConfigError("policy 'regression-corrected' requires corrected.tau")

    q0 = None
    if "q0" in entries:
        q0 = _float_list("q0", entries["q0"])
        if any(v <= 0 or not np.isfinite(v) for v in q0):
            raise ConfigError("q0 entries must be finite and positive")
    sources = None
    if "sources" in entries:
        sources = _int_scalar("sources", entries["sources"])
        if sources not in (1, 2):
            raise ConfigError("sources must be 1 or 2")

    return ExperimentConfig(
        curve_file=entries["curve_file"],
        output_dir=entries["output_dir"],
        policies=policies,
        targets=targets,
        horizons=horizons,
        cost_vectors=tuple(tuple(v) for v in cost_vectors),
        penalties=penalties,
        seeds=seeds,
        source_count=sources,
        q0=q0,
        family=entries.get("family"),
        trim_percentile=trim,
        workers=workers,
        noise_sigma=noise,
        subsample_count=subsample,
        loc_resamples=resamples,
        loc_censor_policy=entries.get("loc.censor_policy", "cap-at-bound"),
        loc_components=components,
        corrected_tau=tau,
        raw=tuple(entries.items()),
    )


def load_config(path):
    with open(path) as handle:
        return build_config(parse_config_text(handle.read()))


# ---------------------------------------------------------------------------
# sweep execution


def _default_q0(oracle):
    # 10% of the largest observed size per source, kept inside the domain.
    if isinstance(oracle, GroundTruthCurve1D):
        return (0.1 * float(oracle._xs[-1]),)
    lo, hi = oracle.box()
    return tuple(float(max(a, 0.1 * b)) for a, b in zip(lo, hi))


def _resolve_family(cfg, k):
    if cfg.family is None:
        kind = "power-law" if k == 1 else "additive-power-law"
    else:
        kind = cfg.family
    try:
        family = CurveFamily(kind, source_count=k if kind == "additive-power-law" else 1)
    except ValueError as exc:
        raise ConfigError(f"family: {exc}") from exc
    if family.source_count != k:
        raise ConfigError(
            f"family {kind!r} models {family.source_count} source(s); curve has {k}"
        )
    return family


def _build_policy(token, cfg, family):
    if token == "loc":
        return LocPolicy(
            family=family,
            resamples=cfg.loc_resamples,
            censor_policy=cfg.loc_censor_policy,
            component_grid=cfg.loc_components,
        )
    if token == "regression-point":
        return RegressionPointPolicy(family)
    if token == "regression-corrected":
        return CorrectedPolicy(
            family, CorrectionFactor(cfg.corrected_tau, calibrated_on="config")
        )
    raise ConfigError(f"unknown policy {token!r}")


def prepare_experiment(cfg):
    """Resolve the oracle, q0, and policy objects; validate everything.

    Returns (oracle, q0, policies) where policies maps token -> object.
    Raises ConfigError on any inconsistency, before any run executes.
    """
    oracle = load_curve_file(cfg.curve_file)
    k = 1 if isinstance(oracle, GroundTruthCurve1D) else 2
    if cfg.source_count is not None and cfg.source_count != k:
        raise ConfigError(
            f"config says sources = {cfg.source_count} but the curve file has {k}"
        )
    for vector in cfg.cost_vectors:
        if len(vector) != k:
            raise ConfigError(
                f"cost vector {vector} has {len(vector)} entries; curve has {k} source(s)"
            )

    q0 = cfg.q0 if cfg.q0 is not None else _default_q0(oracle)
    if len(q0) != k:
        raise ConfigError(f"q0 has {len(q0)} entries; curve has {k} source(s)")
    if k == 2:
        lo, hi = oracle.box()
        if not np.all((lo <= np.asarray(q0)) & (np.asarray(q0) <= hi)):
            raise ConfigError(f"q0 {tuple(q0)} lies outside the surface grid")

    if cfg.loc_censor_policy not in ("drop", "cap-at-bound"):
        raise ConfigError("loc.censor_policy must be 'drop' or 'cap-at-bound'")
    try:
        family = _resolve_family(cfg, k)
        policies = {token: _build_policy(token, cfg, family) for token in cfg.policies}
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return oracle, tuple(float(v) for v in q0), policies


def _sweep_cells(cfg):
    """Deterministic cell order: policy, target, horizon, costs, penalty, seed."""
    return list(
        itertools.product(
            cfg.policies,
            cfg.targets,
            cfg.horizons,
            cfg.cost_vectors,
            cfg.penalties,
            cfg.seeds,
        )
    )


def _execute_cell(payload):
    """Run one sweep cell; module-level so worker processes can import it."""
    oracle, policy, q0, cell, noise_sigma, subsample_count = payload
    _, target, horizon, costs, penalty, seed = cell
    spec = ProblemSpec(
        target=target,
        horizon=horizon,
        costs=np.asarray(costs, dtype=float),
        penalty=penalty,
        q0=np.asarray(q0, dtype=float),
    )
    return run_collection(
        spec,
        oracle,
        policy,
        seed=seed,
        subsample_count=subsample_count,
        noise_sigma=noise_sigma,
    )


def _run_cells(cfg, oracle, q0, policies):
    cells = _sweep_cells(cfg)
    payloads = [
        (oracle, policies[cell[0]], q0, cell, cfg.noise_sigma, cfg.subsample_count)
        for cell in cells
    ]
    workers = cfg.workers
    override = os.environ.get(WORKER_ENV)
    if override is not None:
        try:
            workers = int(override)
        except ValueError:
            raise ConfigError(f"{WORKER_ENV}={override!r} is not an integer") from None
        if workers < 1:
            raise ConfigError(f"{WORKER_ENV} must be >= 1")

    if workers == 1 or len(payloads) <= 1:
        records = [_execute_cell(p) for p in payloads]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_execute_cell, payloads, chunksize=1))
    return cells, records


def _format(value):
    return repr(float(value))


def per_run_ratios(record):
    """(cost_ratio, points_ratio) for one run; None where undefined.

    cost_ratio is the overspend past q0 relative to the minimum overspend
    that meets the target, minus one; a run that needs and collects
    nothing scores 0.  points_ratio (one source only) is collected size
    over required size.
    """
    cost_ratio = None
    points_ratio = None
    d_star = record.d_star_true
    if d_star is UNREACHABLE:
        return None, None
    d_star = np.asarray(d_star, dtype=float)
    q0 = record.spec.q0
    q_final = record.final_amount()
    costs = record.spec.costs
    if record.met_target:
        spent = float(costs @ (q_final - q0))
        needed = float(costs @ (np.maximum(d_star, q0) - q0))
        if needed > 0:
            cost_ratio = spent / needed - 1.0
        elif spent <= 0:
            cost_ratio = 0.0
    if d_star.size == 1 and d_star[0] > 0:
        points_ratio = float(q_final[0] / d_star[0])
    return cost_ratio, points_ratio


def _record_header(k):
    def per_source(stem):
        if k == 1:
            return [stem]
        return [f"{stem}_{i + 1}" for i in range(k)]

    return (
        ["policy", "target", "horizon"]
        + per_source("cost")
        + ["penalty", "seed", "met_target"]
        + per_source("q0")
        + per_source("q_final")
        + per_source("d_star")
        + ["total_paid", "cost_ratio", "points_ratio"]
    )


def _record_row(cell, record):
    token, target, horizon, costs, penalty, seed = cell
    d_star = record.d_star_true
    if d_star is UNREACHABLE:
        d_star_cells = ["unreachable"] * len(costs)
    else:
        d_star_cells = [_format(v) for v in np.atleast_1d(d_star)]
    cost_ratio, points_ratio = per_run_ratios(record)
    return (
        [token, _format(target), str(horizon)]
        + [_format(c) for c in costs]
        + [_format(penalty), str(seed), "true" if record.met_target else "false"]
        + [_format(v) for v in record.spec.q0]
        + [_format(v) for v in record.final_amount()]
        + d_star_cells
        + [
            _format(record.total_paid),
            "" if cost_ratio is None else _format(cost_ratio),
            "" if points_ratio is None else _format(points_ratio),
        ]
    )


def _aggregate_rows(cfg, cells, records):
    groups = {}
    for cell, record in zip(cells, records):
        groups.setdefault((cell[0], cell[2]), []).append(record)
    rows = []
    for token in cfg.policies:
        for horizon in cfg.horizons:
            bucket = groups.get((token, horizon))
            if not bucket:
                continue
            report = aggregate_metrics(bucket, trim_percentile=cfg.trim_percentile)
            rows.append(
                {
                    "policy": token,
                    "horizon": horizon,
                    "runs": report.runs,
                    "successes": report.successes,
                    "failure_rate": report.failure_rate,
                    "cost_ratio": report.cost_ratio,
                    "points_ratio": report.points_ratio,
                    "trimmed": report.trimmed,
                }
            )
    return rows


def _library_version():
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def run_experiment(cfg):
    """Execute the sweep and write records, aggregates, and a summary.

    Returns a dict with the paths of the three report files.
    """
    oracle, q0, policies = prepare_experiment(cfg)
    cells, records = _run_cells(cfg, oracle, q0, policies)
    k = len(q0)

    os.makedirs(cfg.output_dir, exist_ok=True)
    records_path = os.path.join(cfg.output_dir, "records.csv")
    with open(records_path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_record_header(k))
        for cell, record in zip(cells, records):
            writer.writerow(_record_row(cell, record))

    aggregate_rows = _aggregate_rows(cfg, cells, records)
    aggregates_path = os.path.join(cfg.output_dir, "aggregates.csv")
    with open(aggregates_path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["policy", "horizon", "runs", "successes", "failure_rate",
             "cost_ratio", "points_ratio", "trimmed"]
        )
        for row in aggregate_rows:
            writer.writerow(
                [
                    row["policy"],
                    str(row["horizon"]),
                    str(row["runs"]),
                    str(row["successes"]),
                    _format(row["failure_rate"]),
                    "" if row["cost_ratio"] is None else _format(row["cost_ratio"]),
                    "" if row["points_ratio"] is None else _format(row["points_ratio"]),
                    str(row["trimmed"]),
                ]
            )

    summary_path = os.path.join(cfg.output_dir, "summary.json")
    summary = {
        "version": _library_version(),
        "config": dict(cfg.raw),
        "source_count": k,
        "q0": list(q0),
        "cells": len(cells),
        "records_file": os.path.basename(records_path),
        "aggregates_file": os.path.basename(aggregates_path),
        "aggregates": aggregate_rows,
    }
    with open(summary_path, "w") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")

    return {
        "records": records_path,
        "aggregates": aggregates_path,
        "summary": summary_path,
    }


# ---------------------------------------------------------------------------
# entry point


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dataplan",
        description="Plan and evaluate data-collection policies on curve oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute the sweep described by a config file")
    run_p.add_argument("config", help="path to a key=value config file")

    val_p = sub.add_parser("validate", help="check a config without running it")
    val_p.add_argument("config", help="path to a key=value config file")

    syn_p = sub.add_parser("synth", help="write a synthetic curve file")
    syn_p.add_argument("--kind", required=True, choices=_SYNTH_KINDS)
    syn_p.add_argument(
        "--theta", required=True,
        help="three comma-separated parameters, e.g. '1,0.5,0'",
    )
    syn_p.add_argument("--knots", type=int, default=20, help="knot count (default 20)")
    syn_p.add_argument(
        "--range", default="1,10000", dest="q_range",
        help="size range 'lo,hi' (default '1,10000')",
    )
    syn_p.add_argument("--out", required=True, help="output curve file path")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            paths = run_experiment(load_config(args.config))
            for name in ("records", "aggregates", "summary"):
                print(f"{name}: {paths[name]}")
        elif args.command == "validate":
            cfg = load_config(args.config)
            oracle, q0, _ = prepare_experiment(cfg)
            cells = len(_sweep_cells(cfg))
            print(f"ok: {cells} cells, {len(q0)} source(s), q0 = {tuple(q0)}")
        else:
            theta = _float_list("theta", args.theta)
            q_range = _float_list("range", args.q_range)
            if len(q_range) != 2:
                raise ConfigError("range must be 'lo,hi'")
            out = synth_curve(args.kind, theta, args.knots, q_range, args.out)
            print(f"wrote: {out}")
    except (ConfigError, ParseError, NonMonotoneGenerator) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
