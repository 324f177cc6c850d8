"""Ground-truth score oracles and the multi-round collection loop.

Simulated studies replace actual model training with a frozen approximation
of the learning curve: piecewise-linear in the single-source case, a
plane-triangulated surface for two sources. ``run_collection`` drives a
policy against such an oracle for a bounded number of rounds, paying for
every increment it orders, and ``aggregate_metrics`` condenses many runs
into failure-rate and cost-ratio summaries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _rng
from .curves import UNREACHABLE, RegressionSet
from .planner import ProblemSpec, RoundContext

__all__ = [
    "DegenerateCell",
    "GroundTruthCurve1D",
    "GroundTruthSurface2D",
    "MetricsReport",
    "PolicyFailure",
    "RoundOutcome",
    "RunRecord",
    "ShapeWarning",
    "aggregate_metrics",
    "eval_ground_truth_1d",
    "eval_ground_truth_2d",
    "run_collection",
    "true_requirement",
]


class ShapeWarning(UserWarning):
    """A ground-truth input departs from the ideal curve shape.

    Emitted when knot slopes increase (a 1D curve that is not concave) or a
    2D score grid decreases along a row or column. Such inputs are accepted;
    real measurements are noisy.
    """


class DegenerateCell(UserWarning):
    """A grid cell whose triangle plane system could not be solved.

    The cell falls back to bilinear interpolation over its four corners and
    evaluation flags the substitution in its diagnostics.
    """


class PolicyFailure(RuntimeError):
    """A policy raised during a simulated run.

    The run is recorded as a failure with the collected amount frozen at the
    last completed round; the original exception is chained as the cause.
    """


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GroundTruthCurve1D:
    """Piecewise-linear score curve through ordered (size, score) knots.

    Evaluation runs linearly from the origin to the first knot, interpolates
    between knots, and stays constant past the last one, so no score above
    the final knot is ever reachable.
    """

    knots: Sequence[tuple[float, float]]

    def __post_init__(self) -> None:
        pairs = tuple((float(q), float(v)) for q, v in self.knots)
        if not pairs:
            raise ValueError("a curve needs at least one knot")
        sizes = np.array([q for q, _ in pairs])
        scores = np.array([v for _, v in pairs])
        if not np.all(np.isfinite(sizes)) or not np.all(np.isfinite(scores)):
            raise ValueError("knots must be finite")
        if sizes[0] <= 0 or np.any(np.diff(sizes) <= 0):
            raise ValueError("knot sizes must be positive and strictly increasing")
        if scores[0] < 0 or np.any(np.diff(scores) < 0):
            raise ValueError("knot scores must be non-negative and non-decreasing")
        self.knots = pairs
        # origin prepended: the first segment rises from (0, 0)
        self._xs = np.concatenate([[0.0], sizes])
        self._ys = np.concatenate([[0.0], scores])
        slopes = np.diff(self._ys) / np.diff(self._xs)
        if slopes.size > 1:
            tol = 1e-9 * max(1.0, float(np.abs(slopes).max()))
            if np.any(np.diff(slopes) > tol):
                warnings.warn(
                    "knot slopes increase somewhere; the curve is not concave",
                    ShapeWarning,
                    stacklevel=2,
                )

    @property
    def max_score(self) -> float:
        return float(self._ys[-1])


def eval_ground_truth_1d(curve: GroundTruthCurve1D, q) -> float | np.ndarray:
    """Score of the piecewise-linear curve at size ``q`` (scalar or array)."""
    arr = np.asarray(q, dtype=float)
    if np.any(arr < 0):
        raise ValueError("sizes must be >= 0")
    out = np.interp(arr, curve._xs, curve._ys)
    return float(out) if out.ndim == 0 else out


def _solve_plane(points) -> np.ndarray | None:
    """Coefficients (a, b, c) of a*x + b*y + c through three (x, y, v) points.

    Returns None when the system is singular or too ill-conditioned to
    reproduce its own inputs.
    """
    mat = np.array([[x, y, 1.0] for x, y, _ in points])
    rhs = np.array([v for _, _, v in points])
    try:
        coef = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(coef)):
        return None
    residual = float(np.abs(mat @ coef - rhs).max())
    if residual > 1e-6 * max(1.0, float(np.abs(rhs).max())):
        return None
    return coef


@dataclass(eq=False)
class GroundTruthSurface2D:
    """Two-source score surface triangulated into planes over a grid.

    ``scores[i, j]`` is the score measured at ``(grid_x[i], grid_y[j])``.
    Each grid cell is split along its anti-diagonal into two triangles and a
    plane is fitted through each triple of corners; queries pick the plane
    whose defining corner (lower-left vs upper-right) is nearer, ties going
    to the lower-left. Cells whose plane systems cannot be solved fall back
    to bilinear interpolation and are flagged with :class:`DegenerateCell`.
    """

    grid_x: np.ndarray
    grid_y: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        gx = np.asarray(self.grid_x, dtype=float)
        gy = np.asarray(self.grid_y, dtype=float)
        vals = np.asarray(self.scores, dtype=float)
        if gx.ndim != 1 or gy.ndim != 1 or gx.size < 2 or gy.size < 2:
            raise ValueError("each grid needs at least two strictly increasing sizes")
        if np.any(np.diff(gx) <= 0) or np.any(np.diff(gy) <= 0):
            raise ValueError("grid sizes must be strictly increasing")
        if vals.shape != (gx.size, gy.size):
            raise ValueError(
                f"scores shape {vals.shape} does not match grids "
                f"({gx.size}, {gy.size})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("scores must be finite")
        tol = 1e-12 * max(1.0, float(np.abs(vals).max()))
        if np.any(np.diff(vals, axis=0) < -tol) or np.any(np.diff(vals, axis=1) < -tol):
            warnings.warn(
                "scores decrease along a row or column of the grid",
                ShapeWarning,
                stacklevel=2,
            )
        self.grid_x, self.grid_y, self.scores = gx, gy, vals
        near = np.zeros((gx.size - 1, gy.size - 1, 3))
        far = np.zeros_like(near)
        bilinear = np.zeros((gx.size - 1, gy.size - 1), dtype=bool)
        for i in range(gx.size - 1):
            for j in range(gy.size - 1):
                x0, x1, y0, y1 = gx[i], gx[i + 1], gy[j], gy[j + 1]
                a = _solve_plane(
                    [(x0, y0, vals[i, j]), (x1, y0, vals[i + 1, j]), (x0, y1, vals[i, j + 1])]
                )
                b = _solve_plane(
                    [(x0, y1, vals[i, j + 1]), (x1, y0, vals[i + 1, j]), (x1, y1, vals[i + 1, j + 1])]
                )
                if a is None or b is None:
                    bilinear[i, j] = True
                    warnings.warn(
                        f"cell ({i}, {j}) has a singular plane system; "
                        "falling back to bilinear interpolation",
                        DegenerateCell,
                        stacklevel=2,
                    )
                else:
                    near[i, j], far[i, j] = a, b
        self._near, self._far, self._bilinear = near, far, bilinear

    @property
    def max_score(self) -> float:
        return float(self.scores.max())

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) corners of the covered size rectangle."""
        lo = np.array([self.grid_x[0], self.grid_y[0]])
        hi = np.array([self.grid_x[-1], self.grid_y[-1]])
        return lo, hi


def _bump(diagnostics: dict | None, key: str) -> None:
    if diagnostics is not None:
        diagnostics[key] = diagnostics.get(key, 0) + 1


def eval_ground_truth_2d(
    surface: GroundTruthSurface2D, q1, q2, diagnostics: dict | None = None
) -> float:
    """Score of the triangulated surface at ``(q1, q2)``.

    Queries outside the grid box are clamped onto it; pass a ``diagnostics``
    dict to count clamped queries and bilinear-fallback evaluations.
    """
    gx, gy = surface.grid_x, surface.grid_y
    x = min(max(float(q1), gx[0]), gx[-1])
    y = min(max(float(q2), gy[0]), gy[-1])
    if x != float(q1) or y != float(q2):
        _bump(diagnostics, "clamped")
    i = min(int(np.searchsorted(gx, x, side="right")) - 1, gx.size - 2)
    j = min(int(np.searchsorted(gy, y, side="right")) - 1, gy.size - 2)
    # grid vertices reproduce their scores bitwise, plane roundoff excluded
    if (x == gx[i] or x == gx[i + 1]) and (y == gy[j] or y == gy[j + 1]):
        ii = i if x == gx[i] else i + 1
        jj = j if y == gy[j] else j + 1
        return float(surface.scores[ii, jj])
    if surface._bilinear[i, j]:
        _bump(diagnostics, "bilinear")
        u = (x - gx[i]) / (gx[i + 1] - gx[i])
        v = (y - gy[j]) / (gy[j + 1] - gy[j])
        s = surface.scores
        return float(
            (1 - u) * (1 - v) * s[i, j]
            + u * (1 - v) * s[i + 1, j]
            + (1 - u) * v * s[i, j + 1]
            + u * v * s[i + 1, j + 1]
        )
    here = np.hypot(x - gx[i], y - gy[j])
    there = np.hypot(gx[i + 1] - x, gy[j + 1] - y)
    coef = surface._near[i, j] if here <= there else surface._far[i, j]
    return float(coef[0] * x + coef[1] * y + coef[2])


# ---------------------------------------------------------------------------
# True requirement
# ---------------------------------------------------------------------------


def _requirement_1d(curve: GroundTruthCurve1D, target: float):
    xs, ys = curve._xs, curve._ys
    if target > ys[-1]:
        return UNREACHABLE
    idx = int(np.searchsorted(ys, target, side="left"))
    if idx == 0:
        return np.array([0.0])
    if ys[idx] == target:
        # exact hit on a knot score: the knot itself is the smallest size
        return np.array([xs[idx]])
    slope = (ys[idx] - ys[idx - 1]) / (xs[idx] - xs[idx - 1])
    return np.array([xs[idx - 1] + (target - ys[idx - 1]) / slope])


def _requirement_2d(surface: GroundTruthSurface2D, target: float, costs: np.ndarray):
    vals = surface.scores
    if target > vals.max():
        return UNREACHABLE
    gx, gy = surface.grid_x, surface.grid_y
    best: tuple[float, float, float] | None = None

    def consider(x: float, y: float) -> None:
        nonlocal best
        if eval_ground_truth_2d(surface, x, y) < target - 1e-9:
            return
        key = (float(costs[0] * x + costs[1] * y), float(x), float(y))
        if best is None or key < best:
            best = key

    for i, j in np.argwhere(vals >= target):
        consider(gx[i], gy[j])
    for i in range(gx.size - 1):
        for j in range(gy.size - 1):
            if surface._bilinear[i, j]:
                continue
            x0, x1, y0, y1 = gx[i], gx[i + 1], gy[j], gy[j + 1]
            triangles = (
                (surface._near[i, j], ((x0, y0), (x1, y0), (x0, y1))),
                (surface._far[i, j], ((x0, y1), (x1, y0), (x1, y1))),
            )
            for coef, corners in triangles:
                for (ax, ay), (bx, by) in (
                    (corners[0], corners[1]),
                    (corners[0], corners[2]),
                    (corners[1], corners[2]),
                ):
                    fa = coef[0] * ax + coef[1] * ay + coef[2] - target
                    fb = coef[0] * bx + coef[1] * by + coef[2] - target
                    if fa * fb >= 0:
                        # no strict crossing; endpoint ties are vertex candidates
                        continue
                    u = fa / (fa - fb)
                    consider(ax + u * (bx - ax), ay + u * (by - ay))
    if best is None:
        return UNREACHABLE
    return np.array([best[1], best[2]])


def true_requirement(oracle, target: float, costs):
    """Cheapest size vector whose oracle score meets ``target``.

    For a 1D curve this is the smallest size on or above the level, found by
    segment inversion. For a surface it is the minimizer of ``costs @ q``
    over the feasible region, searched exactly over triangle vertices and
    level-line/edge crossings. Returns the :data:`UNREACHABLE` marker when
    the oracle never attains the target.
    """
    if not np.isfinite(target):
        raise ValueError(f"target must be finite, got {target}")
    costs = np.atleast_1d(np.asarray(costs, dtype=float))
    if np.any(costs <= 0):
        raise ValueError("costs must be positive")
    if isinstance(oracle, GroundTruthCurve1D):
        if costs.size != 1:
            raise ValueError("a 1D curve takes exactly one cost")
        return _requirement_1d(oracle, float(target))
    if isinstance(oracle, GroundTruthSurface2D):
        if costs.size != 2:
            raise ValueError("a 2D surface takes exactly two costs")
        return _requirement_2d(oracle, float(target), costs)
    raise TypeError(f"unsupported oracle type {type(oracle).__name__}")


# ---------------------------------------------------------------------------
# Collection runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundOutcome:
    """One executed round: what was requested, obtained, and scored."""

    round_index: int
    requested: np.ndarray
    realized: np.ndarray
    score: float


@dataclass(eq=False)
class RunRecord:
    """Full account of one simulated collection run."""

    spec: ProblemSpec
    policy_name: str
    trajectory: tuple[RoundOutcome, ...]
    terminated_round: int
    met_target: bool
    total_paid: float
    d_star_true: object
    policy_error: PolicyFailure | None = None
    diagnostics: dict = field(default_factory=dict)

    def final_amount(self) -> np.ndarray:
        return self.trajectory[-1].realized


def _oracle_dimension(oracle) -> int:
    if isinstance(oracle, GroundTruthCurve1D):
        return 1
    if isinstance(oracle, GroundTruthSurface2D):
        return 2
    raise TypeError(f"unsupported oracle type {type(oracle).__name__}")


def run_collection(
    spec: ProblemSpec,
    oracle,
    policy,
    seed: int,
    *,
    subsample_count: int = 10,
    noise_sigma: float = 0.0,
) -> RunRecord:
    """Drive ``policy`` against a ground-truth oracle for up to T rounds.

    Each round rebuilds the regression evidence from ``subsample_count``
    prefix fractions of the current amount scored through the oracle, plus
    every earlier round's realized observation, then asks the policy for the
    next cumulative amount. The increment is paid at ``spec.costs``; the run
    stops as soon as the observed score meets the target and adds the
    penalty when all rounds fail. A policy that raises ends the run as a
    failure with the amount frozen (see :class:`PolicyFailure`).

    ``noise_sigma`` adds seeded zero-mean Gaussian noise to every oracle
    observation; the default keeps scores exact. Observed scores are cached
    per size within a run, so re-measuring an amount never disagrees with an
    earlier reading. Runs are deterministic per (spec, oracle, policy, seed).
    """
    dim = _oracle_dimension(oracle)
    if dim != spec.source_count:
        raise ValueError(f"oracle has {dim} sources, spec has {spec.source_count}")
    if spec.frozen_prefix:
        raise ValueError("runs start fresh; spec must not carry a frozen prefix")
    if subsample_count < 1:
        raise ValueError(f"subsample_count must be >= 1, got {subsample_count}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if np.any(spec.q0 <= 0):
        raise ValueError("q0 must be positive; sub-sampling needs a nonempty start")
    if dim == 2:
        lo, hi = oracle.box()
        if np.any(spec.q0 < lo) or np.any(spec.q0 > hi):
            raise ValueError("q0 must lie inside the surface grid box")

    diagnostics: dict = {}
    noise = _rng.substream(seed, "noise") if noise_sigma > 0 else None
    cache: dict[tuple, float] = {}

    def observe(q: np.ndarray) -> float:
        key = tuple(q.tolist())
        if key not in cache:
            if dim == 1:
                value = eval_ground_truth_1d(oracle, q[0])
            else:
                value = eval_ground_truth_2d(oracle, q[0], q[1], diagnostics)
            if noise is not None:
                value += noise_sigma * noise.standard_normal()
            cache[key] = float(value)
        return cache[key]

    q0 = spec.q0
    trajectory = [RoundOutcome(0, q0, q0, observe(q0))]
    d_star = true_requirement(oracle, spec.target, spec.costs)
    met = trajectory[0].score >= spec.target
    policy_error: PolicyFailure | None = None

    if not met:
        for round_index in range(1, spec.horizon + 1):
            current = trajectory[-1].realized
            sizes: list[np.ndarray] = []
            seen: set[tuple] = set()
            for r in range(1, subsample_count + 1):
                q = current * (r / subsample_count)
                if tuple(q.tolist()) not in seen:
                    seen.add(tuple(q.tolist()))
                    sizes.append(q)
            for outcome in trajectory:
                if tuple(outcome.realized.tolist()) not in seen:
                    seen.add(tuple(outcome.realized.tolist()))
                    sizes.append(outcome.realized)
            data = RegressionSet.from_points(
                np.stack(sizes), [observe(q) for q in sizes]
            )
            ctx = RoundContext(
                data=data,
                target=spec.target,
                costs=spec.costs,
                penalty=spec.penalty,
                round_index=round_index,
                horizon=spec.horizon,
                q0=q0,
                current=current,
                realized=tuple(o.realized for o in trajectory[1:]),
                seed=seed,
            )
            try:
                requested = np.atleast_1d(np.asarray(policy.propose(ctx), dtype=float))
                if requested.shape != current.shape or not np.all(np.isfinite(requested)):
                    raise ValueError(f"policy returned an invalid request {requested!r}")
            except Exception as exc:
                policy_error = PolicyFailure(
                    f"round {round_index}: {type(exc).__name__}: {exc}"
                )
                policy_error.__cause__ = exc
                break
            realized = np.maximum(requested, current)
            score = observe(realized)
            trajectory.append(RoundOutcome(round_index, requested, realized, score))
            if score >= spec.target:
                met = True
                break

    last = trajectory[-1]
    total = float(spec.costs @ (last.realized - q0))
    if not met:
        total += spec.penalty
    return RunRecord(
        spec=spec,
        policy_name=getattr(policy, "name", type(policy).__name__),
        trajectory=tuple(trajectory),
        terminated_round=last.round_index,
        met_target=met,
        total_paid=total,
        d_star_true=d_star,
        policy_error=policy_error,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    """Summary over a batch of runs.

    ``cost_ratio`` is the mean collection overspend of the successful runs,
    ``costs @ (q_T - q0) / costs @ (max(d_star, q0) - q0) - 1`` with the
    penalty excluded; a run that needed nothing beyond q0 and collected
    nothing contributes 0, and the field is None when no run contributes.
    ``points_ratio`` is the mean ``q_T / d_star`` of single-source runs,
    successes and failures alike, and None otherwise. ``trimmed`` counts
    records dropped by the cost trim before the two means.
    """

    runs: int
    successes: int
    failure_rate: float
    cost_ratio: float | None
    points_ratio: float | None
    trimmed: int


def aggregate_metrics(
    records: Sequence[RunRecord], trim_percentile: float = 100.0
) -> MetricsReport:
    """Aggregate run records into failure and cost metrics.

    The failure rate is always computed over the full batch. Before the cost
    and points ratios are averaged, records whose total cost exceeds the
    ``trim_percentile`` percentile of the batch are removed; 100 keeps
    everything. Runs whose target is unreachable on their oracle carry no
    ratio. Apply the same percentile to every policy being compared.
    """
    if not records:
        raise ValueError("records must be non-empty")
    if not 0.0 <= trim_percentile <= 100.0:
        raise ValueError(f"trim_percentile must be in [0, 100], got {trim_percentile}")
    paid = np.array([r.total_paid for r in records])
    threshold = float(np.percentile(paid, trim_percentile))
    kept = [r for r, p in zip(records, paid) if p <= threshold]
    successes = sum(r.met_target for r in records)
    cost_ratios: list[float] = []
    point_ratios: list[float] = []
    for record in kept:
        if record.d_star_true is UNREACHABLE:
            continue
        d_star = np.asarray(record.d_star_true, dtype=float)
        q_last = record.final_amount()
        if record.spec.source_count == 1 and d_star[0] > 0:
            point_ratios.append(float(q_last[0] / d_star[0]))
        # Overspend relative to the cheapest way of closing the gap from q0.
        # A run that needed nothing and collected nothing counts as 0.
        needed = float(
            record.spec.costs @ (np.maximum(d_star, record.spec.q0) - record.spec.q0)
        )
        if record.met_target:
            spent = float(record.spec.costs @ (q_last - record.spec.q0))
            if needed > 0:
                cost_ratios.append(spent / needed - 1.0)
            elif spent <= 0:
                cost_ratios.append(0.0)
    return MetricsReport(
        runs=len(records),
        successes=int(successes),
        failure_rate=1.0 - successes / len(records),
        cost_ratio=float(np.mean(cost_ratios)) if cost_ratios else None,
        points_ratio=float(np.mean(point_ratios)) if point_ratios else None,
        trimmed=len(records) - len(kept),
    )
