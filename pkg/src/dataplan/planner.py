"""Optimal multi-round collection planning against a requirement distribution.

A plan is a monotone schedule of cumulative amounts q_1 <= ... <= q_T. When
the true requirement D* is unknown but distributed with CDF F, the expected
cost of a plan is

    sum_t c.(q_t - q_{t-1}) (1 - F(q_{t-1}))  +  P (1 - F(q_T)),

each increment being paid only if the target was still unmet going into the
round, plus the penalty when the final amount still falls short. The solver
removes the monotonicity constraint by optimizing unconstrained parameters
x_t with increments softplus(x_t), sweeps a small grid of first-order
methods and learning rates, and keeps the best final objective. A one-round
problem also has an analytic characterization (the density at the optimum
balances the cost-to-penalty ratio), provided here as a cross-check and fast
path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from ._rng import substream
from .curves import (
    UNREACHABLE,
    CurveFamily,
    FitConfig,
    RegressionSet,
    fit_curve,
    invert_curve,
)
from .density import (
    BootstrapConfig,
    RequirementDistribution,
    bootstrap_requirements,
    cdf,
    cdf_gradient,
    fit_gmm,
    fit_kde,
    marginal_quantile,
    quantile,
    quantile_sketch,
)
from .density import _pdf_values

__all__ = [
    "AssumptionViolated",
    "Boundary",
    "CollectionPlan",
    "LocPolicy",
    "ProblemSpec",
    "RoundContext",
    "SolverConfig",
    "analytic_one_round",
    "expected_cost",
    "realized_loss",
    "softplus",
    "softplus_inverse",
    "solve_plan",
]


class AssumptionViolated(RuntimeError):
    """The fitted distribution breaks an analytic-solution assumption."""


@dataclass(frozen=True)
class Boundary:
    """Analytic one-round outcome: collecting nothing is optimal."""

    q0: float


def softplus(x):
    """Overflow-safe log(1 + e^x); maps the reals onto positive increments."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 0.0))))
    return out if out.ndim else float(out)


def softplus_inverse(d):
    """Inverse of :func:`softplus`; requires d > 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("softplus_inverse needs positive inputs")
    with np.errstate(divide="ignore", over="ignore"):
        out = np.where(
            d > 0.7,
            d + np.log1p(-np.exp(-d)),
            np.log(np.expm1(np.minimum(d, 0.7))),
        )
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Problem statement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """One collection problem: target, prices, penalty, horizon, start state.

    ``frozen_prefix`` carries cumulative amounts already executed in earlier
    rounds (empty in round one); the solver keeps them fixed and only plans
    the remaining rounds, while reported objectives still include their sunk
    terms.
    """

    target: float
    costs: np.ndarray
    penalty: float
    horizon: int
    q0: np.ndarray
    frozen_prefix: tuple[np.ndarray, ...] = ()

    def __post_init__(self) -> None:
        costs = np.atleast_1d(np.asarray(self.costs, dtype=float))
        q0 = np.atleast_1d(np.asarray(self.q0, dtype=float))
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(
            self,
            "frozen_prefix",
            tuple(np.atleast_1d(np.asarray(q, dtype=float)) for q in self.frozen_prefix),
        )
        if costs.ndim != 1 or np.any(costs <= 0):
            raise ValueError("costs must be a vector of positive reals")
        if self.penalty <= 0:
            raise ValueError(f"penalty must be > 0, got {self.penalty}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if q0.shape != costs.shape:
            raise ValueError("q0 and costs must share one length")
        if len(self.frozen_prefix) > self.horizon:
            raise ValueError("frozen prefix longer than the horizon")
        prev = q0
        for entry in self.frozen_prefix:
            if entry.shape != q0.shape or np.any(entry < prev):
                raise ValueError("frozen prefix must be monotone starting from q0")
            prev = entry

    @property
    def source_count(self) -> int:
        return self.costs.size


@dataclass(frozen=True)
class CollectionPlan:
    """A full schedule of cumulative amounts q_1..q_T, monotone by invariant."""

    schedule: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        entries = tuple(np.atleast_1d(np.asarray(q, dtype=float)) for q in self.schedule)
        object.__setattr__(self, "schedule", entries)
        if not entries:
            raise ValueError("a plan needs at least one round")
        for a, b in zip(entries, entries[1:]):
            if a.shape != b.shape or np.any(b < a):
                raise ValueError("schedule must be elementwise non-decreasing")

    @classmethod
    def from_amounts(cls, amounts: Sequence[float]) -> "CollectionPlan":
        """Single-source convenience: one scalar per round."""
        return cls(tuple(np.array([float(a)]) for a in amounts))

    @property
    def horizon(self) -> int:
        return len(self.schedule)

    def final(self) -> np.ndarray:
        return self.schedule[-1]


def _check_plan(plan: CollectionPlan, spec: ProblemSpec) -> list[np.ndarray]:
    """Validate a plan against a spec; returns [q0, q_1, ..., q_T]."""
    if plan.horizon != spec.horizon:
        raise ValueError(f"plan has {plan.horizon} rounds, spec wants {spec.horizon}")
    if plan.schedule[0].shape != spec.q0.shape:
        raise ValueError("plan dimension does not match the spec")
    if np.any(plan.schedule[0] < spec.q0):
        raise ValueError("plan must start at or above q0")
    return [spec.q0, *plan.schedule]


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def realized_loss(plan: CollectionPlan, spec: ProblemSpec, d_star) -> float:
    """Collection loss of a plan against a known requirement ``d_star``.

    Closed form: each round's increment is paid only if the requirement was
    unmet entering the round, and the penalty applies when the final amount
    still misses it. With several sources "unmet" means some coordinate of q
    is below its requirement.
    """
    qs = _check_plan(plan, spec)
    d_star = np.atleast_1d(np.asarray(d_star, dtype=float))

    def unmet(q: np.ndarray) -> bool:
        return bool(np.any(q < d_star))

    total = 0.0
    for t in range(1, len(qs)):
        if unmet(qs[t - 1]):
            total += float(spec.costs @ (qs[t] - qs[t - 1]))
    if unmet(qs[-1]):
        total += spec.penalty
    return total


def _schedule_objective(
    qs: Sequence[np.ndarray], spec: ProblemSpec, dist: RequirementDistribution
) -> float:
    """Expected loss of the cumulative schedule [q0, q_1..q_T]."""
    total = 0.0
    for t in range(1, len(qs)):
        total += float(spec.costs @ (qs[t] - qs[t - 1])) * (1.0 - cdf(dist, qs[t - 1]))
    total += spec.penalty * (1.0 - cdf(dist, qs[-1]))
    return total


def expected_cost(
    plan: CollectionPlan, spec: ProblemSpec, dist: RequirementDistribution
) -> float:
    """Expectation of :func:`realized_loss` over D* ~ ``dist``, in closed form."""
    if dist.dimension != spec.source_count:
        raise ValueError("distribution dimension does not match the spec")
    return _schedule_objective(_check_plan(plan, spec), spec, dist)


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


def default_optimizer_grid() -> tuple[tuple[str, float], ...]:
    """Momentum and adaptive first-order methods across a decade-spaced
    learning-rate grid from 0.005 to 500."""
    rates = [0.005 * 10.0**i for i in range(6)]
    return tuple(
        (method, rate) for method in ("momentum", "adam") for rate in rates
    )


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the plan solver's grid of descent trials."""

    optimizer_grid: tuple[tuple[str, float], ...] = field(
        default_factory=default_optimizer_grid
    )
    max_steps: int = 500
    seed: int = 0
    """Carried for interface stability; the descent itself draws no randomness."""

    init_scheme: Literal["anchor-fractions"] = "anchor-fractions"
    """First planned round starts at the anchor; each later round adds the
    first increment divided by one plus its offset."""

    anchor: float | np.ndarray | None = None
    """Cumulative amount the first planned round should initially aim for,
    typically a regression point estimate of the requirement. None falls back
    to the distribution's (marginal) median."""

    round_plan: bool = True
    """Round the continuous solution up to whole samples. Disable to study
    the continuous optimum directly."""

    def __post_init__(self) -> None:
        if not self.optimizer_grid:
            raise ValueError("optimizer grid must be non-empty")
        for method, rate in self.optimizer_grid:
            if method not in ("momentum", "adam"):
                raise ValueError(f"unknown optimizer {method!r}")
            if rate <= 0:
                raise ValueError(f"learning rate must be > 0, got {rate}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.init_scheme != "anchor-fractions":
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")


def _objective_and_gradient(
    x: np.ndarray,
    spec: ProblemSpec,
    dist: RequirementDistribution,
) -> tuple[float, np.ndarray]:
    """Objective and its gradient in softplus space.

    ``x`` has one row per still-free round. Frozen rounds contribute their
    sunk cost to the value but no gradient. The gradient chains the exact
    q-space partials through d_t = softplus(x_t): every q_t at or after a
    free round r moves with x_r at rate sigmoid(x_r).
    """
    frozen = spec.frozen_prefix
    increments = softplus(x)
    qs = [spec.q0, *frozen]
    for d in increments:
        qs.append(qs[-1] + d)
    value = _schedule_objective(qs, spec, dist)

    horizon = spec.horizon
    first_free = len(frozen) + 1  # 1-based round index of the first free round
    cdf_at = [cdf(dist, q) for q in qs]
    grad_q = np.zeros((x.shape[0], x.shape[1]))
    for t in range(first_free, horizon + 1):
        row = t - first_free
        partial = spec.costs * (1.0 - cdf_at[t - 1])
        if t < horizon:
            partial = partial - spec.costs * (1.0 - cdf_at[t])
            partial = partial - float(spec.costs @ (qs[t + 1] - qs[t])) * cdf_gradient(
                dist, qs[t]
            )
        else:
            partial = partial - spec.penalty * cdf_gradient(dist, qs[t])
        grad_q[row] = partial
    # q_t depends on x_r for every free r <= t, so x_r collects all later rows
    tail = np.flip(np.cumsum(np.flip(grad_q, axis=0), axis=0), axis=0)
    sigmoid = 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))
    return value, sigmoid * tail


def _descend(
    x0: np.ndarray,
    method: str,
    rate: float,
    steps: int,
    spec: ProblemSpec,
    dist: RequirementDistribution,
    scale: float,
) -> tuple[np.ndarray, float] | None:
    """One deterministic descent trial; None when it diverges."""
    x = x0.copy()
    velocity = np.zeros_like(x)
    second = np.zeros_like(x)
    for step in range(1, steps + 1):
        _, grad = _objective_and_gradient(x, spec, dist)
        grad = grad / scale
        if not np.all(np.isfinite(grad)):
            return None
        if method == "momentum":
            velocity = 0.9 * velocity + grad
            x = x - rate * velocity
        else:
            velocity = 0.9 * velocity + 0.1 * grad
            second = 0.999 * second + 0.001 * grad * grad
            m_hat = velocity / (1.0 - 0.9**step)
            s_hat = second / (1.0 - 0.999**step)
            x = x - rate * m_hat / (np.sqrt(s_hat) + 1e-8)
        if not np.all(np.isfinite(x)):
            return None
    value, _ = _objective_and_gradient(x, spec, dist)
    if not np.isfinite(value):
        return None
    return x, value


def _default_anchor(dist: RequirementDistribution) -> np.ndarray:
    if dist.dimension == 1:
        return np.array([quantile(dist, 0.5)])
    return np.array([marginal_quantile(dist, 0.5, axis=a) for a in range(dist.dimension)])


def _initial_x(
    spec: ProblemSpec, dist: RequirementDistribution, cfg: SolverConfig, free_rounds: int
) -> np.ndarray:
    anchor = cfg.anchor
    if anchor is None or anchor is UNREACHABLE:
        anchor_vec = _default_anchor(dist)
    else:
        anchor_vec = np.broadcast_to(
            np.atleast_1d(np.asarray(anchor, dtype=float)), spec.q0.shape
        ).astype(float)
    base = spec.frozen_prefix[-1] if spec.frozen_prefix else spec.q0
    floor = np.maximum(1e-3, 1e-3 * np.abs(anchor_vec))
    first = np.maximum(anchor_vec - base, floor)
    rows = [first / (s + 1.0) for s in range(free_rounds)]
    return softplus_inverse(np.stack(rows))


def _round_schedule(
    continuous: list[np.ndarray], spec: ProblemSpec
) -> tuple[np.ndarray, ...]:
    """Snap numerically-zero increments, then ceil with a running max."""
    frozen = len(spec.frozen_prefix)
    snapped: list[np.ndarray] = []
    prev = spec.frozen_prefix[-1] if frozen else spec.q0
    for q in continuous[frozen + 1 :]:
        keep = (q - prev) > 1e-9 * np.maximum(1.0, np.abs(q))
        snapped.append(np.where(keep, q, prev))
        prev = snapped[-1]
    rounded: list[np.ndarray] = list(spec.frozen_prefix)
    prev = np.ceil(spec.frozen_prefix[-1]) if frozen else spec.q0
    for q in snapped:
        prev = np.maximum(np.ceil(q), prev)
        rounded.append(prev)
    return tuple(rounded)


def solve_plan(
    spec: ProblemSpec, dist: RequirementDistribution, cfg: SolverConfig | None = None
) -> tuple[CollectionPlan, float, dict]:
    """Minimize the expected collection cost over monotone plans.

    Runs every (method, learning-rate) pair in the config grid from the same
    anchored initialization and keeps the lowest final objective, ties going
    to the smaller learning rate. The continuous solution, always available
    under ``diagnostics["continuous_schedule"]``, is rounded up to whole
    samples unless ``cfg.round_plan`` is off. When no trial improves on the
    initialization, the initialization itself is returned and
    ``diagnostics["no_improvement"]`` is set.

    Returns:
        (plan, expected cost of that plan, diagnostics dict).
    """
    cfg = cfg or SolverConfig()
    if dist.dimension != spec.source_count:
        raise ValueError("distribution dimension does not match the spec")
    free_rounds = spec.horizon - len(spec.frozen_prefix)
    diagnostics: dict = {
        "no_improvement": False,
        "method": None,
        "learning_rate": None,
        "trials": len(cfg.optimizer_grid),
    }

    if free_rounds == 0:
        plan = CollectionPlan(spec.frozen_prefix)
        value = expected_cost(plan, spec, dist)
        diagnostics["continuous_schedule"] = [q.copy() for q in spec.frozen_prefix]
        diagnostics["continuous_objective"] = value
        return plan, value, diagnostics

    x_init = _initial_x(spec, dist, cfg, free_rounds)
    init_value, _ = _objective_and_gradient(x_init, spec, dist)
    # a shared scale keeps trajectories invariant under (alpha c, alpha P)
    scale = spec.penalty + float(spec.costs.sum())

    best_x, best_value = x_init, np.inf
    best_method, best_rate = None, None
    for method, rate in cfg.optimizer_grid:
        outcome = _descend(x_init, method, rate, cfg.max_steps, spec, dist, scale)
        if outcome is None:
            continue
        x_final, value = outcome
        if value < best_value or (value == best_value and best_rate is not None and rate < best_rate):
            best_x, best_value, best_method, best_rate = x_final, value, method, rate

    if best_value >= init_value:
        best_x, best_value = x_init, init_value
        diagnostics["no_improvement"] = True
        best_method, best_rate = None, None
    diagnostics["method"] = best_method
    diagnostics["learning_rate"] = best_rate

    increments = softplus(best_x)
    continuous = [spec.q0, *spec.frozen_prefix]
    for d in increments:
        continuous.append(continuous[-1] + d)
    diagnostics["continuous_schedule"] = [q.copy() for q in continuous[1:]]
    diagnostics["continuous_objective"] = best_value

    if cfg.round_plan:
        plan = CollectionPlan(_round_schedule(continuous, spec))
    else:
        plan = CollectionPlan(tuple(continuous[1:]))
    value = expected_cost(plan, spec, dist)
    return plan, value, diagnostics


# ---------------------------------------------------------------------------
# Analytic one-round solution
# ---------------------------------------------------------------------------


def analytic_one_round(
    spec: ProblemSpec, dist: RequirementDistribution
) -> tuple[float, float] | Boundary:
    """Closed-form one-round optimum: stop where the density balances c/P.

    The expected one-round cost c (q1 - q0)(1 - F(q0)) + P (1 - F(q1)) is
    stationary where f(q1) = (c/P)(1 - F(q0)); when nothing has been
    collected yet (F(q0) = 0) this is the classic density-equals-cost-ratio
    rule f(F^{-1}(1-eps)) = c/P. Tail masses are scanned on 512 log-spaced
    candidates and each sign change is refined by bisection on the density.
    A candidate only counts when its secant beats staying put,
    (F(q1) - F(q0))/(q1 - q0) >= (c/P)(1 - F(q0)); the lowest-objective
    survivor is returned as (q1, eps) with eps its right-tail mass. When no
    candidate qualifies, collecting nothing is optimal: ``Boundary(q0)``.

    Raises:
        AssumptionViolated: degenerate distribution (flat cdf steps), where
            the stationarity equation is meaningless; use solve_plan.
    """
    if spec.source_count != 1 or dist.dimension != 1:
        raise ValueError("the analytic solution covers single-source problems only")
    if spec.horizon != 1 or spec.frozen_prefix:
        raise ValueError("the analytic solution covers one fresh round only")
    if dist.degenerate:
        raise AssumptionViolated("degenerate distribution: cdf is a flat step")

    q0 = float(spec.q0[0])
    f0 = cdf(dist, q0)
    mass_left = 1.0 - f0
    if mass_left <= 1e-15:
        return Boundary(q0)
    balance = float(spec.costs[0]) / spec.penalty * mass_left

    eps_grid = np.geomspace(mass_left * 1e-9, mass_left, 512)
    q_grid = np.asarray(quantile_sketch(dist, 1.0 - eps_grid), dtype=float)
    q_grid = np.maximum(q_grid, q0)
    g = _pdf_values(dist, q_grid) - balance

    candidates: list[float] = []
    for i in range(len(q_grid) - 1):
        lo, hi = q_grid[i + 1], q_grid[i]  # eps grows along the scan, q shrinks
        if lo == hi:
            continue
        g_lo = g[i + 1]
        g_hi = g[i]
        if g_lo == 0.0:
            candidates.append(float(lo))
            continue
        if g_lo * g_hi > 0:
            continue
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            g_mid = _pdf_values(dist, np.array([mid]))[0] - balance
            if g_mid == 0.0:
                break
            if g_mid * g_lo > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * max(1.0, abs(hi)):
                break
        candidates.append(float(0.5 * (lo + hi)))

    best: tuple[float, float] | None = None
    best_value = np.inf
    for q1 in candidates:
        if q1 <= q0:
            continue
        f1 = cdf(dist, q1)
        if balance > (f1 - f0) / (q1 - q0) + 1e-12:
            continue
        value = float(spec.costs[0]) * (q1 - q0) * mass_left + spec.penalty * (1.0 - f1)
        if value < best_value:
            best_value = value
            best = (q1, 1.0 - f1)
    if best is None:
        return Boundary(q0)
    return best


# ---------------------------------------------------------------------------
# The full pipeline as a collection policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundContext:
    """State handed to a collection policy when it must pick this round's q.

    ``realized`` holds the cumulative amounts of earlier rounds (empty in
    round one); ``current`` is the amount already in hand.
    """

    data: RegressionSet
    target: float
    costs: np.ndarray
    penalty: float
    round_index: int
    horizon: int
    q0: np.ndarray
    current: np.ndarray
    realized: tuple[np.ndarray, ...]
    seed: int


@dataclass(frozen=True)
class LocPolicy:
    """Learn-the-curve, estimate-the-distribution, optimize-the-plan policy.

    Each round: bootstrap the observed curve into requirement estimates,
    fit a density (KDE for one source, mixture otherwise), and solve the
    remaining-rounds plan with earlier rounds frozen; the plan's entry for
    the current round is the collection request.
    """

    family: CurveFamily
    resamples: int = 500
    censor_policy: Literal["drop", "cap-at-bound"] = "cap-at-bound"
    q_cap: float | np.ndarray | None = None
    bandwidth_fractions: tuple[float, ...] = tuple(np.geomspace(0.005, 0.3, 8))
    """K=1: candidate bandwidths as fractions of the estimate spread."""

    component_grid: tuple[int, ...] = (1, 2, 3, 4)
    solver: SolverConfig = field(default_factory=SolverConfig)
    resample_fit_config: FitConfig | None = None
    """Optional cap on the per-resample fitter schedule; the full-data
    warm-start and anchor fits always run at full depth."""

    name: str = "loc"

    def propose(self, ctx: RoundContext) -> np.ndarray:
        boot_seed = int(substream(ctx.seed, "loc-bootstrap", ctx.round_index).integers(2**63))
        cfg = BootstrapConfig(
            family=self.family,
            seed=boot_seed,
            resamples=self.resamples,
            q_cap=self.q_cap,
            censor_policy=self.censor_policy,
            fit_config=self.resample_fit_config,
            warm_fit_config=FitConfig(),
        )
        estimates = bootstrap_requirements(ctx.data, ctx.target, ctx.costs, cfg)
        if ctx.costs.size == 1:
            values = np.array([e[0] for e in estimates])
            spread = float(values.std())
            if spread <= 0:
                spread = max(1.0, abs(float(values[0])) * 1e-3)
            grid = np.asarray(self.bandwidth_fractions) * spread
            dist = fit_kde(values, grid)
        else:
            gmm_seed = int(substream(ctx.seed, "loc-gmm", ctx.round_index).integers(2**63))
            dist = fit_gmm(np.stack(estimates), self.component_grid, gmm_seed)

        anchor = invert_curve(
            fit_curve(self.family, ctx.data),
            ctx.target,
            costs=ctx.costs,
            q_max=cfg.q_cap if cfg.q_cap is not None else 100.0 * ctx.data.max_total_size(),
            seed=boot_seed,
        )
        anchor_value = None if anchor is UNREACHABLE else np.asarray(anchor, dtype=float)
        spec = ProblemSpec(
            target=ctx.target,
            costs=ctx.costs,
            penalty=ctx.penalty,
            horizon=ctx.horizon,
            q0=ctx.q0,
            frozen_prefix=ctx.realized,
        )
        plan, _, _ = solve_plan(spec, dist, replace(self.solver, anchor=anchor_value))
        request = plan.schedule[ctx.round_index - 1]
        return np.maximum(request, ctx.current)
