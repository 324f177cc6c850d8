"""Parametric learning-curve models: evaluation, fitting, and inversion.

A learning curve maps a training-set size (or a vector of per-source sizes) to
a model score. This module provides the parametric families used to
extrapolate measured curves, a weighted nonlinear least-squares fitter, and
the inverse problem of finding the cheapest size at which a fitted curve
reaches a target score.

Organization:
    - Domain types: :class:`CurveFamily`, :class:`CurveSample`,
      :class:`RegressionSet`, :class:`RegressionModel`.
    - Evaluation: :func:`eval_curve` (scalar) and the vectorized private
      helpers used by the fitter.
    - Fitting: :func:`fit_curve`, a damped Gauss-Newton (Levenberg-Marquardt)
      iteration with a fixed, deterministic schedule.
    - Inversion: :func:`invert_curve`, closed-form where available and
      bracketing/bisection or penalty descent otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from ._rng import substream

__all__ = [
    "CurveFamily",
    "CurveSample",
    "RegressionSet",
    "RegressionModel",
    "FitConfig",
    "DomainError",
    "NonMonotoneWarning",
    "Unreachable",
    "UNREACHABLE",
    "default_init",
    "default_weights",
    "eval_curve",
    "fit_curve",
    "invert_curve",
]

FamilyKind = Literal[
    "power-law", "logarithmic", "arctan", "algebraic-root", "additive-power-law"
]


class DomainError(ValueError):
    """A curve formula is undefined at the requested point.

    Examples: logarithm of a non-positive argument, zero raised to a negative
    exponent. The fitter treats this as a rejected step; callers evaluating
    directly should treat it as a bad query or pathological parameters.
    """


class NonMonotoneWarning(UserWarning):
    """A fitted curve decreases where inversion expected growth."""


class Unreachable:
    """Marker value: no size within the search bound attains the target.

    This is a result, not an error. There is a single instance,
    :data:`UNREACHABLE`; test with ``result is UNREACHABLE`` or
    ``isinstance(result, Unreachable)``.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNREACHABLE"


UNREACHABLE = Unreachable()


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveFamily:
    """A parametric family of learning curves.

    The three-parameter scalar families model score as a function of a single
    size q:

    - ``power-law``: theta0 * q**theta1 + theta2
    - ``logarithmic``: theta0 * log(q + theta1) + theta2
    - ``arctan``: (200/pi) * arctan(theta0 * (pi/2) * q + theta1) + theta2
    - ``algebraic-root``: 100*q / (1 + |theta0*q|**theta1)**(1/theta1) + theta2

    ``additive-power-law`` models K sources additively with one (scale,
    exponent) pair per source plus a shared bias, 2K+1 parameters:
    sum_k theta_{k,0} * q_k**theta_{k,1} + theta_bias.
    """

    kind: FamilyKind
    source_count: int = 1

    def __post_init__(self) -> None:
        if self.source_count < 1:
            raise ValueError(f"source_count must be >= 1, got {self.source_count}")
        if self.kind != "additive-power-law" and self.source_count != 1:
            raise ValueError(f"family {self.kind!r} is single-source only")

    @property
    def parameter_count(self) -> int:
        if self.kind == "additive-power-law":
            return 2 * self.source_count + 1
        return 3

    @classmethod
    def power_law(cls) -> "CurveFamily":
        return cls("power-law")

    @classmethod
    def logarithmic(cls) -> "CurveFamily":
        return cls("logarithmic")

    @classmethod
    def arctan(cls) -> "CurveFamily":
        return cls("arctan")

    @classmethod
    def algebraic_root(cls) -> "CurveFamily":
        return cls("algebraic-root")

    @classmethod
    def additive_power_law(cls, source_count: int) -> "CurveFamily":
        return cls("additive-power-law", source_count)


@dataclass(frozen=True)
class CurveSample:
    """One measured point of a learning curve.

    ``sizes`` holds the per-source data amounts (length K, all >= 0); K=1
    curves use a length-1 vector. ``weight`` is the least-squares weight; when
    left as None the fitter derives the default doubling scheme for the whole
    set (see :func:`default_weights`).
    """

    sizes: np.ndarray
    score: float
    weight: float | None = None

    def __post_init__(self) -> None:
        sizes = np.atleast_1d(np.asarray(self.sizes, dtype=float))
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "score", float(self.score))
        if np.any(sizes < 0) or not np.all(np.isfinite(sizes)):
            raise ValueError(f"sizes must be finite and >= 0, got {sizes}")
        if not np.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score}")
        if self.weight is not None and not self.weight > 0:
            raise ValueError(f"weight must be > 0, got {self.weight}")

    @property
    def total_size(self) -> float:
        return float(self.sizes.sum())


@dataclass(frozen=True)
class RegressionSet:
    """An ordered collection of curve samples sharing one source count."""

    samples: tuple[CurveSample, ...]
    source_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ValueError("regression set must contain at least one sample")
        for s in self.samples:
            if s.sizes.shape != (self.source_count,):
                raise ValueError(
                    f"sample has {s.sizes.shape[0]} sources, expected {self.source_count}"
                )
        if not any(s.total_size > 0 for s in self.samples):
            raise ValueError("at least one sample must have positive total size")

    @classmethod
    def from_points(
        cls,
        sizes: Sequence[float] | np.ndarray,
        scores: Sequence[float] | np.ndarray,
        weights: Sequence[float] | None = None,
    ) -> "RegressionSet":
        """Build a single-source set from parallel size/score sequences."""
        sizes = np.asarray(sizes, dtype=float)
        scores = np.asarray(scores, dtype=float)
        if sizes.ndim == 1:
            sizes = sizes[:, None]
        if sizes.shape[0] != scores.shape[0]:
            raise ValueError("sizes and scores must have equal length")
        if weights is not None and len(weights) != sizes.shape[0]:
            raise ValueError("weights must match the number of samples")
        samples = tuple(
            CurveSample(sizes[i], scores[i], None if weights is None else weights[i])
            for i in range(sizes.shape[0])
        )
        return cls(samples, sizes.shape[1])

    def size_matrix(self) -> np.ndarray:
        """Sample sizes as an (n, K) array."""
        return np.stack([s.sizes for s in self.samples])

    def score_vector(self) -> np.ndarray:
        return np.array([s.score for s in self.samples])

    def max_total_size(self) -> float:
        return max(s.total_size for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class RegressionModel:
    """A curve family with fitted parameters.

    ``converged`` is False when the fitter hit its iteration cap without
    meeting tolerance; the parameters are then best-so-far. Downstream users
    (e.g., bootstrap censoring) decide how to treat non-converged fits.
    """

    family: CurveFamily
    theta: np.ndarray
    converged: bool = True

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.family.parameter_count,):
            raise ValueError(
                f"theta has length {theta.shape[0]}, family "
                f"{self.family.kind!r} needs {self.family.parameter_count}"
            )

    def evaluate(self, q) -> float:
        return eval_curve(self, q)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _eval_many(family: CurveFamily, theta: np.ndarray, q_matrix: np.ndarray) -> np.ndarray:
    """Evaluate the family at many points; q_matrix is (n, K).

    Raises DomainError if the formula is undefined at any of the points.
    """
    kind = family.kind
    with np.errstate(all="ignore"):
        if kind == "power-law":
            q = q_matrix[:, 0]
            out = theta[0] * np.power(q, theta[1]) + theta[2]
        elif kind == "logarithmic":
            q = q_matrix[:, 0]
            arg = q + theta[1]
            if np.any(arg <= 0):
                raise DomainError(
                    f"logarithm argument q + {theta[1]} is non-positive for some q"
                )
            out = theta[0] * np.log(arg) + theta[2]
        elif kind == "arctan":
            q = q_matrix[:, 0]
            out = (200.0 / np.pi) * np.arctan(theta[0] * (np.pi / 2.0) * q + theta[1]) + theta[2]
        elif kind == "algebraic-root":
            out = _eval_algebraic_root(theta, q_matrix[:, 0])
        elif kind == "additive-power-law":
            k = family.source_count
            scales = theta[0 : 2 * k : 2]
            exponents = theta[1 : 2 * k : 2]
            out = np.full(q_matrix.shape[0], theta[2 * k])
            for j in range(k):
                out = out + scales[j] * np.power(q_matrix[:, j], exponents[j])
        else:  # pragma: no cover - kinds are closed by the Literal type
            raise ValueError(f"unknown family kind {kind!r}")
    if not np.all(np.isfinite(out)):
        raise DomainError(f"family {kind!r} is undefined at some requested sizes")
    return out


def _eval_algebraic_root(theta: np.ndarray, q: np.ndarray) -> np.ndarray:
    """100*q / (1 + |theta0*q|**theta1)**(1/theta1) + theta2, overflow-safe.

    Computed in log space so that large |theta0*q|**theta1 cannot overflow:
    log denominator = log1p(t**theta1) / theta1 ~ log t for large t, which
    keeps the saturation limit 100/|theta0| + theta2 exact.
    """
    if theta[1] == 0:
        raise DomainError("algebraic-root exponent must be nonzero")
    t = np.abs(theta[0] * q)
    out = np.empty_like(q, dtype=float)
    zero = t == 0
    out[zero] = 100.0 * q[zero] + theta[2]  # denominator is exactly 1
    if np.any(~zero):
        x = theta[1] * np.log(t[~zero])
        # softplus(x) = log(1 + e^x), branch for stability at both ends
        sp = np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(x)))
        log_denom = sp / theta[1]
        out[~zero] = 100.0 * q[~zero] * np.exp(-log_denom) + theta[2]
    return out


def eval_curve(model: RegressionModel, q) -> float:
    """Evaluate a fitted curve at a single size point.

    Args:
        model: the fitted curve.
        q: a scalar size (single-source families) or a length-K vector.

    Returns:
        The predicted score at ``q``.

    Raises:
        DomainError: the family formula is undefined at ``q``.
    """
    q_vec = np.atleast_1d(np.asarray(q, dtype=float))
    if q_vec.shape != (model.family.source_count,):
        raise ValueError(
            f"size point has shape {q_vec.shape}, expected ({model.family.source_count},)"
        )
    if np.any(q_vec < 0):
        raise ValueError(f"sizes must be >= 0, got {q_vec}")
    return float(_eval_many(model.family, model.theta, q_vec[None, :])[0])


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Deterministic schedule for the damped Gauss-Newton fitter."""

    max_iterations: int = 200
    """Iteration cap; accepted and rejected steps both count."""

    relative_tolerance: float = 1e-10
    """Stop when an accepted step improves the loss by less than this fraction."""

    damping_init: float = 1e-3
    """Initial Marquardt damping factor."""

    damping_increase: float = 10.0
    """Multiplier applied after a rejected step."""

    damping_decrease: float = 10.0
    """Divisor applied after an accepted step."""

    jacobian_step: float = 1e-6
    """Central-difference step scale: h_j = jacobian_step * max(1, |theta_j|)."""

    gradient_tolerance: float = 1e-4
    """First-order norm below which a damping-stalled fit counts as converged."""


def default_init(family: CurveFamily) -> np.ndarray:
    """Default parameter initialization: product terms 1, bias terms 0."""
    if family.kind == "additive-power-law":
        theta = np.ones(family.parameter_count)
        theta[-1] = 0.0
        return theta
    return np.array([1.0, 1.0, 0.0])


def default_weights(data: RegressionSet) -> np.ndarray:
    """Doubling least-squares weights, ordered by total sample size.

    Each sample weighs twice the next-smaller one, so the fit is anchored at
    the large-size end of the curve. The largest sample's raw weight is 1
    (avoiding overflow for long sets) and the weights are normalized to sum
    to one. Exact powers of two keep consecutive ratios exactly 2.
    """
    n = len(data)
    order = np.argsort([s.total_size for s in data.samples], kind="stable")
    raw = np.empty(n)
    raw[order] = np.power(2.0, np.arange(n, dtype=float) - (n - 1))
    return raw / raw.sum()


def _resolve_weights(data: RegressionSet) -> np.ndarray:
    given = [s.weight for s in data.samples]
    if all(w is None for w in given):
        return default_weights(data)
    if any(w is None for w in given):
        raise ValueError("either all samples carry weights or none do")
    return np.array(given, dtype=float)


def _jacobian(
    family: CurveFamily,
    theta: np.ndarray,
    q_matrix: np.ndarray,
    step_scale: float,
) -> np.ndarray:
    """Central-difference Jacobian of the model prediction wrt theta."""
    n, p = q_matrix.shape[0], theta.shape[0]
    jac = np.empty((n, p))
    for j in range(p):
        h = step_scale * max(1.0, abs(theta[j]))
        plus = theta.copy()
        minus = theta.copy()
        plus[j] += h
        minus[j] -= h
        try:
            f_plus = _eval_many(family, plus, q_matrix)
        except DomainError:
            f_plus = None
        try:
            f_minus = _eval_many(family, minus, q_matrix)
        except DomainError:
            f_minus = None
        center = None
        if f_plus is not None and f_minus is not None:
            jac[:, j] = (f_plus - f_minus) / (2.0 * h)
        elif f_plus is not None:
            center = _eval_many(family, theta, q_matrix)
            jac[:, j] = (f_plus - center) / h
        elif f_minus is not None:
            center = _eval_many(family, theta, q_matrix)
            jac[:, j] = (center - f_minus) / h
        else:
            raise DomainError(
                f"family {family.kind!r} undefined on both sides of theta[{j}]"
            )
    return jac


def fit_curve(
    family: CurveFamily,
    data: RegressionSet,
    init: np.ndarray | None = None,
    config: FitConfig | None = None,
) -> RegressionModel:
    """Fit a curve family to a regression set by weighted least squares.

    Minimizes sum_i w_i * (score_i - v(sizes_i; theta))^2 with a
    Levenberg-Marquardt iteration: solve the damped normal equations, accept
    a step only if it lowers the loss, and scale the damping by a fixed
    factor on accept/reject. The run is bitwise deterministic for fixed
    inputs.

    Args:
        family: the parametric family to fit.
        data: measured curve samples; when no sample carries an explicit
            weight, the doubling scheme of :func:`default_weights` applies.
        init: optional initial parameters (defaults to :func:`default_init`).
        config: fitter schedule (defaults to :class:`FitConfig`).

    Returns:
        A :class:`RegressionModel`; ``converged`` is False when the iteration
        cap was reached while steps still helped (best-so-far parameters).

    Raises:
        DomainError: the family is undefined at the initial parameters, or
            becomes undefined in a way damping cannot recover from.
    """
    config = config or FitConfig()
    if data.source_count != family.source_count:
        raise ValueError(
            f"data has {data.source_count} sources, family expects {family.source_count}"
        )
    theta = np.array(default_init(family) if init is None else init, dtype=float)
    if theta.shape != (family.parameter_count,):
        raise ValueError(
            f"init has length {theta.shape[0]}, family needs {family.parameter_count}"
        )

    q_matrix = data.size_matrix()
    y = data.score_vector()
    sqrt_w = np.sqrt(_resolve_weights(data))

    def weighted_residual(th: np.ndarray) -> np.ndarray:
        return sqrt_w * (y - _eval_many(family, th, q_matrix))

    def try_loss(th: np.ndarray) -> tuple[float, np.ndarray | None]:
        try:
            r = weighted_residual(th)
        except DomainError:
            return np.inf, None
        with np.errstate(over="ignore"):
            value = float(r @ r)
        return (value if np.isfinite(value) else np.inf), r

    residual = weighted_residual(theta)  # DomainError here is unrecoverable
    loss = float(residual @ residual)
    damping = config.damping_init
    converged = False
    loss_floor = 1e-20 * max(1.0, float(y @ y))

    for _ in range(config.max_iterations):
        if loss <= loss_floor:
            converged = True
            break
        try:
            jac_model = _jacobian(family, theta, q_matrix, config.jacobian_step)
        except DomainError:
            break  # cannot differentiate at the current point
        jac = -sqrt_w[:, None] * jac_model
        normal = jac.T @ jac
        gradient = jac.T @ residual
        diag = np.diag(
            np.maximum(np.diag(normal), 1e-12 * max(1.0, float(np.diag(normal).max())))
        )

        # One iteration builds one Jacobian; the damping escalates within it
        # until a trial step lowers the loss.
        accepted = False
        step = None
        for _ in range(60):
            try:
                step = np.linalg.solve(normal + damping * diag, -gradient)
            except np.linalg.LinAlgError:
                damping *= config.damping_increase
                continue
            trial_loss, trial_residual = try_loss(theta + step)
            if trial_loss < loss:
                accepted = True
                break
            damping *= config.damping_increase
        if not accepted:
            converged = bool(np.linalg.norm(gradient) <= config.gradient_tolerance)
            break

        # Extend the accepted step multiplicatively while it keeps helping;
        # this is what lets the fixed damping ladder cross long curved valleys
        # within the iteration budget.
        best_scale, best_loss, best_residual = 1.0, trial_loss, trial_residual
        scale = 2.0
        while scale <= 4096.0:
            extended_loss, extended_residual = try_loss(theta + scale * step)
            if extended_loss < best_loss:
                best_scale, best_loss, best_residual = scale, extended_loss, extended_residual
                scale *= 2.0
            else:
                break

        improvement = loss - best_loss
        theta = theta + best_scale * step
        residual, loss = best_residual, best_loss
        damping = max(damping / config.damping_decrease, 1e-300)
        if improvement <= config.relative_tolerance * max(loss, 1e-300):
            converged = True
            break

    return RegressionModel(family=family, theta=theta, converged=converged)


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------

_BISECT_REL_TOL = 1e-9
_SCAN_POINTS = 512


def invert_curve(
    model: RegressionModel,
    target: float,
    costs: np.ndarray | None = None,
    q_max: np.ndarray | float | None = None,
    seed: int = 0,
):
    """Find the cheapest size at which the fitted curve reaches ``target``.

    Single-source curves return the smallest q <= q_max with v(q) >= target,
    by closed form for the power law and by a monotone grid scan plus
    bisection otherwise. Multi-source curves minimize costs @ q subject to
    v(q) >= target over the box [0, q_max], via a coarse feasible grid, a
    penalty-form projected descent, and a coordinate-bisection polish.

    Args:
        model: fitted curve.
        target: score to reach.
        costs: per-source positive costs (required for multi-source curves).
        q_max: per-source upper bound on the search (scalar broadcasts).
        seed: tie-break stream used when several grid minimizers cost the
            same (multi-source only).

    Returns:
        A length-K size vector, or :data:`UNREACHABLE` when no point in the
        box attains the target.

    Warns:
        NonMonotoneWarning: the curve decreases over the scanned range, which
        usually indicates a pathological fit.
    """
    k = model.family.source_count
    if q_max is None:
        raise ValueError("q_max is required")
    q_hi = np.broadcast_to(np.atleast_1d(np.asarray(q_max, dtype=float)), (k,)).copy()
    if np.any(q_hi <= 0):
        raise ValueError(f"q_max must be > 0, got {q_hi}")
    if not np.isfinite(target):
        raise ValueError(f"target must be finite, got {target}")
    if k == 1:
        return _invert_single(model, float(target), float(q_hi[0]))
    if costs is None:
        raise ValueError("costs are required for multi-source inversion")
    cost_vec = np.asarray(costs, dtype=float)
    if cost_vec.shape != (k,) or np.any(cost_vec <= 0):
        raise ValueError(f"costs must be {k} positive reals, got {costs}")
    return _invert_multi(model, float(target), cost_vec, q_hi, seed)


def _try_eval(model: RegressionModel, q: np.ndarray) -> float:
    try:
        return float(_eval_many(model.family, model.theta, q[None, :])[0])
    except DomainError:
        return -np.inf


def _invert_single(model: RegressionModel, target: float, q_hi: float):
    theta = model.theta
    if model.family.kind == "power-law" and theta[0] > 0 and theta[1] > 0:
        # Closed form: q = ((target - theta2) / theta0) ** (1 / theta1).
        if theta[2] >= target:
            return np.array([0.0])
        q = float(((target - theta[2]) / theta[0]) ** (1.0 / theta[1]))
        return np.array([q]) if q <= q_hi else UNREACHABLE

    grid = np.concatenate(([0.0], np.geomspace(q_hi * 1e-12, q_hi, _SCAN_POINTS)))
    try:
        values = _eval_many(model.family, model.theta, grid[:, None])
    except DomainError:
        values = np.array([_try_eval(model, np.array([g])) for g in grid])
    finite = values[np.isfinite(values)]
    if finite.size >= 2 and finite[-1] < finite[0]:
        warnings.warn(
            "curve decreases over the inversion range; the fit may be pathological",
            NonMonotoneWarning,
            stacklevel=3,
        )
    reached = np.nonzero(values >= target)[0]
    if reached.size == 0:
        return UNREACHABLE
    first = int(reached[0])
    if first == 0:
        return np.array([0.0])
    lo, hi = grid[first - 1], grid[first]
    # Keep v(hi) >= target as the bisection invariant; converge on the size.
    while hi - lo > _BISECT_REL_TOL * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if _try_eval(model, np.array([mid])) >= target:
            hi = mid
        else:
            lo = mid
    return np.array([hi])


def _invert_multi(
    model: RegressionModel,
    target: float,
    costs: np.ndarray,
    q_hi: np.ndarray,
    seed: int,
):
    k = model.family.source_count
    per_axis = 47 if k <= 3 else 11  # keep the coarse mesh tractable at higher K
    axes = [np.concatenate(([0.0], np.geomspace(h * 1e-6, h, per_axis))) for h in q_hi]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    try:
        values = _eval_many(model.family, model.theta, points)
    except DomainError:
        values = np.array([_try_eval(model, p) for p in points])

    feasible = values >= target
    if not np.any(feasible) and _try_eval(model, q_hi) < target and values.max() < target:
        return UNREACHABLE

    if np.any(feasible):
        cost_values = points[feasible] @ costs
        best_cost = cost_values.min()
        ties = np.nonzero(cost_values <= best_cost * (1.0 + 1e-9) + 1e-30)[0]
        pick = int(ties[0]) if ties.size == 1 else int(
            ties[substream(seed, "tie-break").integers(0, ties.size)]
        )
        start = points[feasible][pick].copy()
    else:
        start = q_hi.copy()

    q = _penalty_descent(model, target, costs, q_hi, start)
    q = _coordinate_polish(model, target, q, q_hi)

    scale = max(1.0, abs(target))
    if _try_eval(model, q) < target - 1e-7 * scale:
        if np.any(feasible):
            return points[feasible][pick].copy()
        return UNREACHABLE
    return q


def _penalty_descent(
    model: RegressionModel,
    target: float,
    costs: np.ndarray,
    q_hi: np.ndarray,
    start: np.ndarray,
) -> np.ndarray:
    """Minimize costs @ q + mu * max(0, target - v(q))^2 with mu escalation."""

    def objective(q: np.ndarray, mu: float) -> float:
        deficit = max(0.0, target - _try_eval(model, q))
        return float(costs @ q) + mu * deficit * deficit

    def gradient(q: np.ndarray, mu: float) -> np.ndarray:
        deficit = target - _try_eval(model, q)
        grad = costs.copy()
        if deficit > 0:
            for j in range(q.shape[0]):
                h = 1e-6 * max(1.0, abs(q[j]))
                plus = q.copy()
                minus = q.copy()
                plus[j] = min(plus[j] + h, q_hi[j])
                minus[j] = max(minus[j] - h, 0.0)
                dv = (_try_eval(model, plus) - _try_eval(model, minus)) / max(
                    plus[j] - minus[j], 1e-300
                )
                grad[j] += -2.0 * mu * deficit * dv
        return grad

    q = start.copy()
    mu = max(1.0, float(costs @ q_hi)) / max(1.0, target * target)
    for _ in range(6):
        step = 0.05 * float(q_hi.max())
        for _ in range(120):
            g = gradient(q, mu)
            norm = float(np.linalg.norm(g))
            if norm < 1e-14:
                break
            direction = g / norm
            current = objective(q, mu)
            improved = False
            s = step
            for _ in range(40):
                trial = np.clip(q - s * direction, 0.0, q_hi)
                if objective(trial, mu) < current:
                    q = trial
                    step = s * 1.5
                    improved = True
                    break
                s *= 0.5
            if not improved:
                break
        mu *= 10.0
    return q


def _coordinate_polish(
    model: RegressionModel,
    target: float,
    q: np.ndarray,
    q_hi: np.ndarray,
) -> np.ndarray:
    """Per-coordinate bisection onto the smallest feasible sizes."""
    q = q.copy()
    for _ in range(3):
        for j in range(q.shape[0]):
            if _try_eval(model, q) < target:
                # Infeasible: push this coordinate up to feasibility if it can fix it.
                probe = q.copy()
                probe[j] = q_hi[j]
                if _try_eval(model, probe) < target:
                    continue
                lo, hi = q[j], q_hi[j]
            else:
                probe = q.copy()
                probe[j] = 0.0
                if _try_eval(model, probe) >= target:
                    q[j] = 0.0
                    continue
                lo, hi = 0.0, q[j]
            while hi - lo > _BISECT_REL_TOL * max(hi, 1.0):
                mid = 0.5 * (lo + hi)
                probe = q.copy()
                probe[j] = mid
                if _try_eval(model, probe) >= target:
                    hi = mid
                else:
                    lo = mid
            q[j] = hi
    return q
