"""Probability models of the minimum data requirement.

The minimum requirement is the smallest (or cheapest) training-set size at
which the learning curve reaches the target score. Fit uncertainty makes it a
random quantity: this module bootstraps the regression set, fits and inverts
the curve per resample, and turns the resulting estimates into a density
model with analytic PDF and CDF. Single-source problems use a Gaussian-kernel
KDE; multi-source problems use a diagonal-covariance Gaussian mixture, whose
CDF factorizes per coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import ndtr

from ._rng import substream
from .curves import (
    UNREACHABLE,
    CurveFamily,
    CurveSample,
    DomainError,
    FitConfig,
    RegressionModel,
    RegressionSet,
    default_weights,
    fit_curve,
    invert_curve,
)
from .curves import _eval_many

__all__ = [
    "AllCensored",
    "BootstrapConfig",
    "RequirementDistribution",
    "bootstrap_requirements",
    "fit_kde",
    "fit_gmm",
    "pdf",
    "cdf",
    "cdf_gradient",
    "quantile",
    "marginal_quantile",
]

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))
_TAIL_SIGMAS = 40.0  # support padding; the Gaussian mass beyond is < 1e-300


class AllCensored(RuntimeError):
    """Every bootstrap resample was censored; no estimates survive.

    Widen the censoring bound, switch the censor policy, or pick a curve
    family whose range covers the target.
    """


@dataclass(frozen=True)
class BootstrapConfig:
    """Settings for bootstrap estimation of the requirement distribution."""

    family: CurveFamily
    seed: int
    resamples: int = 500
    q_cap: np.ndarray | float | None = None
    """Censoring bound per source; None means 100x the largest observed size."""

    censor_policy: Literal["drop", "cap-at-bound"] = "cap-at-bound"
    """How to treat resamples whose estimate is unreachable or whose fit did
    not converge: "drop" removes them, "cap-at-bound" keeps them clipped to
    the bound (an unreachable estimate becomes the bound itself)."""

    fit_config: FitConfig | None = None
    """Optional override of the per-resample fitter schedule."""

    warm_fit_config: FitConfig | None = None
    """Schedule for the full-data fit that seeds every resample; None means
    use ``fit_config``. Lets a sweep cap resample iterations while keeping
    the warm-start source at full depth."""

    def __post_init__(self) -> None:
        if self.resamples < 2:
            raise ValueError(f"resamples must be >= 2, got {self.resamples}")
        if self.q_cap is not None:
            cap = np.atleast_1d(np.asarray(self.q_cap, dtype=float))
            if np.any(cap <= 0):
                raise ValueError(f"q_cap must be > 0, got {self.q_cap}")
        if self.censor_policy not in ("drop", "cap-at-bound"):
            raise ValueError(f"unknown censor policy {self.censor_policy!r}")


@dataclass(eq=False)
class RequirementDistribution:
    """A fitted density model of the minimum data requirement.

    Backed either by a Gaussian-kernel KDE (``kind="kde"``, single source) or
    a diagonal-covariance Gaussian mixture (``kind="gmm"``). Instances are
    immutable by convention; internal evaluation caches are the only mutable
    state and never change observable values.
    """

    kind: Literal["kde", "gmm"]
    dimension: int
    degenerate: bool = False
    support_floor: float = 0.0
    """Conceptual lower edge of the size domain. Requirements are amounts of
    data and cannot be negative; the density itself is left untruncated, so a
    kernel near zero keeps its symmetric left tail."""

    points: np.ndarray | None = None
    bandwidth: float | None = None
    weights: np.ndarray | None = None
    means: np.ndarray | None = None
    variances: np.ndarray | None = None
    _cdf_table: tuple[np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )

    @classmethod
    def kde(
        cls, points: Sequence[float] | np.ndarray, bandwidth: float, degenerate: bool = False
    ) -> "RequirementDistribution":
        points = np.sort(np.asarray(points, dtype=float).ravel())
        if points.size < 1:
            raise ValueError("a KDE needs at least one point")
        if not bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
        return cls(
            kind="kde",
            dimension=1,
            degenerate=degenerate,
            points=points,
            bandwidth=float(bandwidth),
        )

    @classmethod
    def gmm(
        cls,
        weights: np.ndarray,
        means: np.ndarray,
        variances: np.ndarray,
        degenerate: bool = False,
    ) -> "RequirementDistribution":
        weights = np.asarray(weights, dtype=float).ravel()
        means = np.atleast_2d(np.asarray(means, dtype=float))
        variances = np.atleast_2d(np.asarray(variances, dtype=float))
        if means.shape != variances.shape or means.shape[0] != weights.size:
            raise ValueError("component shapes disagree")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(variances <= 0):
            raise ValueError("variances must be positive")
        return cls(
            kind="gmm",
            dimension=means.shape[1],
            degenerate=degenerate,
            weights=weights,
            means=means,
            variances=variances,
        )

    @property
    def support_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate bounds beyond which the CDF is numerically 0 or 1."""
        if self.kind == "kde":
            pad = _TAIL_SIGMAS * self.bandwidth
            return (
                np.array([self.points.min() - pad]),
                np.array([self.points.max() + pad]),
            )
        sigma = np.sqrt(self.variances)
        lo = (self.means - _TAIL_SIGMAS * sigma).min(axis=0)
        hi = (self.means + _TAIL_SIGMAS * sigma).max(axis=0)
        return lo, hi


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def bootstrap_requirements(
    data: RegressionSet,
    target: float,
    costs: np.ndarray | Sequence[float],
    cfg: BootstrapConfig,
) -> list[np.ndarray]:
    """Bootstrap the regression set into requirement estimates.

    Each of the ``cfg.resamples`` iterations resamples the set with
    replacement on its own RNG substream, refits the curve family, and
    inverts the fit at ``target``. Estimates censored by ``cfg.censor_policy``
    are dropped or capped; survivors are returned in iteration order. The
    output is identical for a fixed seed no matter how the loop is executed.

    Each resample's fit warm-starts at the full-data estimate, so a resample
    of a self-consistent set reproduces the same curve instead of wandering
    into a spurious local minimum; when the warm fit leaves real residual the
    default initialization is tried too and the lower-loss fit wins.

    Raises:
        AllCensored: every resample was censored.
    """
    n = len(data)
    k = data.source_count
    costs = np.broadcast_to(np.atleast_1d(np.asarray(costs, dtype=float)), (k,))
    if cfg.q_cap is None:
        cap = np.full(k, 100.0 * data.max_total_size())
    else:
        cap = np.broadcast_to(np.atleast_1d(np.asarray(cfg.q_cap, dtype=float)), (k,)).copy()
    fit_config = cfg.fit_config or FitConfig()
    warm_config = cfg.warm_fit_config or fit_config
    warm_init = fit_curve(cfg.family, data, config=warm_config).theta

    estimates: list[np.ndarray] = []
    for b in range(cfg.resamples):
        rng = substream(cfg.seed, "bootstrap", b)
        indices = rng.integers(0, n, size=n)
        resampled = RegressionSet(
            tuple(
                CurveSample(data.samples[i].sizes, data.samples[i].score) for i in indices
            ),
            k,
        )
        model = fit_curve(cfg.family, resampled, init=warm_init, config=fit_config)
        loss = _weighted_loss(model, resampled)
        scores = resampled.score_vector()
        if loss > 1e-12 * max(1.0, float(scores @ scores)):
            alternate = fit_curve(cfg.family, resampled, config=fit_config)
            if _weighted_loss(alternate, resampled) < loss:
                model = alternate
        estimate = invert_curve(model, target, costs=costs, q_max=cap, seed=cfg.seed)
        censored = (estimate is UNREACHABLE) or (not model.converged)
        if censored:
            if cfg.censor_policy == "drop":
                continue
            estimate = cap.copy() if estimate is UNREACHABLE else np.minimum(estimate, cap)
        estimates.append(np.asarray(estimate, dtype=float))
    if not estimates:
        raise AllCensored(
            f"all {cfg.resamples} bootstrap resamples were censored at target {target}"
        )
    return estimates


def _weighted_loss(model: RegressionModel, data: RegressionSet) -> float:
    try:
        residual = data.score_vector() - _eval_many(model.family, model.theta, data.size_matrix())
    except DomainError:
        return np.inf
    with np.errstate(over="ignore"):
        loss = float(default_weights(data) @ (residual * residual))
    return loss if np.isfinite(loss) else np.inf


# ---------------------------------------------------------------------------
# KDE
# ---------------------------------------------------------------------------


def fit_kde(
    estimates: Sequence[float] | np.ndarray,
    bandwidth_grid: Sequence[float] | np.ndarray,
) -> RequirementDistribution:
    """Fit a Gaussian-kernel KDE, selecting the bandwidth from a grid.

    The bandwidth maximizes the leave-one-out log-likelihood of the
    estimates; ties resolve toward the smaller bandwidth. Identical
    estimates cannot be cross-validated, so they yield a distribution
    flagged ``degenerate`` centered on the common value with the smallest
    grid bandwidth.
    """
    points = np.asarray(estimates, dtype=float).ravel()
    if points.size < 2:
        raise ValueError(f"need at least 2 estimates, got {points.size}")
    grid = np.sort(np.asarray(bandwidth_grid, dtype=float).ravel())
    if grid.size == 0 or np.any(grid <= 0):
        raise ValueError("bandwidth grid must be non-empty and positive")

    if np.all(points == points[0]):
        return RequirementDistribution.kde(points, grid[0], degenerate=True)

    best_h = None
    best_ll = -np.inf
    for h in grid:
        ll = _loo_log_likelihood(points, float(h))
        if ll > best_ll:
            best_h, best_ll = float(h), ll
    if best_h is None or not np.isfinite(best_ll):
        # every grid bandwidth leaves some point with zero leave-one-out
        # density; fall back to the largest, which smooths the most
        best_h = float(grid[-1])
    return RequirementDistribution.kde(points, best_h)


def _loo_log_likelihood(points: np.ndarray, h: float) -> float:
    n = points.size
    total = 0.0
    chunk = max(1, min(n, 8_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        block = points[start : start + chunk, None] - points[None, :]
        kernel = np.exp(-0.5 * (block / h) ** 2) / (h * _SQRT_2PI)
        sums = kernel.sum(axis=1) - 1.0 / (h * _SQRT_2PI)  # remove self term
        loo = sums / (n - 1)
        if np.any(loo <= 0.0):
            return -np.inf
        total += float(np.log(loo).sum())
    return total


# ---------------------------------------------------------------------------
# GMM
# ---------------------------------------------------------------------------


def fit_gmm(
    estimates: np.ndarray | Sequence[Sequence[float]],
    component_grid: Sequence[int],
    seed: int,
) -> RequirementDistribution:
    """Fit a diagonal-covariance Gaussian mixture by EM with BIC selection.

    Each candidate component count from the grid is fit with a k-means++
    initialization drawn from ``seed`` followed by at most 100 EM iterations
    (stopping early when the log-likelihood stalls below 1e-8 relative); the
    count with the lowest Bayesian information criterion wins, ties going to
    the smaller count. Deterministic for a fixed seed.
    """
    data = np.atleast_2d(np.asarray(estimates, dtype=float))
    n, k = data.shape
    counts = sorted(set(int(m) for m in component_grid))
    if not counts or counts[0] < 1 or counts[-1] > 10:
        raise ValueError(f"component grid must lie within [1, 10], got {component_grid}")
    if n < counts[-1]:
        raise ValueError(f"need at least {counts[-1]} estimates, got {n}")

    if np.all(data == data[0]):
        mean = data[0]
        sigma = np.maximum(1e-9, 1e-6 * np.maximum(1.0, np.abs(mean)))
        return RequirementDistribution.gmm(
            np.array([1.0]), mean[None, :], (sigma**2)[None, :], degenerate=True
        )

    spread = data.max(axis=0) - data.min(axis=0)
    var_floor = np.maximum((1e-6 * np.maximum(spread, 1.0)) ** 2, 1e-12)

    best = None
    best_bic = np.inf
    for m in counts:
        rng = substream(seed, "gmm-init", m)
        weights, means, variances, ll = _fit_gmm_em(data, m, rng, var_floor)
        n_params = (m - 1) + 2 * m * k
        bic = -2.0 * ll + n_params * np.log(n)
        if bic < best_bic:
            best = (weights, means, variances)
            best_bic = bic
    weights, means, variances = best
    return RequirementDistribution.gmm(weights, means, variances)


def _kmeanspp_centers(data: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = [data[int(rng.integers(0, n))]]
    for _ in range(1, m):
        d2 = np.min(
            [np.sum((data - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(data[idx])
    return np.stack(centers)


def _fit_gmm_em(
    data: np.ndarray, m: int, rng: np.random.Generator, var_floor: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    n, k = data.shape
    centers = _kmeanspp_centers(data, m, rng)

    # hard-assign for initial parameters; reseed empty clusters at the point
    # farthest from its center, deterministically
    d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    for comp in range(m):
        if not np.any(labels == comp):
            labels[int(d2.min(axis=1).argmax())] = comp

    weights = np.array([(labels == comp).mean() for comp in range(m)])
    weights = np.maximum(weights, 1e-9)
    weights /= weights.sum()
    means = np.stack(
        [
            data[labels == comp].mean(axis=0) if np.any(labels == comp) else centers[comp]
            for comp in range(m)
        ]
    )
    variances = np.stack(
        [
            np.maximum(
                data[labels == comp].var(axis=0) if np.any(labels == comp) else var_floor,
                var_floor,
            )
            for comp in range(m)
        ]
    )

    log_likelihood = -np.inf
    for _ in range(100):
        # E-step in log space
        log_prob = (
            np.log(weights)[None, :]
            - 0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)[None, :]
            - 0.5
            * np.sum(
                (data[:, None, :] - means[None, :, :]) ** 2 / variances[None, :, :], axis=2
            )
        )
        log_norm = _logsumexp(log_prob)
        new_ll = float(log_norm.sum())
        resp = np.exp(log_prob - log_norm[:, None])

        # M-step
        mass = resp.sum(axis=0)
        mass = np.maximum(mass, 1e-12)
        weights = mass / mass.sum()
        means = (resp.T @ data) / mass[:, None]
        centered2 = (data[:, None, :] - means[None, :, :]) ** 2
        variances = np.maximum(
            np.einsum("nm,nmk->mk", resp, centered2) / mass[:, None], var_floor[None, :]
        )

        if abs(new_ll - log_likelihood) <= 1e-8 * (1.0 + abs(new_ll)):
            log_likelihood = new_ll
            break
        log_likelihood = new_ll

    return weights, means, variances, log_likelihood


def _logsumexp(log_prob: np.ndarray) -> np.ndarray:
    top = log_prob.max(axis=1)
    return top + np.log(np.exp(log_prob - top[:, None]).sum(axis=1))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _as_point(dist: RequirementDistribution, q) -> np.ndarray:
    q_vec = np.atleast_1d(np.asarray(q, dtype=float))
    if q_vec.shape != (dist.dimension,):
        raise ValueError(f"point has shape {q_vec.shape}, expected ({dist.dimension},)")
    return q_vec


def pdf(dist: RequirementDistribution, q) -> float:
    """Exact density of the fitted model at ``q``."""
    q_vec = _as_point(dist, q)
    if dist.kind == "kde":
        z = (q_vec[0] - dist.points) / dist.bandwidth
        return float(np.exp(-0.5 * z * z).sum() / (dist.points.size * dist.bandwidth * _SQRT_2PI))
    sigma = np.sqrt(dist.variances)
    z = (q_vec[None, :] - dist.means) / sigma
    comp = np.exp(-0.5 * np.sum(z * z, axis=1)) / np.prod(sigma * _SQRT_2PI, axis=1)
    return float(dist.weights @ comp)


def cdf(dist: RequirementDistribution, q) -> float:
    """Exact cumulative probability of the fitted model at ``q``.

    For the KDE this is the error-function form of the Gaussian-kernel
    integral; for the diagonal mixture the per-coordinate Gaussian CDFs
    multiply within each component. Clamped to [0, 1].
    """
    q_vec = _as_point(dist, q)
    if dist.kind == "kde":
        value = float(ndtr((q_vec[0] - dist.points) / dist.bandwidth).mean())
    else:
        sigma = np.sqrt(dist.variances)
        factors = ndtr((q_vec[None, :] - dist.means) / sigma)
        value = float(dist.weights @ np.prod(factors, axis=1))
    return min(1.0, max(0.0, value))


def cdf_gradient(dist: RequirementDistribution, q) -> np.ndarray:
    """Analytic gradient of :func:`cdf` with respect to each coordinate."""
    q_vec = _as_point(dist, q)
    if dist.kind == "kde":
        return np.array([pdf(dist, q_vec)])
    sigma = np.sqrt(dist.variances)
    z = (q_vec[None, :] - dist.means) / sigma
    factors = ndtr(z)  # (m, K)
    densities = np.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)  # (m, K)
    grad = np.empty(dist.dimension)
    for axis in range(dist.dimension):
        others = np.prod(np.delete(factors, axis, axis=1), axis=1)
        grad[axis] = float(dist.weights @ (densities[:, axis] * others))
    return grad


def _pdf_values(dist: RequirementDistribution, qs: np.ndarray) -> np.ndarray:
    """Vectorized single-source pdf over many scalar points."""
    if dist.kind == "kde":
        out = np.empty(qs.size)
        chunk = max(1, min(qs.size, 8_000_000 // max(dist.points.size, 1)))
        h = dist.bandwidth
        for start in range(0, qs.size, chunk):
            z = (qs[start : start + chunk, None] - dist.points[None, :]) / h
            out[start : start + chunk] = np.exp(-0.5 * z * z).mean(axis=1) / (h * _SQRT_2PI)
        return out
    sigma = np.sqrt(dist.variances[:, 0])
    z = (qs[:, None] - dist.means[None, :, 0]) / sigma[None, :]
    comp = np.exp(-0.5 * z * z) / (sigma[None, :] * _SQRT_2PI)
    return comp @ dist.weights


def _cdf_values(dist: RequirementDistribution, qs: np.ndarray) -> np.ndarray:
    """Vectorized single-source cdf over many scalar points."""
    if dist.kind == "kde":
        out = np.empty(qs.size)
        chunk = max(1, min(qs.size, 8_000_000 // max(dist.points.size, 1)))
        for start in range(0, qs.size, chunk):
            block = qs[start : start + chunk, None] - dist.points[None, :]
            out[start : start + chunk] = ndtr(block / dist.bandwidth).mean(axis=1)
        return np.clip(out, 0.0, 1.0)
    sigma = np.sqrt(dist.variances[:, 0])
    factors = ndtr((qs[:, None] - dist.means[None, :, 0]) / sigma[None, :])
    return np.clip(factors @ dist.weights, 0.0, 1.0)


def cumulative_table(dist: RequirementDistribution, size: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """A cached monotone (sizes, cdf) table spanning the support (K=1 only).

    Built lazily on first use; the exact cdf is evaluated at a fixed grid.
    Useful for fast approximate quantiles and for bracketing exact ones.
    """
    if dist.dimension != 1:
        raise ValueError("cumulative tables apply to single-source distributions only")
    if dist._cdf_table is None:
        lo, hi = dist.support_bounds
        qs = np.linspace(float(lo[0]), float(hi[0]), size)
        dist._cdf_table = (qs, _cdf_values(dist, qs))
    return dist._cdf_table


def quantile(dist: RequirementDistribution, p: float) -> float:
    """Smallest q with cdf(q) >= p, by bisection (single-source only).

    The returned size satisfies cdf(result) within [p - 1e-9, p + 1e-6].
    """
    if dist.dimension != 1:
        raise ValueError("quantile applies to single-source distributions only")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    qs, fs = cumulative_table(dist)
    idx = int(np.searchsorted(fs, p, side="left"))
    if idx == 0:
        lo, hi = float(qs[0]) - 1.0, float(qs[0])
        while cdf(dist, hi) < p:  # pragma: no cover - table already spans support
            lo, hi = hi, hi + (hi - lo) * 2.0
    elif idx >= qs.size:
        lo, hi = float(qs[-1]), float(qs[-1]) + 1.0
        while cdf(dist, hi) < p:
            span = hi - lo
            lo, hi = hi, hi + span * 2.0
    else:
        lo, hi = float(qs[idx - 1]), float(qs[idx])
    scale = max(1.0, abs(lo), abs(hi))
    # keep halving past the size tolerance while the cdf side is not yet
    # within its own tolerance (steep cdf), down to float resolution
    while hi - lo > 1e-9 * scale or cdf(dist, hi) > p + 1e-6:
        if hi - lo <= 4.0 * np.spacing(scale):
            break
        mid = 0.5 * (lo + hi)
        if cdf(dist, mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def quantile_sketch(dist: RequirementDistribution, p: float | np.ndarray) -> np.ndarray:
    """Fast approximate quantiles via the cached cdf table (single-source)."""
    qs, fs = cumulative_table(dist)
    fs_monotone = np.maximum.accumulate(fs)
    return np.interp(np.asarray(p, dtype=float), fs_monotone, qs)


def marginal_quantile(dist: RequirementDistribution, p: float, axis: int = 0) -> float:
    """Quantile of one coordinate's marginal distribution."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if dist.dimension == 1:
        return quantile(dist, p)
    if not 0 <= axis < dist.dimension:
        raise ValueError(f"axis {axis} out of range for dimension {dist.dimension}")
    sigma = np.sqrt(dist.variances[:, axis])
    mu = dist.means[:, axis]

    def marginal_cdf(x: float) -> float:
        return float(dist.weights @ ndtr((x - mu) / sigma))

    lo = float((mu - _TAIL_SIGMAS * sigma).min())
    hi = float((mu + _TAIL_SIGMAS * sigma).max())
    scale = max(1.0, abs(lo), abs(hi))
    while hi - lo > 1e-9 * scale:
        mid = 0.5 * (lo + hi)
        if marginal_cdf(mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def sample(dist: RequirementDistribution, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` requirement samples from the fitted model.

    Returns an array of shape (count,) for single-source distributions and
    (count, K) otherwise.
    """
    if dist.kind == "kde":
        picks = rng.integers(0, dist.points.size, size=count)
        return dist.points[picks] + dist.bandwidth * rng.standard_normal(count)
    comp = rng.choice(dist.weights.size, size=count, p=dist.weights)
    noise = rng.standard_normal((count, dist.dimension))
    return dist.means[comp] + np.sqrt(dist.variances[comp]) * noise
