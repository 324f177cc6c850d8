"""Comparison policies: point-estimate regression and its corrected variant.

Both baselines fit one curve to the observed statistics and invert it at the
target, with no uncertainty model. The corrected variant aims at an inflated
target ``V* + tau`` where the offset is calibrated on a reference oracle to
suppress the point estimator's habit of under-collecting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .curves import UNREACHABLE, CurveFamily, RegressionSet, fit_curve, invert_curve
from .planner import ProblemSpec, RoundContext
from .simulator import run_collection

__all__ = [
    "CalibrationImpossible",
    "CorrectedPolicy",
    "CorrectionFactor",
    "RegressionPointPolicy",
    "calibrate_tau",
    "corrected_policy",
    "regression_point_policy",
]


class CalibrationImpossible(RuntimeError):
    """No correction offset on the search grid achieves zero failures."""


@dataclass(frozen=True)
class CorrectionFactor:
    """A calibrated score offset added to the target before inversion."""

    tau: float
    calibrated_on: str

    def __post_init__(self) -> None:
        if not np.isfinite(self.tau) or self.tau < 0:
            raise ValueError(f"tau must be finite and >= 0, got {self.tau}")


def regression_point_policy(
    data: RegressionSet, target: float, costs, family: CurveFamily
):
    """Single-fit point estimate of the data requirement.

    Fits ``family`` to ``data`` with the standard fitter defaults and inverts
    the curve at ``target``, searching up to 100x the largest observed total
    size. Returns the estimated size vector, or :data:`UNREACHABLE` when the
    fitted curve never attains the target within that bound.
    """
    costs = np.atleast_1d(np.asarray(costs, dtype=float))
    model = fit_curve(family, data)
    cap = 100.0 * data.max_total_size()
    return invert_curve(model, target, costs=costs, q_max=cap)


def corrected_policy(
    data: RegressionSet, target: float, costs, family: CurveFamily, tau: float
):
    """Point estimate aimed at the inflated target ``target + tau``."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return regression_point_policy(data, target + tau, costs, family)


def _clamped_request(estimate, ctx: RoundContext) -> np.ndarray:
    if estimate is UNREACHABLE:
        # nothing the fit can promise; stay put rather than abort the run
        return ctx.current.copy()
    # whole data points, and never below what is already collected
    return np.maximum(np.ceil(np.asarray(estimate, dtype=float)), ctx.current)


@dataclass(frozen=True)
class RegressionPointPolicy:
    """Round policy wrapping :func:`regression_point_policy`."""

    family: CurveFamily
    name: str = "regression-point"

    def propose(self, ctx: RoundContext) -> np.ndarray:
        estimate = regression_point_policy(ctx.data, ctx.target, ctx.costs, self.family)
        return _clamped_request(estimate, ctx)


@dataclass(frozen=True)
class CorrectedPolicy:
    """Round policy wrapping :func:`corrected_policy` with a fixed offset."""

    family: CurveFamily
    correction: CorrectionFactor
    name: str = "regression-corrected"

    def propose(self, ctx: RoundContext) -> np.ndarray:
        estimate = corrected_policy(
            ctx.data, ctx.target, ctx.costs, self.family, self.correction.tau
        )
        return _clamped_request(estimate, ctx)


def calibrate_tau(
    oracle,
    family: CurveFamily,
    target_grid: Sequence[float],
    horizon: int,
    template: ProblemSpec,
    *,
    step: float = 0.25,
    subsample_count: int = 10,
    oracle_id: str | None = None,
) -> CorrectionFactor:
    """Smallest grid offset that meets every target on the calibration oracle.

    Sweeps ``tau`` over 0, ``step``, 2*``step``, ... and returns the first
    value for which the corrected policy meets every target in
    ``target_grid`` within ``horizon`` rounds on ``oracle``. The sweep stops
    at the oracle's headroom over the easiest target (aiming further above
    the attainable score ceiling has no interpretation as a score offset);
    exhausting it raises :class:`CalibrationImpossible`. Deterministic:
    calibration runs are noiseless and seeded identically.

    ``template`` supplies costs, penalty, and starting amount; its target and
    horizon are replaced per calibration run.
    """
    targets = [float(v) for v in target_grid]
    if not targets:
        raise ValueError("target_grid must be non-empty")
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    headroom = oracle.max_score - min(targets)
    if oracle_id is None:
        oracle_id = type(oracle).__name__.lower()
    tau = 0.0
    while tau <= headroom + 1e-12 or tau == 0.0:
        policy = CorrectedPolicy(family, CorrectionFactor(tau, oracle_id))
        met_all = True
        for target in targets:
            spec = replace(template, target=target, horizon=int(horizon))
            record = run_collection(
                spec, oracle, policy, seed=0, subsample_count=subsample_count
            )
            if not record.met_target:
                met_all = False
                break
        if met_all:
            return CorrectionFactor(tau, oracle_id)
        tau += step
    raise CalibrationImpossible(
        f"no offset in [0, {max(headroom, 0.0):g}] meets every target on {oracle_id}"
    )
