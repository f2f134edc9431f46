"""SES-achievement gradient, correction-strength calibration, and feasibility.

The gradient (least-squares slope of merit on raw SES) anchors how strong a
correction is relative to the measured SES effect: an alpha's maximum lift is
alpha / 2, reported as a fraction of the gradient per SES standard deviation.
Capacity and budget never alter selection; they only bound which alpha values
an operator may adopt ex ante.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .correction import CorrectionPolicy
from .dataset import Cohort
from .selection import merit_threshold, select
from .ses_index import QUARTILES, SesIndexedCohort


@dataclass(frozen=True)
class GradientEstimate:
    """Least-squares slope of merit on raw SES, with fit quality and scale."""

    beta_gradient: float
    intercept: float
    r_squared: float
    sigma_escs: float
    delta_per_sd: float
    n: int
    include_intercept: bool = True


def ses_gradient(cohort: Cohort, include_intercept: bool = True) -> GradientEstimate:
    """Regress merit on raw SES (ordinary least squares).

    The intercept is included by default because the slope is interpreted per
    SES unit on a sample whose SES mean is not zero; ``include_intercept=False``
    fits through the origin (R-squared then uses uncentered total variation).
    ``sigma_escs`` is the sample standard deviation (ddof=1) of the cleaned SES.
    """
    x = cohort.escs()
    y = cohort.merits()
    n = len(x)
    if n < 3:
        raise ValueError(f"gradient estimation needs at least 3 records, got {n}")
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate SES variance: all values identical")
    if include_intercept:
        beta = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
        intercept = float(y.mean() - beta * x.mean())
        resid = y - (intercept + beta * x)
        sst = float(np.sum((y - y.mean()) ** 2))
    else:
        beta = float(np.sum(x * y) / np.sum(x * x))
        intercept = 0.0
        resid = y - beta * x
        sst = float(np.sum(y**2))
    r2 = 0.0 if sst == 0.0 else 1.0 - float(np.sum(resid**2)) / sst
    sigma = float(np.std(x, ddof=1))
    return GradientEstimate(beta_gradient=beta, intercept=intercept, r_squared=r2,
                            sigma_escs=sigma, delta_per_sd=beta * sigma, n=n,
                            include_intercept=include_intercept)


@dataclass(frozen=True)
class CalibrationRow:
    """One alpha: its maximum correction and share of the SES effect it offsets."""

    alpha: float
    max_correction: float
    fraction_of_ses_effect: float
    percent_of_ses_effect: int


def calibration_table(alphas: Sequence[float],
                      gradient: GradientEstimate) -> tuple[CalibrationRow, ...]:
    """Tabulate max correction (alpha / 2) against the per-SD achievement gap.

    The percent column is the exact ratio rounded to the nearest whole percent
    (half away from zero).
    """
    if gradient.delta_per_sd <= 0:
        raise ValueError("gradient delta_per_sd must be positive to calibrate")
    rows = []
    for alpha in alphas:
        max_c = 0.5 * alpha
        frac = max_c / gradient.delta_per_sd
        rows.append(CalibrationRow(alpha=float(alpha), max_correction=max_c,
                                   fraction_of_ses_effect=frac,
                                   percent_of_ses_effect=int(math.floor(100 * frac + 0.5))))
    return tuple(rows)


@dataclass(frozen=True)
class SupportBand:
    """Per-student subsidy announced for an alpha range (inclusive bounds)."""

    alpha_lo: float
    alpha_hi: float
    per_student_subsidy: float


@dataclass(frozen=True)
class FeasibilityBounds:
    """Capacity and budget envelope inside which an alpha may be adopted."""

    capacity_seats: int
    budget_total: float
    per_student_cost: float
    support_schedule: tuple[SupportBand, ...] = ()

    def __post_init__(self) -> None:
        if self.capacity_seats < 0 or self.budget_total < 0 or self.per_student_cost < 0:
            raise ValueError("feasibility quantities must be >= 0")


@dataclass(frozen=True)
class CurvePoint:
    alpha: float
    n_conditional: int
    mean_c: float | None
    quartile_shares: dict[str, float]
    projected_cost: float | None


def tradeoff_curve(cohort: SesIndexedCohort, alpha_grid: Sequence[float],
                   top_fraction: float = 0.10,
                   bounds: FeasibilityBounds | None = None,
                   rounding: str = "half_away_from_zero") -> tuple[CurvePoint, ...]:
    """Run selection across an alpha grid and summarize each point.

    The threshold is computed once from raw scores; only the conditional set
    varies with alpha. Points are emitted in ascending alpha order.
    """
    if not alpha_grid:
        raise ValueError("alpha grid must be non-empty")
    threshold = merit_threshold(cohort, top_fraction, rounding=rounding)
    points = []
    for alpha in sorted(float(a) for a in alpha_grid):
        outcome = select(cohort, threshold, CorrectionPolicy(alpha=alpha))
        cs = [a.c for a in outcome.conditional]
        mean_c = float(np.mean(cs)) if cs else None
        cost = None
        if bounds is not None:
            cost = outcome.n_conditional * bounds.per_student_cost
        points.append(CurvePoint(alpha=alpha, n_conditional=outcome.n_conditional,
                                 mean_c=mean_c,
                                 quartile_shares=dict(outcome.quartile_composition),
                                 projected_cost=cost))
    return tuple(points)


def feasible_alpha(curve: Sequence[CurvePoint],
                   bounds: FeasibilityBounds) -> tuple[float, ...]:
    """Alphas whose projected admits fit both capacity and budget.

    A pure predicate over the curve; it never modifies selection, and an empty
    admissible set is a valid, reported result.
    """
    admissible = []
    for point in curve:
        if point.n_conditional > bounds.capacity_seats:
            continue
        if point.n_conditional * bounds.per_student_cost > bounds.budget_total:
            continue
        admissible.append(point.alpha)
    return tuple(admissible)


def linear_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line fit: returns (slope, intercept, r_squared)."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if len(xa) < 2:
        raise ValueError("need at least two points to fit a line")
    sxx = float(np.sum((xa - xa.mean()) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate x variance")
    slope = float(np.sum((xa - xa.mean()) * (ya - ya.mean())) / sxx)
    intercept = float(ya.mean() - slope * xa.mean())
    sst = float(np.sum((ya - ya.mean()) ** 2))
    if sst == 0.0:
        return slope, intercept, 1.0
    ssr = float(np.sum((ya - (intercept + slope * xa)) ** 2))
    return slope, intercept, 1.0 - ssr / sst


def curve_rows(curve: Sequence[CurvePoint]) -> list[dict]:
    """JSON/CSV-ready rows for a trade-off curve."""
    rows = []
    for p in curve:
        row = {"alpha": p.alpha, "n_conditional": p.n_conditional,
               "mean_c": p.mean_c, "projected_cost": p.projected_cost}
        for q in QUARTILES:
            row[f"share_{q.lower()}"] = p.quartile_shares.get(q, 0.0)
        rows.append(row)
    return rows
