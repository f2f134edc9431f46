"""The SES-based linear correction rule and the optional emergency adjustment.

A correction lifts a raw score by alpha times the applicant's distance below
the distribution center mu, clamped at zero: c = max(alpha * (mu - s), 0).
Corrections exist only to assess eligibility for additional seats; they never
touch regular admission.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import IO, Mapping

import numpy as np

from .dataset import DataError
from .ses_index import SesIndexedCohort


class SunsetViolationError(Exception):
    """Emergency adjustment invoked outside its pre-announced cycle."""


@dataclass(frozen=True)
class CorrectionPolicy:
    """Correction strength alpha (score points per unit SES gap) and center mu."""

    alpha: float
    mu: float = 0.5
    clamp_nonnegative: bool = True

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")


@dataclass(frozen=True)
class CorrectionResult:
    c: float
    m_star: float


@dataclass(frozen=True)
class EmergencyPolicy:
    """Additive, sunset-bound adjustment c + beta_e * e for cohort-level disruptions.

    ``beta_e`` is named to avoid collision with the regression slope of the
    SES-achievement gradient. Indicator values are bounded administrative
    signals in [0, 1], keyed by applicant id.
    """

    beta_e: float
    indicator: Mapping[str, float]
    sunset_cycle: str

    def __post_init__(self) -> None:
        if self.beta_e < 0:
            raise ValueError(f"beta_e must be >= 0, got {self.beta_e}")
        bad = {k: v for k, v in self.indicator.items() if not (0.0 <= v <= 1.0)}
        if bad:
            raise ValueError(f"indicator values outside [0, 1]: {sorted(bad)[:5]}")


def apply_correction(s: float, merit: float, policy: CorrectionPolicy) -> CorrectionResult:
    """Correct one score: c = max(alpha * (mu - s), 0), corrected = merit + c."""
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"s must lie in [0, 1], got {s}")
    c = policy.alpha * (policy.mu - s)
    if policy.clamp_nonnegative:
        c = max(c, 0.0)
    return CorrectionResult(c=c, m_star=merit + c)


def correction_values(s: np.ndarray, policy: CorrectionPolicy) -> np.ndarray:
    """Vectorized correction amounts for an array of SES indices."""
    c = policy.alpha * (policy.mu - np.asarray(s, dtype=float))
    if policy.clamp_nonnegative:
        c = np.maximum(c, 0.0)
    return c


def apply_emergency(base: CorrectionResult, e: float, policy: EmergencyPolicy,
                    cycle: str) -> CorrectionResult:
    """Add the emergency term beta_e * e to an existing correction.

    Raises :class:`SunsetViolationError` when invoked for any cycle other than
    the policy's pre-announced sunset cycle; the module deactivates itself
    rather than carrying over.
    """
    if cycle != policy.sunset_cycle:
        raise SunsetViolationError(
            f"emergency module is bound to cycle {policy.sunset_cycle!r}, "
            f"invoked for {cycle!r}")
    if not (0.0 <= e <= 1.0):
        raise ValueError(f"emergency indicator must lie in [0, 1], got {e}")
    bump = policy.beta_e * e
    return CorrectionResult(c=base.c + bump, m_star=base.m_star + bump)


def eligibility_boundary(policy: CorrectionPolicy, cohort: SesIndexedCohort) -> float:
    """Fraction of the indexed cohort strictly below the center mu (eligible for c > 0)."""
    s = cohort.s_values()
    if len(s) == 0:
        return 0.0
    return float(np.count_nonzero(s < policy.mu) / len(s))


def emergency_from_csv(source: str | os.PathLike | IO[str], beta_e: float) -> EmergencyPolicy:
    """Load an emergency indicator file: header ``id,e_value,cycle``.

    Every row must name the same cycle, which becomes the policy's sunset cycle.
    """
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "<stream>")
    else:
        try:
            with open(source, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"unreadable emergency file {source!r}: {exc}") from exc
        name = str(source)
    lines = [ln.rstrip("\r\n") for ln in io.StringIO(text) if ln.strip()]
    if not lines or [c.strip() for c in lines[0].split(",")] != ["id", "e_value", "cycle"]:
        raise DataError(f"{name}: expected header 'id,e_value,cycle'")
    indicator: dict[str, float] = {}
    cycles: set[str] = set()
    for i, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{name}:{i}: expected 3 fields, got {len(parts)}")
        rid, value, cycle = (p.strip() for p in parts)
        try:
            indicator[rid] = float(value)
        except ValueError:
            raise DataError(f"{name}:{i}: non-numeric e_value {value!r}")
        cycles.add(cycle)
    if not indicator:
        raise DataError(f"{name}: no indicator rows")
    if len(cycles) != 1:
        raise DataError(f"{name}: rows span multiple cycles {sorted(cycles)}")
    return EmergencyPolicy(beta_e=beta_e, indicator=indicator,
                           sunset_cycle=cycles.pop())
