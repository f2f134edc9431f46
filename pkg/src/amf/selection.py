"""Order-statistic merit threshold, dual selection, and vacancy fill.

Regular admission is decided by raw score alone: everyone at or above the
k-th largest raw score is admitted, ties included. Corrected scores are
consulted only to identify additional, non-displacing conditional admits, so
the regular set is invariant in the correction strength by construction.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from ._canonical import digest_of
from .correction import CorrectionPolicy, EmergencyPolicy, SunsetViolationError, correction_values
from .dataset import Cohort
from .ses_index import QUARTILES, SesIndexedCohort

K_ROUNDINGS = ("half_away_from_zero", "floor", "ceil")


def _round_count(x: float, rounding: str) -> int:
    if rounding == "half_away_from_zero":
        return int(math.floor(x + 0.5))
    if rounding == "floor":
        return int(math.floor(x))
    if rounding == "ceil":
        return int(math.ceil(x))
    raise ValueError(f"unknown k rounding {rounding!r}; expected one of {K_ROUNDINGS}")


@dataclass(frozen=True)
class ThresholdSpec:
    """Top-fraction threshold: t is the k-th largest raw merit score."""

    top_fraction: float
    k: int
    t: float
    n: int
    score_digest: str


@dataclass(frozen=True)
class ConditionalAdmit:
    """One additional admit: below the threshold raw, at or above it corrected."""

    id: str
    c: float
    m_star: float
    delta: float  # raw distance t - merit, > 0
    gap: float    # corrected exceedance m_star - t, >= 0
    s: float
    quartile: str


@dataclass(frozen=True)
class SelectionOutcome:
    threshold: ThresholdSpec
    regular: frozenset[str]
    conditional: tuple[ConditionalAdmit, ...]
    quartile_composition: dict[str, float]
    alpha: float

    @property
    def n_regular(self) -> int:
        return len(self.regular)

    @property
    def n_conditional(self) -> int:
        return len(self.conditional)

    def conditional_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.conditional)

    def admitted_ids(self) -> frozenset[str]:
        return self.regular | set(self.conditional_ids())

    def canonical_form(self) -> dict:
        return {
            "threshold": {"top_fraction": self.threshold.top_fraction,
                          "k": self.threshold.k, "t": self.threshold.t,
                          "n": self.threshold.n,
                          "score_digest": self.threshold.score_digest},
            "alpha": self.alpha,
            "regular": sorted(self.regular),
            "conditional": [[a.id, a.c, a.m_star, a.delta, a.gap, a.s, a.quartile]
                            for a in self.conditional],
            "quartile_composition": self.quartile_composition,
        }

    def digest(self) -> str:
        return digest_of(self.canonical_form())


def merit_threshold(cohort: Cohort | SesIndexedCohort, top_fraction: float,
                    rounding: str = "half_away_from_zero") -> ThresholdSpec:
    """Compute the raw-score threshold for the given top fraction.

    k rounds half away from zero by default (0.10 * 6377 -> 638); ties at the
    threshold are included in the regular set downstream, which may therefore
    exceed k.
    """
    if not (0.0 < top_fraction < 1.0):
        raise ValueError(f"top_fraction must lie in (0, 1), got {top_fraction}")
    merits = cohort.merits()
    n = len(merits)
    if n == 0:
        raise ValueError("cannot compute a threshold for an empty cohort")
    k = _round_count(top_fraction * n, rounding)
    if k < 1 or k > n:
        raise ValueError(f"k = {k} out of range for cohort of {n}")
    t = float(np.partition(merits, n - k)[n - k])
    return ThresholdSpec(top_fraction=top_fraction, k=k, t=t, n=n,
                         score_digest=cohort.score_digest())


def select(cohort: SesIndexedCohort, threshold: ThresholdSpec,
           policy: CorrectionPolicy, emergency: EmergencyPolicy | None = None,
           cycle: str | None = None) -> SelectionOutcome:
    """Partition a cohort into regular and conditional admits.

    Regular: raw merit >= t, independent of every correction setting.
    Conditional: opted in, raw merit < t, corrected merit >= t. Corrections
    (and the emergency term, when active) apply only to opted-in records.
    """
    if threshold.score_digest != cohort.score_digest():
        raise ValueError("threshold/cohort mismatch: threshold was computed "
                         "from a different record set")
    if not policy.clamp_nonnegative:
        raise ValueError("selection requires the clamped correction rule; "
                         "unclamped corrections are a diagnostics-only mode")
    if emergency is not None:
        if cycle is None or cycle != emergency.sunset_cycle:
            raise SunsetViolationError(
                f"emergency module is bound to cycle {emergency.sunset_cycle!r}, "
                f"invoked for {cycle!r}")

    merits = cohort.merits()
    s = cohort.s_values()
    optin = cohort.pre_optins()

    c = correction_values(s, policy)
    if emergency is not None:
        bump = np.array([emergency.indicator.get(ir.record.id, 0.0)
                         for ir in cohort.records], dtype=float)
        c = c + emergency.beta_e * bump
    c = np.where(optin, c, 0.0)
    m_star = merits + c

    regular_mask = merits >= threshold.t
    conditional_mask = optin & ~regular_mask & (m_star >= threshold.t)

    conditional = tuple(
        ConditionalAdmit(id=ir.record.id, c=float(c[i]), m_star=float(m_star[i]),
                         delta=float(threshold.t - merits[i]),
                         gap=float(m_star[i] - threshold.t),
                         s=float(s[i]), quartile=ir.quartile)
        for i, ir in enumerate(cohort.records) if conditional_mask[i])

    n_cond = len(conditional)
    composition = {q: 0.0 for q in QUARTILES}
    for admit in conditional:
        composition[admit.quartile] += 1.0
    if n_cond:
        composition = {q: count / n_cond for q, count in composition.items()}

    regular = frozenset(ir.record.id for i, ir in enumerate(cohort.records)
                        if regular_mask[i])
    return SelectionOutcome(threshold=threshold, regular=regular,
                            conditional=conditional,
                            quartile_composition=composition, alpha=policy.alpha)


def initial_ranking(cohort: SesIndexedCohort, policy: CorrectionPolicy,
                    emergency: EmergencyPolicy | None = None,
                    cycle: str | None = None) -> tuple[str, ...]:
    """Complete corrected-then-raw ordering of all ids, frozen for vacancy fill.

    Sort key: corrected score descending, raw score descending, id ascending.
    Records without pre-opt-in rank by raw score alone (their correction is 0).
    """
    if emergency is not None and (cycle is None or cycle != emergency.sunset_cycle):
        raise SunsetViolationError(
            f"emergency module is bound to cycle {emergency.sunset_cycle!r}, "
            f"invoked for {cycle!r}")
    merits = cohort.merits()
    c = correction_values(cohort.s_values(), policy)
    if emergency is not None:
        bump = np.array([emergency.indicator.get(ir.record.id, 0.0)
                         for ir in cohort.records], dtype=float)
        c = c + emergency.beta_e * bump
    c = np.where(cohort.pre_optins(), c, 0.0)
    m_star = merits + c
    order = sorted(range(len(cohort.records)),
                   key=lambda i: (-m_star[i], -merits[i], cohort.records[i].record.id))
    return tuple(cohort.records[i].record.id for i in order)


@dataclass(frozen=True)
class CapacityEvent:
    """A withdrawal (frees one seat) or an added seat."""

    kind: str  # "withdraw" or "add_seat"
    id: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("withdraw", "add_seat"):
            raise ValueError(f"unknown capacity event kind {self.kind!r}")
        if self.kind == "withdraw" and not self.id:
            raise ValueError("withdraw event requires an id")


@dataclass(frozen=True)
class VacancyLedger:
    capacity_events: tuple[CapacityEvent, ...]
    offers_made: tuple[str, ...]


def vacancy_fill(outcome: SelectionOutcome, full_ranking: Sequence[str],
                 events: Sequence[CapacityEvent],
                 prior: VacancyLedger | None = None) -> VacancyLedger:
    """Offer vacated or added seats down the frozen initial ranking.

    The ranking is never recomputed, so any interleaving of single withdrawals
    and batches yields the same offer list (path independence). Pass ``prior``
    to continue an existing ledger with further events. Offers stop silently
    when the ranking is exhausted.
    """
    ranking = tuple(full_ranking)
    known = set(ranking)
    admitted = set(outcome.admitted_ids())
    prior_events = prior.capacity_events if prior is not None else ()
    offered: list[str] = list(prior.offers_made) if prior is not None else []
    offered_set = set(offered)
    withdrawn = {e.id for e in prior_events if e.kind == "withdraw"}
    cursor = 0

    def next_offer() -> str | None:
        nonlocal cursor
        while cursor < len(ranking):
            candidate = ranking[cursor]
            cursor += 1
            if candidate in admitted or candidate in withdrawn or candidate in offered_set:
                continue
            return candidate
        return None

    for event in events:
        if event.kind == "withdraw":
            if event.id not in known:
                raise ValueError(f"capacity event references unknown id {event.id!r}")
            if event.id not in admitted and event.id not in offered_set:
                raise ValueError(f"withdrawal of {event.id!r}, which holds no seat")
            if event.id in withdrawn:
                raise ValueError(f"{event.id!r} already withdrawn")
            withdrawn.add(event.id)
        offer = next_offer()
        if offer is not None:
            offered.append(offer)
            offered_set.add(offer)

    return VacancyLedger(capacity_events=prior_events + tuple(events),
                         offers_made=tuple(offered))


def outcome_to_csv(outcome: SelectionOutcome, cohort: SesIndexedCohort,
                   dest: str | os.PathLike | IO[str],
                   policy: CorrectionPolicy | None = None) -> None:
    """Outcome export: one row per admitted applicant, regular first, then conditional."""
    policy = policy or CorrectionPolicy(alpha=outcome.alpha)
    by_id = {ir.record.id: ir for ir in cohort.records}
    cond_by_id = {a.id: a for a in outcome.conditional}
    t = outcome.threshold.t
    buf = io.StringIO()
    buf.write("id,role,merit,s,c,m_star,delta,gap,quartile\n")
    for rid in sorted(outcome.regular):
        ir = by_id[rid]
        c = correction_values(np.array([ir.s]), policy)[0] if ir.record.pre_optin else 0.0
        m_star = ir.record.merit_score + c
        buf.write(f"{rid},regular,{ir.record.merit_score!r},{ir.s!r},{float(c)!r},"
                  f"{float(m_star)!r},{float(t - ir.record.merit_score)!r},"
                  f"{float(m_star - t)!r},{ir.quartile}\n")
    for admit in outcome.conditional:
        ir = by_id[admit.id]
        buf.write(f"{admit.id},conditional,{ir.record.merit_score!r},{admit.s!r},"
                  f"{admit.c!r},{admit.m_star!r},{admit.delta!r},{admit.gap!r},"
                  f"{admit.quartile}\n")
    payload = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(payload)


def outcome_summary(outcome: SelectionOutcome) -> dict:
    """JSON-ready summary: counts, threshold, quartile shares."""
    return {
        "alpha": outcome.alpha,
        "threshold": outcome.threshold.t,
        "top_fraction": outcome.threshold.top_fraction,
        "k": outcome.threshold.k,
        "n": outcome.threshold.n,
        "n_regular": outcome.n_regular,
        "n_conditional": outcome.n_conditional,
        "quartile_composition": outcome.quartile_composition,
    }
