"""Percentile normalization of the SES composite and population quartiles.

The correction rule consumes a rank-based index s in [0, 1]. Two in-cohort
conventions are supported: ``hazen`` assigns (rank - 0.5) / N from averaged
mid-ranks, which makes the cohort mean of s exactly 0.5; ``inclusive`` assigns
rank / N. Re-anchoring against an external reference distribution uses the
mid-distribution convention, which coincides with hazen when the reference is
the cohort itself.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import ApplicantRecord, Cohort, DataError, score_digest

RANK_METHODS = ("hazen", "inclusive")
QUARTILES = ("Q1", "Q2", "Q3", "Q4")


def assign_quartile(s: float) -> str:
    """Quartile of the full population index: half-open below, closed at 1.0."""
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"s must lie in [0, 1], got {s}")
    if s < 0.25:
        return "Q1"
    if s < 0.50:
        return "Q2"
    if s < 0.75:
        return "Q3"
    return "Q4"


@dataclass(frozen=True)
class IndexedRecord:
    record: ApplicantRecord
    s: float
    quartile: str


@dataclass(frozen=True)
class SesIndexedCohort:
    """Cohort with per-record SES index s and quartile; order matches the cohort."""

    records: tuple[IndexedRecord, ...]
    rank_method: str
    reference: str  # "self" or "external"

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> tuple[str, ...]:
        return tuple(ir.record.id for ir in self.records)

    def s_values(self) -> np.ndarray:
        return np.array([ir.s for ir in self.records], dtype=float)

    def merits(self) -> np.ndarray:
        return np.array([ir.record.merit_score for ir in self.records], dtype=float)

    def weights(self) -> np.ndarray:
        return np.array([ir.record.weight for ir in self.records], dtype=float)

    def pre_optins(self) -> np.ndarray:
        return np.array([ir.record.pre_optin for ir in self.records], dtype=bool)

    def score_digest(self) -> str:
        return score_digest(ir.record for ir in self.records)


@dataclass(frozen=True)
class ReferenceDistribution:
    """Sorted national reference sample used to anchor percentiles."""

    sorted_escs: tuple[float, ...]
    description: str = ""

    def __post_init__(self) -> None:
        if not self.sorted_escs:
            raise DataError("reference distribution is empty")
        values = list(self.sorted_escs)
        if any(not math.isfinite(v) for v in values):
            raise DataError("reference distribution contains non-finite values")
        if values != sorted(values):
            raise DataError("reference values must be sorted ascending")

    @classmethod
    def from_values(cls, values: Iterable[float], description: str = "") -> "ReferenceDistribution":
        return cls(sorted_escs=tuple(sorted(float(v) for v in values)),
                   description=description)

    @classmethod
    def from_csv(cls, source: str | os.PathLike | IO[str]) -> "ReferenceDistribution":
        """One-column CSV; a single non-numeric leading row is treated as a header."""
        if hasattr(source, "read"):
            text = source.read()
            name = getattr(source, "name", "<stream>")
        else:
            try:
                with open(source, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise DataError(f"unreadable reference {source!r}: {exc}") from exc
            name = str(source)
        values: list[float] = []
        for i, line in enumerate(io.StringIO(text)):
            cell = line.strip().split(",")[0]
            if not cell:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                if i == 0:
                    continue  # header row
                raise DataError(f"{name}: non-numeric reference value {cell!r}")
        if not values:
            raise DataError(f"{name}: no reference values")
        return cls.from_values(values, description=name)


def percentile_rank(cohort: Cohort, method: str = "hazen") -> SesIndexedCohort:
    """Index a cleaned cohort by in-cohort SES percentile rank.

    Ties receive the averaged mid-rank, so equal SES always maps to equal s.
    """
    if method not in RANK_METHODS:
        raise ValueError(f"unknown rank method {method!r}; expected one of {RANK_METHODS}")
    if len(cohort) == 0:
        raise DataError("cannot rank an empty cohort")
    n = len(cohort)
    ranks = rankdata(cohort.escs(), method="average")
    if method == "hazen":
        s = (ranks - 0.5) / n
    else:
        s = ranks / n
    indexed = tuple(IndexedRecord(record=r, s=float(si), quartile=assign_quartile(float(si)))
                    for r, si in zip(cohort.records, s))
    return SesIndexedCohort(records=indexed, rank_method=method, reference="self")


def mid_distribution_value(reference: ReferenceDistribution, value: float) -> float:
    """Fraction of reference strictly below ``value`` plus half the fraction equal."""
    ref = np.asarray(reference.sorted_escs)
    below = int(np.searchsorted(ref, value, side="left"))
    equal = int(np.searchsorted(ref, value, side="right")) - below
    return (below + 0.5 * equal) / len(ref)


def reanchor_percentiles(cohort: Cohort, reference: ReferenceDistribution,
                         rank_method: str = "hazen") -> SesIndexedCohort:
    """Index a cohort against an external reference distribution.

    With the cohort itself as reference this reproduces :func:`percentile_rank`
    with the hazen convention exactly, ties included. ``rank_method`` is kept
    only as metadata describing the tie-convention family.
    """
    if len(cohort) == 0:
        raise DataError("cannot rank an empty cohort")
    ref = np.asarray(reference.sorted_escs)
    escs = cohort.escs()
    below = np.searchsorted(ref, escs, side="left")
    equal = np.searchsorted(ref, escs, side="right") - below
    s = (below + 0.5 * equal) / len(ref)
    indexed = tuple(IndexedRecord(record=r, s=float(si), quartile=assign_quartile(float(si)))
                    for r, si in zip(cohort.records, s))
    return SesIndexedCohort(records=indexed, rank_method=rank_method, reference="external")


def index_scored_records(records: Sequence[ApplicantRecord],
                         method: str = "hazen") -> SesIndexedCohort:
    """Rank an already-validated record sequence (internal convenience)."""
    return percentile_rank(Cohort(records=tuple(records)), method=method)
