"""Cohort ingestion: delimited-file loading, schema mapping, SES outlier fences.

A cohort is an ordered, immutable list of applicant records. Loading drops rows
that lack a usable merit or SES value (every downstream rule needs both), then
a single Tukey-fence pass removes SES outliers before any normalization.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, replace
from typing import IO, Iterable, Mapping

import numpy as np

from ._canonical import digest_of

_TRUE_TOKENS = {"1", "true", "t", "yes", "y"}
_FALSE_TOKENS = {"0", "false", "f", "no", "n"}


class DataError(Exception):
    """Unusable input data: unreadable source, missing column, zero usable rows."""


@dataclass(frozen=True)
class ApplicantRecord:
    """One applicant: identifier, raw merit score, raw SES composite, weight, opt-ins."""

    id: str
    merit_score: float
    escs_raw: float
    weight: float = 1.0
    pre_optin: bool = True
    post_optin: bool = True

    def __post_init__(self) -> None:
        if not math.isfinite(self.merit_score):
            raise DataError(f"record {self.id!r}: merit_score must be finite")
        if not math.isfinite(self.escs_raw):
            raise DataError(f"record {self.id!r}: escs_raw must be finite")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise DataError(f"record {self.id!r}: weight must be finite and >= 0")


@dataclass(frozen=True)
class Cohort:
    """Ordered applicant records plus ingestion provenance."""

    records: tuple[ApplicantRecord, ...]
    provenance: str = ""
    n_dropped_missing: int = 0

    def __post_init__(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate ids in cohort: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    def merits(self) -> np.ndarray:
        return np.array([r.merit_score for r in self.records], dtype=float)

    def escs(self) -> np.ndarray:
        return np.array([r.escs_raw for r in self.records], dtype=float)

    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.records], dtype=float)

    def content_digest(self) -> str:
        """Digest over every record field, in record order (provenance excluded)."""
        return digest_of([[r.id, r.merit_score, r.escs_raw, r.weight,
                           r.pre_optin, r.post_optin] for r in self.records])

    def score_digest(self) -> str:
        """Digest over (id, merit) pairs only; thresholds depend on nothing else."""
        return score_digest(self.records)


def score_digest(records: Iterable[ApplicantRecord]) -> str:
    return digest_of([[r.id, r.merit_score] for r in records])


@dataclass(frozen=True)
class OutlierReport:
    """Tukey-fence parameters and the ids removed by the single cleaning pass."""

    q1: float
    q3: float
    iqr: float
    lower_fence: float
    upper_fence: float
    removed_ids: tuple[str, ...]
    n_before: int
    n_after: int


@dataclass(frozen=True)
class SchemaMapping:
    """Maps logical fields to column names of the input file."""

    merit: str
    escs: str
    id: str | None = None
    weight: str | None = None
    pre_optin: str | None = None
    post_optin: str | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, str]) -> "SchemaMapping":
        known = {"merit", "escs", "id", "weight", "pre_optin", "post_optin"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown schema fields: {sorted(unknown)}")
        if "merit" not in d or "escs" not in d:
            raise DataError("schema must map at least 'merit' and 'escs'")
        return cls(**dict(d))

    def to_dict(self) -> dict[str, str]:
        out = {"merit": self.merit, "escs": self.escs}
        for key in ("id", "weight", "pre_optin", "post_optin"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def _parse_float(cell: str | None) -> float | None:
    if cell is None:
        return None
    cell = cell.strip()
    if not cell:
        return None
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _parse_bool(cell: str | None, default: bool, where: str) -> bool:
    if cell is None or not cell.strip():
        return default
    token = cell.strip().lower()
    if token in _TRUE_TOKENS:
        return True
    if token in _FALSE_TOKENS:
        return False
    raise DataError(f"{where}: cannot parse boolean value {cell!r}")


def _detect_delimiter(header_line: str) -> str:
    return "\t" if header_line.count("\t") > header_line.count(",") else ","


def _split(line: str, delim: str) -> list[str]:
    return line.rstrip("\r\n").split(delim)


def load_cohort(source: str | os.PathLike | IO[str], schema: SchemaMapping) -> Cohort:
    """Load a cohort from a delimited text file (comma or tab, auto-detected).

    Rows missing a finite merit or SES value are dropped and counted in
    ``n_dropped_missing``. A missing weight defaults to 1.0, and both opt-in
    flags default to true unless an opt-in column is mapped.
    """
    if isinstance(schema, Mapping):
        schema = SchemaMapping.from_dict(schema)
    if hasattr(source, "read"):
        text = source.read()
        provenance = getattr(source, "name", "<stream>")
    else:
        try:
            with open(source, "r", encoding="utf-8", newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise DataError(f"unreadable source {source!r}: {exc}") from exc
        provenance = str(source)

    lines = [ln for ln in io.StringIO(text)]
    if not lines:
        raise DataError(f"{provenance}: empty file (header row required)")
    delim = _detect_delimiter(lines[0])
    header = _split(lines[0], delim)
    col_index = {name: i for i, name in enumerate(header)}

    mapped = schema.to_dict()
    missing_cols = [c for c in mapped.values() if c not in col_index]
    if missing_cols:
        raise DataError(f"{provenance}: missing mapped column(s) {missing_cols}")

    def cell(row: list[str], field: str) -> str | None:
        col = mapped.get(field)
        if col is None:
            return None
        i = col_index[col]
        return row[i] if i < len(row) else None

    records: list[ApplicantRecord] = []
    n_dropped = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        row = _split(line, delim)
        merit = _parse_float(cell(row, "merit"))
        escs = _parse_float(cell(row, "escs"))
        if merit is None or escs is None:
            n_dropped += 1
            continue
        weight = _parse_float(cell(row, "weight"))
        rid_cell = cell(row, "id")
        rid = rid_cell.strip() if rid_cell and rid_cell.strip() else f"row{lineno - 1}"
        where = f"{provenance}:{lineno}"
        records.append(ApplicantRecord(
            id=rid,
            merit_score=merit,
            escs_raw=escs,
            weight=1.0 if weight is None else weight,
            pre_optin=_parse_bool(cell(row, "pre_optin"), True, where),
            post_optin=_parse_bool(cell(row, "post_optin"), True, where),
        ))

    if not records:
        raise DataError(f"{provenance}: zero usable rows")
    return Cohort(records=tuple(records),
                  provenance=f"{provenance} (delimiter={delim!r})",
                  n_dropped_missing=n_dropped)


def remove_ses_outliers(cohort: Cohort,
                        quartile_method: str = "linear") -> tuple[Cohort, OutlierReport]:
    """Remove records with SES outside the Tukey fences (single pass).

    Quartiles use linear interpolation between order statistics by default
    (``numpy.quantile`` method names are accepted for sensitivity checks).
    A degenerate spread (IQR = 0) removes nothing.
    """
    if len(cohort) == 0:
        raise DataError("cannot remove outliers from an empty cohort")
    escs = cohort.escs()
    q1, q3 = (float(q) for q in np.quantile(escs, [0.25, 0.75], method=quartile_method))
    iqr = q3 - q1
    lower = q1 - 1.5 * iqr
    upper = q3 + 1.5 * iqr
    keep = [r for r in cohort.records if lower <= r.escs_raw <= upper]
    removed = tuple(r.id for r in cohort.records if not (lower <= r.escs_raw <= upper))
    report = OutlierReport(q1=q1, q3=q3, iqr=iqr, lower_fence=lower, upper_fence=upper,
                           removed_ids=removed, n_before=len(cohort), n_after=len(keep))
    cleaned = replace(cohort, records=tuple(keep))
    return cleaned, report


def cohort_to_csv(cohort: Cohort, dest: str | os.PathLike | IO[str]) -> None:
    """Write the cleaned-cohort export (id, merit, escs, weight, pre_optin, post_optin)."""
    buf = io.StringIO()
    buf.write("id,merit,escs,weight,pre_optin,post_optin\n")
    for r in cohort.records:
        buf.write(f"{r.id},{r.merit_score!r},{r.escs_raw!r},{r.weight!r},"
                  f"{int(r.pre_optin)},{int(r.post_optin)}\n")
    payload = buf.getvalue()
    if hasattr(dest, "write"):
        dest.write(payload)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(payload)


def cohort_from_csv(source: str | os.PathLike | IO[str]) -> Cohort:
    """Read a cohort previously written by :func:`cohort_to_csv`."""
    schema = SchemaMapping(merit="merit", escs="escs", id="id", weight="weight",
                           pre_optin="pre_optin", post_optin="post_optin")
    return load_cohort(source, schema)
