"""Five-stage batch decision pipeline with a tamper-evident audit trail.

Stages run in a fixed, non-substitutable order: input, aggregation,
calibration, execution, closure. Each stage appends exactly one entry to a
hash-linked audit trail; the closure stage seals the run by digesting the
configuration, the cleaned cohort, the outcome, and the trail head. A sealed
run can be re-derived from its persisted artifacts and checked bit-for-bit.

Oversight is code, not people: the kill-switch validator may only halt a run,
and closure verification may only report; neither can write an outcome.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

from ._canonical import GENESIS_DIGEST, anonymize_id, canonical_json, digest_of
from .correction import CorrectionPolicy, EmergencyPolicy, correction_values
from .dataset import (Cohort, DataError, OutlierReport, SchemaMapping, cohort_from_csv,
                      cohort_to_csv, load_cohort, remove_ses_outliers)
from .selection import (SelectionOutcome, initial_ranking, merit_threshold, outcome_summary,
                        outcome_to_csv, select)
from .ses_index import ReferenceDistribution, SesIndexedCohort, percentile_rank, reanchor_percentiles

STAGES = ("input", "aggregation", "calibration", "execution", "closure")

DEFAULT_PII_DENYLIST = ("name", "first_name", "last_name", "dob", "birthdate",
                        "address", "email", "phone", "gender", "age")

KILLSWITCH_CAUSES = ("bounds_violation", "digest_mismatch", "sunset_violation")


class KillSwitchAbort(Exception):
    """Run halted by the pre-execution or pre-closure validation."""

    def __init__(self, cause: str, detail: str):
        super().__init__(f"{cause}: {detail}")
        self.cause = cause
        self.detail = detail


@dataclass(frozen=True)
class KillswitchVerdict:
    ok: bool
    cause: str | None = None
    detail: str | None = None


@dataclass(frozen=True)
class SpineConfig:
    """Everything a cycle needs, bundled so the seal can bind it."""

    schema: SchemaMapping
    policy: CorrectionPolicy
    emergency: EmergencyPolicy | None = None
    top_fraction: float = 0.10
    rank_method: str = "hazen"
    alpha_bounds: tuple[float, float] = (0.0, 15.0)
    cycle_id: str = "cycle-1"
    rng_seed: int = 0
    quartile_method: str = "linear"
    k_rounding: str = "half_away_from_zero"
    national_reference: str | None = None
    pii_denylist: tuple[str, ...] = DEFAULT_PII_DENYLIST

    def canonical_form(self, reference_digest: str | None = None) -> dict:
        emergency = None
        if self.emergency is not None:
            emergency = {
                "beta_e": self.emergency.beta_e,
                "sunset_cycle": self.emergency.sunset_cycle,
                "indicator_digest": digest_of(
                    sorted([k, v] for k, v in self.emergency.indicator.items())),
            }
        return {
            "schema": self.schema.to_dict(),
            "policy": {"alpha": self.policy.alpha, "mu": self.policy.mu,
                       "clamp_nonnegative": self.policy.clamp_nonnegative},
            "emergency": emergency,
            "top_fraction": self.top_fraction,
            "rank_method": self.rank_method,
            "alpha_bounds": list(self.alpha_bounds),
            "cycle_id": self.cycle_id,
            "rng_seed": self.rng_seed,
            "quartile_method": self.quartile_method,
            "k_rounding": self.k_rounding,
            "national_reference_digest": reference_digest,
            "pii_denylist": list(self.pii_denylist),
        }


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    stage: str
    digest: str
    prev: str


@dataclass(frozen=True)
class AuditTrail:
    """Append-only digest chain, one entry per stage, in spine order."""

    entries: tuple[AuditEntry, ...]

    @property
    def head_digest(self) -> str:
        return self.entries[-1].digest if self.entries else GENESIS_DIGEST

    def verify_chain(self) -> tuple[bool, str | None]:
        prev = GENESIS_DIGEST
        for i, entry in enumerate(self.entries):
            if entry.seq != i:
                return False, f"entry {i}: sequence number {entry.seq}"
            if entry.prev != prev:
                return False, f"entry {i} ({entry.stage}): broken chain link"
            prev = entry.digest
        stages = tuple(e.stage for e in self.entries)
        if stages != STAGES[:len(stages)]:
            return False, f"stage order {stages} violates the spine order"
        return True, None

    def to_jsonl(self) -> str:
        lines = [canonical_json({"seq": e.seq, "stage": e.stage,
                                 "digest": e.digest, "prev": e.prev})
                 for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "AuditTrail":
        entries = []
        for line in text.splitlines():
            if not line.strip():
                continue
            raw = json.loads(line)
            entries.append(AuditEntry(seq=raw["seq"], stage=raw["stage"],
                                      digest=raw["digest"], prev=raw["prev"]))
        return cls(entries=tuple(entries))


@dataclass(frozen=True)
class ClosureSeal:
    """Digest binding config, cleaned cohort, outcome, and trail head."""

    seal_digest: str
    components: dict[str, str]
    sealed_at_stage: str = "closure"


class OptInRegister:
    """Pre-cycle disclosure consents (frozen at cycle start) and post-closure
    support consents (writable only after closure, never read by the spine)."""

    def __init__(self, pre: Mapping[str, bool] | None = None,
                 post: Mapping[str, bool] | None = None):
        self._pre = dict(pre or {})
        self._post = dict(post or {})
        self._pre_frozen = False
        self._closed = False

    @property
    def pre_spine(self) -> dict[str, bool]:
        return dict(self._pre)

    @property
    def post_spine(self) -> dict[str, bool]:
        return dict(self._post)

    def set_pre(self, applicant_id: str, value: bool) -> None:
        if self._pre_frozen:
            raise RuntimeError("pre-cycle opt-ins are binding once the cycle starts")
        self._pre[applicant_id] = bool(value)

    def freeze_pre(self) -> None:
        self._pre_frozen = True

    def mark_closed(self) -> None:
        self._closed = True

    def set_post(self, applicant_id: str, value: bool) -> None:
        if not self._closed:
            raise RuntimeError("post-cycle opt-ins open only after closure")
        self._post[applicant_id] = bool(value)

    def pre_value(self, applicant_id: str, default: bool) -> bool:
        return self._pre.get(applicant_id, default)


@dataclass(frozen=True)
class SpineResult:
    """Staged execution trail plus the sealed outcome and frozen ranking."""

    outcome: SelectionOutcome
    trail: AuditTrail
    seal: ClosureSeal
    cohort: Cohort
    indexed: SesIndexedCohort
    outlier_report: OutlierReport
    ranking: tuple[str, ...]
    stage_payloads: dict[str, dict]
    config_form: dict


def scan_for_pii(payloads: Mapping[str, dict], denylist: Sequence[str]) -> list[str]:
    """Field paths in the stage payloads whose key matches the denylist."""
    deny = {d.lower() for d in denylist}
    hits: list[str] = []

    def walk(node, path: str) -> None:
        if isinstance(node, dict):
            for key, value in node.items():
                sub = f"{path}.{key}" if path else str(key)
                if str(key).lower() in deny:
                    hits.append(sub)
                walk(value, sub)
        elif isinstance(node, (list, tuple)):
            for i, value in enumerate(node):
                walk(value, f"{path}[{i}]")

    for stage, payload in payloads.items():
        walk(payload, stage)
    return hits


def validate_killswitch(config: SpineConfig,
                        staged: Mapping[str, tuple[str, str]]) -> KillswitchVerdict:
    """Permit or halt; never alter.

    Halts when (a) alpha leaves its predefined bounds, (b) any staged
    artifact's recorded digest disagrees with its current digest, or (c) the
    emergency module is active outside its sunset cycle.
    """
    lo, hi = config.alpha_bounds
    if not (lo <= config.policy.alpha <= hi):
        return KillswitchVerdict(ok=False, cause="bounds_violation",
                                 detail=f"alpha={config.policy.alpha} outside [{lo}, {hi}]")
    for name, (recorded, current) in sorted(staged.items()):
        if recorded != current:
            return KillswitchVerdict(ok=False, cause="digest_mismatch",
                                     detail=f"{name}: recorded {recorded[:12]}..., "
                                            f"current {current[:12]}...")
    if config.emergency is not None and config.emergency.sunset_cycle != config.cycle_id:
        return KillswitchVerdict(
            ok=False, cause="sunset_violation",
            detail=f"emergency module bound to {config.emergency.sunset_cycle!r}, "
                   f"cycle is {config.cycle_id!r}")
    return KillswitchVerdict(ok=True)


def _indexed_digest(indexed: SesIndexedCohort) -> str:
    return digest_of([[anonymize_id(ir.record.id), ir.s] for ir in indexed.records])


def _corrections_digest(ids: Sequence[str], c: np.ndarray) -> str:
    return digest_of([[anonymize_id(i), float(x)] for i, x in zip(ids, c)])


def _spine_corrections(indexed: SesIndexedCohort, config: SpineConfig) -> np.ndarray:
    c = correction_values(indexed.s_values(), config.policy)
    if config.emergency is not None:
        bump = np.array([config.emergency.indicator.get(ir.record.id, 0.0)
                         for ir in indexed.records])
        c = c + config.emergency.beta_e * bump
    return np.where(indexed.pre_optins(), c, 0.0)


def _load_reference(config: SpineConfig) -> tuple[ReferenceDistribution | None, str | None]:
    if config.national_reference is None:
        return None, None
    ref = ReferenceDistribution.from_csv(config.national_reference)
    return ref, digest_of(list(ref.sorted_escs))


def run_spine(source: str | os.PathLike | IO[str], config: SpineConfig,
              optins: OptInRegister | None = None) -> SpineResult:
    """Execute one full cycle: ingest, index, calibrate, select, seal.

    Identical inputs, config, and seed produce an identical result, seal
    included. Any kill-switch abort raises before an outcome exists, so a
    failed run persists nothing.
    """
    optins = optins if optins is not None else OptInRegister()
    payloads: dict[str, dict] = {}
    entries: list[AuditEntry] = []
    prev = GENESIS_DIGEST

    def append(stage: str, payload: dict) -> None:
        nonlocal prev
        digest = digest_of(payload)
        entries.append(AuditEntry(seq=len(entries), stage=stage,
                                  digest=digest, prev=prev))
        payloads[stage] = payload
        prev = digest

    # Stage 1: input definition. Pre-cycle opt-ins freeze here.
    loaded = load_cohort(source, config.schema)
    if optins.pre_spine:
        records = tuple(replace(r, pre_optin=optins.pre_value(r.id, r.pre_optin))
                        for r in loaded.records)
        loaded = replace(loaded, records=records)
    optins.freeze_pre()
    cohort, outlier_report = remove_ses_outliers(loaded, config.quartile_method)
    cohort_digest = cohort.content_digest()
    append("input", {
        "n_loaded": len(loaded),
        "n_dropped_missing": loaded.n_dropped_missing,
        "outliers": {
            "q1": outlier_report.q1, "q3": outlier_report.q3, "iqr": outlier_report.iqr,
            "lower_fence": outlier_report.lower_fence,
            "upper_fence": outlier_report.upper_fence,
            "removed": [anonymize_id(i) for i in outlier_report.removed_ids],
            "n_before": outlier_report.n_before, "n_after": outlier_report.n_after,
        },
        "cohort_digest": cohort_digest,
    })

    # Stage 2: aggregation and weighting (the scalar disadvantage signal).
    reference, reference_digest = _load_reference(config)
    if reference is not None:
        indexed = reanchor_percentiles(cohort, reference, rank_method=config.rank_method)
    else:
        indexed = percentile_rank(cohort, method=config.rank_method)
    indexed_digest = _indexed_digest(indexed)
    append("aggregation", {
        "rank_method": config.rank_method,
        "reference": indexed.reference,
        "reference_digest": reference_digest,
        "mean_s": float(indexed.s_values().mean()),
        "cohort_digest": cohort_digest,
        "indexed_digest": indexed_digest,
    })

    # Stage 3: equity calibration (corrections, plus emergency term if active).
    c = _spine_corrections(indexed, config)
    corrections_digest = _corrections_digest(indexed.ids(), c)
    append("calibration", {
        "alpha": config.policy.alpha,
        "mu": config.policy.mu,
        "emergency_active": config.emergency is not None,
        "n_eligible": int(np.count_nonzero(c > 0)),
        "max_c": float(c.max()) if len(c) else 0.0,
        "cohort_digest": cohort_digest,
        "corrections_digest": corrections_digest,
    })

    # Stage 4: execution, gated by the kill-switch.
    verdict = validate_killswitch(config, {
        "cohort": (cohort_digest, cohort.content_digest()),
        "indexed": (indexed_digest, _indexed_digest(indexed)),
        "corrections": (corrections_digest,
                        _corrections_digest(indexed.ids(), _spine_corrections(indexed, config))),
    })
    if not verdict.ok:
        raise KillSwitchAbort(verdict.cause, verdict.detail)
    threshold = merit_threshold(cohort, config.top_fraction, rounding=config.k_rounding)
    outcome = select(indexed, threshold, config.policy, emergency=config.emergency,
                     cycle=config.cycle_id)
    outcome_digest = outcome.digest()
    append("execution", {
        "killswitch": "pass",
        "threshold": {"t": threshold.t, "k": threshold.k, "n": threshold.n,
                      "top_fraction": threshold.top_fraction},
        "n_regular": outcome.n_regular,
        "n_conditional": outcome.n_conditional,
        "cohort_digest": cohort_digest,
        "outcome_digest": outcome_digest,
    })

    # Stage 5: closure. Re-validate, freeze the ranking, seal.
    verdict2 = validate_killswitch(config, {
        "cohort": (cohort_digest, cohort.content_digest()),
        "outcome": (outcome_digest, outcome.digest()),
    })
    if not verdict2.ok:
        raise KillSwitchAbort(verdict2.cause, verdict2.detail)
    ranking = initial_ranking(indexed, config.policy, emergency=config.emergency,
                              cycle=config.cycle_id)
    config_form = config.canonical_form(reference_digest)
    seal_components = {
        "config_digest": digest_of(config_form),
        "cohort_digest": cohort_digest,
        "outcome_digest": outcome_digest,
        "trail_head_digest": entries[-1].digest,
    }
    seal = ClosureSeal(seal_digest=digest_of(seal_components),
                       components=seal_components)
    append("closure", {
        "killswitch": "pass",
        "seal_digest": seal.seal_digest,
        "components": seal_components,
        "ranking_digest": digest_of([anonymize_id(i) for i in ranking]),
    })

    hits = scan_for_pii(payloads, config.pii_denylist)
    if hits:
        raise RuntimeError(f"audit payloads contain denylisted fields: {hits}")

    optins.mark_closed()
    return SpineResult(outcome=outcome, trail=AuditTrail(entries=tuple(entries)),
                       seal=seal, cohort=cohort, indexed=indexed,
                       outlier_report=outlier_report, ranking=ranking,
                       stage_payloads=payloads, config_form=config_form)


# --- persistence -----------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def persist_spine(result: SpineResult, out_dir: str | os.PathLike,
                  config: SpineConfig) -> None:
    """Write the sealed artifact set for a completed run."""
    out = Path(out_dir)
    _write_text(out / "config.json", canonical_json(result.config_form) + "\n")
    with open(out / "cohort.csv", "w", encoding="utf-8", newline="") as fh:
        cohort_to_csv(result.cohort, fh)
    for stage in STAGES:
        _write_text(out / "stages" / f"{stage}.json",
                    canonical_json(result.stage_payloads[stage]) + "\n")
    _write_text(out / "audit.jsonl", result.trail.to_jsonl())
    with open(out / "outcome.csv", "w", encoding="utf-8", newline="") as fh:
        outcome_to_csv(result.outcome, result.indexed, fh, policy=config.policy)
    _write_text(out / "summary.json",
                canonical_json(outcome_summary(result.outcome)) + "\n")
    _write_text(out / "ranking.csv", "id\n" + "".join(f"{i}\n" for i in result.ranking))
    _write_text(out / "seal.json", canonical_json({
        "seal_digest": result.seal.seal_digest,
        "sealed_at_stage": result.seal.sealed_at_stage,
        "components": result.seal.components,
    }) + "\n")
    if config.national_reference is not None:
        ref = ReferenceDistribution.from_csv(config.national_reference)
        _write_text(out / "reference.csv",
                    "escs\n" + "".join(f"{v!r}\n" for v in ref.sorted_escs))
    if config.emergency is not None:
        persist_emergency(config.emergency, out)


@dataclass(frozen=True)
class ClosureVerdict:
    ok: bool
    failures: tuple[str, ...] = ()

    @property
    def first_failure(self) -> str | None:
        return self.failures[0] if self.failures else None


def _rederive_outcome(out: Path, config_form: dict) -> tuple[SelectionOutcome, SesIndexedCohort, tuple[str, ...]]:
    cohort = cohort_from_csv(out / "cohort.csv")
    if config_form["national_reference_digest"] is not None:
        ref = ReferenceDistribution.from_csv(out / "reference.csv")
        indexed = reanchor_percentiles(cohort, ref, rank_method=config_form["rank_method"])
    else:
        indexed = percentile_rank(cohort, method=config_form["rank_method"])
    policy = CorrectionPolicy(alpha=config_form["policy"]["alpha"],
                              mu=config_form["policy"]["mu"],
                              clamp_nonnegative=config_form["policy"]["clamp_nonnegative"])
    emergency = None
    if config_form["emergency"] is not None:
        emergency = _emergency_from_artifact(out, config_form)
    threshold = merit_threshold(cohort, config_form["top_fraction"],
                                rounding=config_form["k_rounding"])
    outcome = select(indexed, threshold, policy, emergency=emergency,
                     cycle=config_form["cycle_id"])
    ranking = initial_ranking(indexed, policy, emergency=emergency,
                              cycle=config_form["cycle_id"])
    return outcome, indexed, ranking


def _emergency_from_artifact(out: Path, config_form: dict) -> EmergencyPolicy:
    from .correction import emergency_from_csv
    return emergency_from_csv(out / "emergency.csv", config_form["emergency"]["beta_e"])


def persist_emergency(policy: EmergencyPolicy, out_dir: str | os.PathLike) -> None:
    rows = "".join(f"{k},{v!r},{policy.sunset_cycle}\n"
                   for k, v in sorted(policy.indicator.items()))
    _write_text(Path(out_dir) / "emergency.csv", "id,e_value,cycle\n" + rows)


def verify_closure(out_dir: str | os.PathLike) -> ClosureVerdict:
    """Recompute every digest, re-derive the outcome, and compare bit-for-bit.

    Reports the first broken chain link or the first divergent outcome record;
    a verdict never repairs or rewrites anything.
    """
    out = Path(out_dir)
    failures: list[str] = []
    try:
        config_form = json.loads((out / "config.json").read_text(encoding="utf-8"))
        trail = AuditTrail.from_jsonl((out / "audit.jsonl").read_text(encoding="utf-8"))
        seal_doc = json.loads((out / "seal.json").read_text(encoding="utf-8"))
        payloads = {stage: json.loads((out / "stages" / f"{stage}.json").read_text(encoding="utf-8"))
                    for stage in STAGES}
        outcome_bytes = (out / "outcome.csv").read_bytes()
        ranking_bytes = (out / "ranking.csv").read_bytes()
        cohort = cohort_from_csv(out / "cohort.csv")
    except (OSError, json.JSONDecodeError, DataError) as exc:
        return ClosureVerdict(ok=False, failures=(f"unreadable artifact set: {exc}",))

    ok, problem = trail.verify_chain()
    if not ok:
        failures.append(problem)
    if tuple(e.stage for e in trail.entries) != STAGES:
        failures.append(f"trail stages {tuple(e.stage for e in trail.entries)} != {STAGES}")
    for i, stage in enumerate(STAGES):
        if i < len(trail.entries) and digest_of(payloads[stage]) != trail.entries[i].digest:
            failures.append(f"stage {stage}: payload digest mismatch")

    recorded_cohort_digest = payloads["input"].get("cohort_digest")
    if cohort.content_digest() != recorded_cohort_digest:
        failures.append("cohort.csv digest does not match the input stage record")

    try:
        outcome, indexed, ranking = _rederive_outcome(out, config_form)
    except Exception as exc:  # any divergence in re-derivation is a failure
        failures.append(f"re-derivation failed: {exc}")
        return ClosureVerdict(ok=False, failures=tuple(failures))

    if outcome.digest() != payloads["execution"].get("outcome_digest"):
        failures.append("re-derived outcome digest does not match the execution record")

    import io as _io
    buf = _io.StringIO()
    policy = CorrectionPolicy(alpha=config_form["policy"]["alpha"],
                              mu=config_form["policy"]["mu"],
                              clamp_nonnegative=config_form["policy"]["clamp_nonnegative"])
    outcome_to_csv(outcome, indexed, buf, policy=policy)
    expected_bytes = buf.getvalue().encode("utf-8")
    if expected_bytes != outcome_bytes:
        divergent = _first_divergent_record(expected_bytes, outcome_bytes)
        failures.append(f"outcome.csv diverges from the re-derived outcome at {divergent}")

    expected_ranking = ("id\n" + "".join(f"{i}\n" for i in ranking)).encode("utf-8")
    if expected_ranking != ranking_bytes:
        failures.append("ranking.csv diverges from the re-derived frozen ranking")

    seal_components = {
        "config_digest": digest_of(config_form),
        "cohort_digest": cohort.content_digest(),
        "outcome_digest": outcome.digest(),
        "trail_head_digest": trail.entries[3].digest if len(trail.entries) > 3 else "",
    }
    if digest_of(seal_components) != seal_doc.get("seal_digest"):
        failures.append("seal mismatch: recomputed seal digest differs from seal.json")

    return ClosureVerdict(ok=not failures, failures=tuple(failures))


def _first_divergent_record(expected: bytes, actual: bytes) -> str:
    expected_lines = expected.decode("utf-8").splitlines()
    actual_lines = actual.decode("utf-8").splitlines()
    for i in range(max(len(expected_lines), len(actual_lines))):
        exp = expected_lines[i] if i < len(expected_lines) else "<missing>"
        act = actual_lines[i] if i < len(actual_lines) else "<missing>"
        if exp != act:
            record_id = exp.split(",")[0] if exp != "<missing>" else act.split(",")[0]
            return f"record {record_id!r} (line {i + 1})"
    return "unknown position"
