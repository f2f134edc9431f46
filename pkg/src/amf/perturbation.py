"""Seeded robustness protocol: SES noise, score noise, variance scaling,
threshold shifts, and population-weighted re-aggregation.

Replicate r draws its noise from a Philox (philox4x64) stream keyed by
(base_seed, r); normal deviates are produced by inverse-CDF transform of the
stream's uniforms, record i consuming stream position i. Reports are therefore
identical regardless of thread count or replicate execution order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .correction import CorrectionPolicy
from .dataset import ApplicantRecord, Cohort
from .selection import SelectionOutcome, merit_threshold, select
from .ses_index import QUARTILES, SesIndexedCohort, percentile_rank

RNG_NAME = "philox4x64"
DEVIATE_METHOD = "inverse-cdf-ndtri"

PERTURBATION_KINDS = ("ses_noise", "score_noise", "variance_scale", "threshold_shift")


@dataclass(frozen=True)
class PerturbationSpec:
    """Parameters for one robustness experiment.

    Exactly the fields relevant to ``kind`` are consulted: ``sigma`` for SES
    noise, ``eta_sd`` for score noise, ``scale`` for variance scaling, and
    ``top_fractions`` or ``additive_shifts`` for threshold shifts.
    """

    kind: str
    alpha: float
    replicates: int = 1
    base_seed: int = 0
    sigma: float | None = None
    eta_sd: float | None = None
    scale: float | None = None
    top_fractions: tuple[float, ...] | None = None
    additive_shifts: tuple[float, ...] | None = None
    top_fraction: float = 0.10
    rank_method: str = "hazen"
    mu: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.eta_sd is not None and self.eta_sd < 0:
            raise ValueError("eta_sd must be >= 0")
        if self.scale is not None and self.scale <= 0:
            raise ValueError("variance scale must be > 0")


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    label: str
    n_conditional: int
    quartile_shares: dict[str, float]
    min_gap: float | None
    ids: tuple[str, ...]


@dataclass(frozen=True)
class RobustnessAggregates:
    mean_count: float
    sd_count: float
    mean_quartile_shares: dict[str, float]
    frac_any_q3: float
    frac_any_q4: float


@dataclass(frozen=True)
class RobustnessReport:
    kind: str
    params: dict
    alpha: float
    base_seed: int
    rng_name: str
    deviate_method: str
    replicates: tuple[ReplicateResult, ...]
    aggregates: RobustnessAggregates


def _normal_deviates(base_seed: int, replicate: int, n: int) -> np.ndarray:
    """Standard normal draws for one replicate; position i belongs to record i."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence((base_seed, replicate))))
    u = gen.random(n)
    lo = np.nextafter(0.0, 1.0)
    hi = np.nextafter(1.0, 0.0)
    return ndtri(np.clip(u, lo, hi))


def _replicate_result(index: int, label: str, outcome: SelectionOutcome,
                      true_quartile: Mapping[str, str] | None = None) -> ReplicateResult:
    """Summarize one replicate.

    ``true_quartile`` maps ids to their unperturbed quartiles; when given,
    shares are reported against those, so boundary misclassification under
    SES noise shows up as Q3 penetration instead of being hidden by the
    re-ranked index.
    """
    gaps = [a.gap for a in outcome.conditional]
    if true_quartile is None:
        shares = dict(outcome.quartile_composition)
    else:
        shares = {q: 0.0 for q in QUARTILES}
        for admit in outcome.conditional:
            shares[true_quartile[admit.id]] += 1.0
        if outcome.n_conditional:
            shares = {q: v / outcome.n_conditional for q, v in shares.items()}
    return ReplicateResult(index=index, label=label,
                           n_conditional=outcome.n_conditional,
                           quartile_shares=shares,
                           min_gap=min(gaps) if gaps else None,
                           ids=outcome.conditional_ids())


def _aggregate(rows: Sequence[ReplicateResult]) -> RobustnessAggregates:
    counts = np.array([r.n_conditional for r in rows], dtype=float)
    mean_shares = {q: float(np.mean([r.quartile_shares.get(q, 0.0) for r in rows]))
                   for q in QUARTILES}
    return RobustnessAggregates(
        mean_count=float(counts.mean()),
        sd_count=float(counts.std(ddof=1)) if len(counts) > 1 else 0.0,
        mean_quartile_shares=mean_shares,
        frac_any_q3=float(np.mean([r.quartile_shares.get("Q3", 0.0) > 0 for r in rows])),
        frac_any_q4=float(np.mean([r.quartile_shares.get("Q4", 0.0) > 0 for r in rows])),
    )


def _run_indexed(rows_fn: Callable[[int], ReplicateResult], n: int,
                 threads: int = 1) -> tuple[ReplicateResult, ...]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(rows_fn, range(n)))
    else:
        results = [rows_fn(r) for r in range(n)]
    return tuple(sorted(results, key=lambda r: r.index))


def _report(spec: PerturbationSpec, params: dict,
            rows: tuple[ReplicateResult, ...]) -> RobustnessReport:
    return RobustnessReport(kind=spec.kind, params=params, alpha=spec.alpha,
                            base_seed=spec.base_seed, rng_name=RNG_NAME,
                            deviate_method=DEVIATE_METHOD, replicates=rows,
                            aggregates=_aggregate(rows))


def ses_noise_experiment(cohort: Cohort, spec: PerturbationSpec,
                         threads: int = 1) -> RobustnessReport:
    """Perturb raw SES before percentile normalization, re-rank, re-select.

    The merit threshold stays at the original raw-score value: noise touches
    only the SES channel, never the scores the threshold is built from.
    """
    if spec.kind != "ses_noise" or spec.sigma is None:
        raise ValueError("spec must have kind='ses_noise' with sigma set")
    threshold = merit_threshold(cohort, spec.top_fraction)
    policy = CorrectionPolicy(alpha=spec.alpha, mu=spec.mu)
    escs = cohort.escs()
    n = len(cohort)
    baseline = percentile_rank(cohort, method=spec.rank_method)
    true_quartile = {ir.record.id: ir.quartile for ir in baseline.records}

    def one(r: int) -> ReplicateResult:
        noisy = escs + spec.sigma * _normal_deviates(spec.base_seed, r, n)
        records = tuple(replace(rec, escs_raw=float(e))
                        for rec, e in zip(cohort.records, noisy))
        indexed = percentile_rank(Cohort(records=records), method=spec.rank_method)
        outcome = select(indexed, threshold, policy)
        return _replicate_result(r, f"sigma={spec.sigma}", outcome,
                                 true_quartile=true_quartile)

    rows = _run_indexed(one, spec.replicates, threads)
    return _report(spec, {"sigma": spec.sigma, "replicates": spec.replicates,
                          "top_fraction": spec.top_fraction}, rows)


def score_noise_experiment(cohort: Cohort, spec: PerturbationSpec,
                           threads: int = 1) -> RobustnessReport:
    """Add noise to raw scores, recompute the threshold on them, re-select."""
    if spec.kind != "score_noise" or spec.eta_sd is None:
        raise ValueError("spec must have kind='score_noise' with eta_sd set")
    policy = CorrectionPolicy(alpha=spec.alpha, mu=spec.mu)
    merits = cohort.merits()
    n = len(cohort)

    def one(r: int) -> ReplicateResult:
        noisy = merits + spec.eta_sd * _normal_deviates(spec.base_seed, r, n)
        records = tuple(replace(rec, merit_score=float(m))
                        for rec, m in zip(cohort.records, noisy))
        perturbed = Cohort(records=records)
        indexed = percentile_rank(perturbed, method=spec.rank_method)
        threshold = merit_threshold(perturbed, spec.top_fraction)
        outcome = select(indexed, threshold, policy)
        return _replicate_result(r, f"eta_sd={spec.eta_sd}", outcome)

    rows = _run_indexed(one, spec.replicates, threads)
    return _report(spec, {"eta_sd": spec.eta_sd, "replicates": spec.replicates,
                          "top_fraction": spec.top_fraction}, rows)


def variance_scale_experiment(cohort: Cohort, spec: PerturbationSpec) -> RobustnessReport:
    """Rescale score variance about the mean (deterministic, single replicate)."""
    if spec.kind != "variance_scale" or spec.scale is None:
        raise ValueError("spec must have kind='variance_scale' with scale set")
    policy = CorrectionPolicy(alpha=spec.alpha, mu=spec.mu)
    merits = cohort.merits()
    center = float(merits.mean())
    scaled = (merits - center) * np.sqrt(spec.scale) + center
    records = tuple(replace(rec, merit_score=float(m))
                    for rec, m in zip(cohort.records, scaled))
    perturbed = Cohort(records=records)
    indexed = percentile_rank(perturbed, method=spec.rank_method)
    threshold = merit_threshold(perturbed, spec.top_fraction)
    outcome = select(indexed, threshold, policy)
    rows = (_replicate_result(0, f"s={spec.scale}", outcome),)
    return _report(spec, {"scale": spec.scale, "center": center}, rows)


def threshold_shift_experiment(cohort: Cohort, spec: PerturbationSpec) -> RobustnessReport:
    """Re-select under alternative top fractions or additive threshold shifts."""
    if spec.kind != "threshold_shift":
        raise ValueError("spec must have kind='threshold_shift'")
    if not spec.top_fractions and spec.additive_shifts is None:
        raise ValueError("threshold_shift needs top_fractions or additive_shifts")
    policy = CorrectionPolicy(alpha=spec.alpha, mu=spec.mu)
    indexed = percentile_rank(cohort, method=spec.rank_method)

    rows: list[ReplicateResult] = []
    if spec.top_fractions:
        for i, fraction in enumerate(spec.top_fractions):
            threshold = merit_threshold(cohort, fraction)
            outcome = select(indexed, threshold, policy)
            rows.append(_replicate_result(i, f"top={fraction}", outcome))
    else:
        base = merit_threshold(cohort, spec.top_fraction)
        for i, shift in enumerate(spec.additive_shifts):
            shifted = replace(base, t=base.t + shift)
            outcome = select(indexed, shifted, policy)
            rows.append(_replicate_result(i, f"shift={shift:+g}", outcome))
    params = {"top_fractions": list(spec.top_fractions or []),
              "additive_shifts": list(spec.additive_shifts or []),
              "top_fraction": spec.top_fraction}
    return _report(spec, params, tuple(rows))


@dataclass(frozen=True)
class WeightedReport:
    """Population re-aggregation of an unweighted selection run."""

    alpha: float
    n_conditional: int
    weighted_n_conditional: float
    weighted_quartile_shares: dict[str, float]
    weighted_median_ses: float | None
    total_weight: float
    weighted_bottom_half_share: float | None


def weighted_estimates(cohort: SesIndexedCohort, alpha: float,
                       top_fraction: float = 0.10, mu: float = 0.5) -> WeightedReport:
    """Run selection unweighted, then aggregate conditional admits by weight.

    Weights never alter who is selected; they only rescale counts and shares
    to the population the sample represents.
    """
    threshold = merit_threshold(cohort, top_fraction)
    outcome = select(cohort, threshold, CorrectionPolicy(alpha=alpha, mu=mu))
    by_id = {ir.record.id: ir for ir in cohort.records}
    admits = [(by_id[a.id].record.weight, a.s, a.quartile) for a in outcome.conditional]

    total_weight = float(cohort.weights().sum())
    if not admits:
        return WeightedReport(alpha=alpha, n_conditional=0, weighted_n_conditional=0.0,
                              weighted_quartile_shares={q: 0.0 for q in QUARTILES},
                              weighted_median_ses=None, total_weight=total_weight,
                              weighted_bottom_half_share=None)

    w = np.array([a[0] for a in admits])
    s = np.array([a[1] for a in admits])
    w_sum = float(w.sum())
    shares = {q: float(w[[a[2] == q for a in admits]].sum() / w_sum) if w_sum else 0.0
              for q in QUARTILES}
    order = np.argsort(s, kind="stable")
    cum = np.cumsum(w[order])
    median_idx = int(np.searchsorted(cum, 0.5 * w_sum))
    median_ses = float(s[order][min(median_idx, len(s) - 1)])
    bottom_half = float(w[s < mu].sum() / w_sum) if w_sum else 0.0
    return WeightedReport(alpha=alpha, n_conditional=outcome.n_conditional,
                          weighted_n_conditional=w_sum,
                          weighted_quartile_shares=shares,
                          weighted_median_ses=median_ses, total_weight=total_weight,
                          weighted_bottom_half_share=bottom_half)


def report_rows(report: RobustnessReport) -> list[dict]:
    """CSV-ready flat rows, one per replicate."""
    rows = []
    for r in report.replicates:
        row = {"replicate": r.index, "label": r.label,
               "n_conditional": r.n_conditional, "min_gap": r.min_gap}
        for q in QUARTILES:
            row[f"share_{q.lower()}"] = r.quartile_shares.get(q, 0.0)
        rows.append(row)
    return rows


def report_summary(report: RobustnessReport) -> dict:
    """JSON-ready report: parameters, per-replicate rows, aggregates."""
    agg = report.aggregates
    return {
        "kind": report.kind,
        "alpha": report.alpha,
        "params": report.params,
        "base_seed": report.base_seed,
        "rng": report.rng_name,
        "deviates": report.deviate_method,
        "replicates": report_rows(report),
        "aggregates": {
            "mean_count": agg.mean_count,
            "sd_count": agg.sd_count,
            "mean_quartile_shares": agg.mean_quartile_shares,
            "frac_any_q3": agg.frac_any_q3,
            "frac_any_q4": agg.frac_any_q4,
        },
    }
