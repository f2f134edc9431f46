"""Command-line entry point: `amf <subcommand>`.

Subcommands: ingest, run, calibrate, tradeoff, robustness, weighted, dbn,
verify, report. Configuration comes from a single JSON file with sections
{data, policy, feasibility, robustness, dbn, spine}; command-line flags
override file values, which override built-in defaults. Output directories
are written atomically (staged in a temp dir, then renamed) and always carry
exactly one manifest.

Exit codes: 0 success, 2 configuration error (including unknown flags),
3 data error, 4 kill-switch abort, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from ._canonical import canonical_json, digest_of, sha256_hex
from .calibration import (FeasibilityBounds, SupportBand, calibration_table, curve_rows,
                          feasible_alpha, linear_fit, ses_gradient, tradeoff_curve)
from .correction import CorrectionPolicy, SunsetViolationError, emergency_from_csv
from .dataset import DataError, SchemaMapping, cohort_to_csv, load_cohort, remove_ses_outliers
from .dbn import DbnSpec, default_population, mobility_metrics, occupancy_rows, simulate_population
from .perturbation import (PerturbationSpec, report_summary, ses_noise_experiment,
                           score_noise_experiment, threshold_shift_experiment,
                           variance_scale_experiment, weighted_estimates)
from .reporting import emit_report, selection_detail
from .ses_index import ReferenceDistribution, percentile_rank, reanchor_percentiles
from .spine import KillSwitchAbort, SpineConfig, persist_spine, run_spine, verify_closure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_KILLSWITCH = 4
EXIT_VERIFY = 5

CONFIG_SECTIONS = {"data", "policy", "feasibility", "robustness", "dbn", "spine"}


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    unknown = set(cfg) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _get(cfg: dict, section: str, key: str, override, default):
    if override is not None:
        return override
    return cfg.get(section, {}).get(key, default)


def _seed(args, cfg: dict, section: str = "robustness") -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("AMF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"AMF_SEED must be an integer, got {env!r}")
    return int(cfg.get(section, {}).get("seed", 0))


def _schema(args, cfg: dict) -> SchemaMapping:
    columns = dict(cfg.get("data", {}).get("columns", {}))
    for field, flag in (("merit", "col_merit"), ("escs", "col_escs"), ("id", "col_id"),
                        ("weight", "col_weight"), ("pre_optin", "col_pre_optin"),
                        ("post_optin", "col_post_optin")):
        value = getattr(args, flag, None)
        if value is not None:
            columns[field] = value
    if "merit" not in columns or "escs" not in columns:
        raise ConfigError("schema needs at least merit and escs columns "
                          "(--col-merit/--col-escs or config data.columns)")
    return SchemaMapping.from_dict(columns)


def _data_path(args, cfg: dict) -> str:
    path = getattr(args, "data", None) or cfg.get("data", {}).get("path")
    if not path:
        raise ConfigError("no input data file (--data or config data.path)")
    return path


def _policy(args, cfg: dict) -> CorrectionPolicy:
    alpha = _get(cfg, "policy", "alpha", getattr(args, "alpha", None), 10.0)
    mu = _get(cfg, "policy", "mu", getattr(args, "mu", None), 0.5)
    clamp = not bool(_get(cfg, "policy", "allow_negative_correction",
                          getattr(args, "allow_negative_correction", None) or None, False))
    return CorrectionPolicy(alpha=float(alpha), mu=float(mu), clamp_nonnegative=clamp)


def _emergency(args, cfg: dict):
    path = _get(cfg, "policy", "emergency_file", getattr(args, "emergency_file", None), None)
    if path is None:
        return None
    beta = _get(cfg, "policy", "emergency_beta", getattr(args, "emergency_beta", None), 0.0)
    return emergency_from_csv(path, float(beta))


def _bounds(cfg: dict) -> FeasibilityBounds | None:
    section = cfg.get("feasibility")
    if not section:
        return None
    schedule = tuple(SupportBand(alpha_lo=float(lo), alpha_hi=float(hi),
                                 per_student_subsidy=float(sub))
                     for lo, hi, sub in section.get("support_schedule", []))
    return FeasibilityBounds(capacity_seats=int(section.get("capacity_seats", 0)),
                             budget_total=float(section.get("budget_total", 0.0)),
                             per_student_cost=float(section.get("per_student_cost", 0.0)),
                             support_schedule=schedule)


def _parse_float_list(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}")


def _ingest(args, cfg: dict):
    """Load, clean, and index a cohort the way every data-facing command does."""
    schema = _schema(args, cfg)
    cohort = load_cohort(_data_path(args, cfg), schema)
    quartile_method = _get(cfg, "data", "quartile_method",
                           getattr(args, "quartile_method", None), "linear")
    cleaned, report = remove_ses_outliers(cohort, quartile_method=quartile_method)
    rank_method = _get(cfg, "policy", "rank_method", getattr(args, "rank_method", None), "hazen")
    reference_path = _get(cfg, "data", "national_reference",
                          getattr(args, "national_reference", None), None)
    if reference_path:
        indexed = reanchor_percentiles(cleaned, ReferenceDistribution.from_csv(reference_path),
                                       rank_method=rank_method)
    else:
        indexed = percentile_rank(cleaned, method=rank_method)
    return cohort, cleaned, report, indexed


def _manifest(out: Path, subcommand: str, cfg: dict, data_path: str | None,
              seed: int | None) -> None:
    input_digest = None
    if data_path is not None:
        try:
            input_digest = sha256_hex(Path(data_path).read_bytes())
        except OSError as exc:
            raise DataError(f"cannot digest input {data_path!r}: {exc}") from exc
    doc = {
        "tool_version": __version__,
        "subcommand": subcommand,
        "config_digest": digest_of(cfg),
        "input_digest": input_digest,
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="") as fh:
        fh.write(canonical_json(doc) + "\n")


def _write_json(out: Path, name: str, obj) -> None:
    with open(out / name, "w", encoding="utf-8", newline="") as fh:
        fh.write(canonical_json(obj) + "\n")


class _AtomicDir:
    """Stage artifacts in a temp dir, rename into place on success."""

    def __init__(self, target: str):
        self.target = Path(target)

    def __enter__(self) -> Path:
        if self.target.exists():
            raise ConfigError(f"output directory {self.target} already exists")
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self._tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.",
                                          dir=self.target.parent))
        return self._tmp

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is None:
            os.replace(self._tmp, self.target)
        else:
            import shutil
            shutil.rmtree(self._tmp, ignore_errors=True)


def _cmd_ingest(args, cfg: dict) -> int:
    cohort, cleaned, report, indexed = _ingest(args, cfg)
    with _AtomicDir(args.out) as out:
        with open(out / "cohort.csv", "w", encoding="utf-8", newline="") as fh:
            cohort_to_csv(cleaned, fh)
        _write_json(out, "outlier_report.json", {
            "q1": report.q1, "q3": report.q3, "iqr": report.iqr,
            "lower_fence": report.lower_fence, "upper_fence": report.upper_fence,
            "removed_ids": list(report.removed_ids),
            "n_before": report.n_before, "n_after": report.n_after,
            "n_dropped_missing": cohort.n_dropped_missing,
        })
        _manifest(out, "ingest", cfg, _data_path(args, cfg), None)
    print(f"ingest: {report.n_before} loaded, {len(report.removed_ids)} SES outliers "
          f"removed, {report.n_after} kept -> {args.out}")
    return EXIT_OK


def _spine_config(args, cfg: dict) -> SpineConfig:
    policy = _policy(args, cfg)
    spine_cfg = cfg.get("spine", {})
    bounds = spine_cfg.get("alpha_bounds", [0.0, 15.0])
    return SpineConfig(
        schema=_schema(args, cfg),
        policy=policy,
        emergency=_emergency(args, cfg),
        top_fraction=float(_get(cfg, "policy", "top_fraction",
                                getattr(args, "top_fraction", None), 0.10)),
        rank_method=_get(cfg, "policy", "rank_method",
                         getattr(args, "rank_method", None), "hazen"),
        alpha_bounds=(float(bounds[0]), float(bounds[1])),
        cycle_id=str(spine_cfg.get("cycle_id", "cycle-1")),
        rng_seed=_seed(args, cfg, "spine"),
        quartile_method=_get(cfg, "data", "quartile_method",
                             getattr(args, "quartile_method", None), "linear"),
        k_rounding=_get(cfg, "policy", "k_rounding", None, "half_away_from_zero"),
        national_reference=_get(cfg, "data", "national_reference",
                                getattr(args, "national_reference", None), None),
        pii_denylist=tuple(spine_cfg.get("pii_denylist",
                                         SpineConfig.__dataclass_fields__["pii_denylist"].default)),
    )


def _cmd_run(args, cfg: dict) -> int:
    config = _spine_config(args, cfg)
    data = _data_path(args, cfg)
    result = run_spine(data, config)
    with _AtomicDir(args.out) as out:
        persist_spine(result, out, config)
        _write_json(out, "detail.json",
                    selection_detail(result.outcome, len(result.cohort)))
        _manifest(out, "run", cfg, data, config.rng_seed)
    o = result.outcome
    print(f"run: T={o.threshold.t} (k={o.threshold.k}), {o.n_regular} regular, "
          f"{o.n_conditional} conditional, seal {result.seal.seal_digest[:16]}... "
          f"-> {args.out}")
    return EXIT_OK


def _cmd_calibrate(args, cfg: dict) -> int:
    _, cleaned, _, _ = _ingest(args, cfg)
    gradient = ses_gradient(cleaned, include_intercept=not args.no_intercept)
    alphas = _parse_float_list(args.alphas) or tuple(
        float(a) for a in cfg.get("policy", {}).get("alphas", (5.0, 10.0, 15.0)))
    table = calibration_table(alphas, gradient)
    with _AtomicDir(args.out) as out:
        _write_json(out, "gradient.json", {
            "beta_gradient": gradient.beta_gradient, "intercept": gradient.intercept,
            "r_squared": gradient.r_squared, "sigma_escs": gradient.sigma_escs,
            "delta_per_sd": gradient.delta_per_sd, "n": gradient.n,
            "include_intercept": gradient.include_intercept,
        })
        _write_json(out, "calibration.json", [
            {"alpha": r.alpha, "max_correction": r.max_correction,
             "fraction_of_ses_effect": r.fraction_of_ses_effect,
             "percent_of_ses_effect": r.percent_of_ses_effect} for r in table])
        with open(out / "calibration.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("alpha,max_correction,fraction_of_ses_effect,percent_of_ses_effect\n")
            for r in table:
                fh.write(f"{r.alpha!r},{r.max_correction!r},"
                         f"{r.fraction_of_ses_effect!r},{r.percent_of_ses_effect}\n")
        _manifest(out, "calibrate", cfg, _data_path(args, cfg), None)
    print(f"calibrate: beta={gradient.beta_gradient:.2f}, R^2={gradient.r_squared:.3f}, "
          f"sigma={gradient.sigma_escs:.3f}, delta/sd={gradient.delta_per_sd:.2f} "
          f"-> {args.out}")
    return EXIT_OK


def _cmd_tradeoff(args, cfg: dict) -> int:
    _, cleaned, _, indexed = _ingest(args, cfg)
    alphas = _parse_float_list(args.alphas) or tuple(
        float(a) for a in cfg.get("policy", {}).get("alphas", (5.0, 10.0, 15.0)))
    top_fraction = float(_get(cfg, "policy", "top_fraction", args.top_fraction, 0.10))
    bounds = _bounds(cfg)
    curve = tradeoff_curve(indexed, alphas, top_fraction=top_fraction, bounds=bounds)
    rows = curve_rows(curve)
    bundle = {"curve": rows}
    admissible = feasible_alpha(curve, bounds) if bounds is not None else None
    with _AtomicDir(args.out) as out:
        _write_json(out, "curve.json", {
            "top_fraction": top_fraction, "points": rows,
            "feasible_alphas": list(admissible) if admissible is not None else None,
            "support_schedule": ([[b.alpha_lo, b.alpha_hi, b.per_student_subsidy]
                                  for b in bounds.support_schedule] if bounds else None),
        })
        emit_report(bundle, ["csv"] + (["svg-plots"] if args.svg else []), out)
        _manifest(out, "tradeoff", cfg, _data_path(args, cfg), None)
    counts = [p.n_conditional for p in curve]
    line = ", ".join(f"alpha={p.alpha:g}: {p.n_conditional}" for p in curve)
    if len(curve) >= 2:
        _, _, r2 = linear_fit([p.alpha for p in curve], counts)
        line += f" (count-vs-alpha R^2={r2:.3f})"
    if admissible is not None:
        line += f"; feasible alphas: {list(admissible)}"
    print(f"tradeoff: {line} -> {args.out}")
    return EXIT_OK


def _cmd_robustness(args, cfg: dict) -> int:
    _, cleaned, _, _ = _ingest(args, cfg)
    section = cfg.get("robustness", {})
    kind_map = {"ses": "ses_noise", "score": "score_noise", "variance": "variance_scale",
                "threshold": "threshold_shift"}
    kind = kind_map.get(args.kind, args.kind) if args.kind else section.get("kind")
    if kind not in kind_map.values():
        raise ConfigError(f"robustness kind must be one of {sorted(kind_map)} "
                          f"(or their full names), got {kind!r}")
    seed = _seed(args, cfg)
    spec = PerturbationSpec(
        kind=kind,
        alpha=float(_get(cfg, "policy", "alpha", args.alpha, 10.0)),
        replicates=int(_get(cfg, "robustness", "replicates", args.replicates, 200)),
        base_seed=seed,
        sigma=args.sigma if args.sigma is not None else section.get("sigma"),
        eta_sd=args.eta_sd if args.eta_sd is not None else section.get("eta_sd"),
        scale=args.s if args.s is not None else section.get("scale"),
        top_fractions=_parse_float_list(args.top_fractions)
        or (tuple(section["top_fractions"]) if section.get("top_fractions") else None),
        additive_shifts=_parse_float_list(args.shifts)
        or (tuple(section["shifts"]) if section.get("shifts") else None),
        top_fraction=float(_get(cfg, "policy", "top_fraction", args.top_fraction, 0.10)),
        rank_method=_get(cfg, "policy", "rank_method", args.rank_method, "hazen"),
        mu=float(_get(cfg, "policy", "mu", args.mu, 0.5)),
    )
    if kind == "ses_noise":
        report = ses_noise_experiment(cleaned, spec, threads=args.threads)
    elif kind == "score_noise":
        report = score_noise_experiment(cleaned, spec, threads=args.threads)
    elif kind == "variance_scale":
        report = variance_scale_experiment(cleaned, spec)
    else:
        report = threshold_shift_experiment(cleaned, spec)
    summary = report_summary(report)
    with _AtomicDir(args.out) as out:
        _write_json(out, "robustness.json", summary)
        emit_report({"robustness": [summary]}, ["csv"], out)
        _manifest(out, "robustness", cfg, _data_path(args, cfg), seed)
    agg = report.aggregates
    print(f"robustness[{kind}]: mean count {agg.mean_count:g} "
          f"(sd {agg.sd_count:.3g}) over {len(report.replicates)} replicate(s); "
          f"any-Q3 {agg.frac_any_q3:.1%}, any-Q4 {agg.frac_any_q4:.1%} -> {args.out}")
    return EXIT_OK


def _cmd_weighted(args, cfg: dict) -> int:
    _, cleaned, _, indexed = _ingest(args, cfg)
    alpha = float(_get(cfg, "policy", "alpha", args.alpha, 15.0))
    top_fraction = float(_get(cfg, "policy", "top_fraction", args.top_fraction, 0.10))
    mu = float(_get(cfg, "policy", "mu", args.mu, 0.5))
    report = weighted_estimates(indexed, alpha, top_fraction=top_fraction, mu=mu)
    doc = {
        "alpha": report.alpha, "n_conditional": report.n_conditional,
        "weighted_n_conditional": report.weighted_n_conditional,
        "weighted_quartile_shares": report.weighted_quartile_shares,
        "weighted_median_ses": report.weighted_median_ses,
        "weighted_bottom_half_share": report.weighted_bottom_half_share,
        "total_weight": report.total_weight,
    }
    with _AtomicDir(args.out) as out:
        _write_json(out, "weighted.json", doc)
        _manifest(out, "weighted", cfg, _data_path(args, cfg), None)
    print(f"weighted: {report.n_conditional} sample admits -> "
          f"{report.weighted_n_conditional:.0f} weighted at alpha={alpha:g} -> {args.out}")
    return EXIT_OK


def _dbn_spec(cfg: dict) -> DbnSpec:
    section = cfg.get("dbn", {})
    kwargs = {}
    for key in ("gamma_ses", "kappa", "c_cap", "ses_sign", "generations"):
        if key in section:
            kwargs[key] = section[key]
    for key in ("base_matrix", "admit_matrix"):
        if key in section:
            kwargs[key] = tuple(tuple(float(x) for x in row) for row in section[key])
    if "v0" in section:
        kwargs["v0"] = tuple(float(x) for x in section["v0"])
    for key in ("emission_means", "emission_sds"):
        if key in section:
            kwargs[key] = tuple(float(x) for x in section[key])
    return DbnSpec(**kwargs)


def _cmd_dbn(args, cfg: dict) -> int:
    spec = _dbn_spec(cfg)
    n = int(_get(cfg, "dbn", "population_n", args.population_n, 2000))
    alpha = float(_get(cfg, "policy", "alpha", args.alpha, 10.0))
    mode = args.mode or cfg.get("dbn", {}).get("mode", "expected")
    seed = _seed(args, cfg, "dbn")
    baseline = simulate_population(spec, default_population(n), mode=mode, seed=seed)
    corrected = simulate_population(spec, default_population(n, alpha=alpha),
                                    mode=mode, seed=seed)
    improvement_pp = 100 * (baseline.q1_share_final - corrected.q1_share_final)
    metrics = mobility_metrics(corrected)
    doc = {
        "mode": mode, "n_individuals": n, "generations": spec.generations,
        "alpha": alpha,
        "baseline_q1_share_final": baseline.q1_share_final,
        "corrected_q1_share_final": corrected.q1_share_final,
        "improvement_pp": improvement_pp,
        "upward_rate": metrics.upward_rate,
        "downward_rate": metrics.downward_rate,
        "top_state_reach": metrics.top_state_reach,
    }
    bundle = {"dbn": {"occupancy": occupancy_rows(corrected),
                      "q1_share_final": corrected.q1_share_final,
                      "generations": spec.generations, "mode": mode,
                      "n_individuals": n, "improvement_pp": improvement_pp}}
    with _AtomicDir(args.out) as out:
        _write_json(out, "dbn.json", doc)
        emit_report(bundle, ["csv", "svg-plots"], out)
        _manifest(out, "dbn", cfg, None, seed)
    print(f"dbn: baseline Q1 {100 * baseline.q1_share_final:.2f}%, corrected "
          f"{100 * corrected.q1_share_final:.2f}% (improvement {improvement_pp:.4f} pp) "
          f"over {spec.generations} generations -> {args.out}")
    return EXIT_OK


def _cmd_verify(args, cfg: dict) -> int:
    verdict = verify_closure(args.directory)
    if verdict.ok:
        print(f"verify: {args.directory} OK (chain, seal, and re-derived outcome match)")
        return EXIT_OK
    print(f"verify: {args.directory} FAILED")
    for failure in verdict.failures:
        print(f"  - {failure}")
    return EXIT_VERIFY


def _load_optional_json(path: Path) -> dict | list | None:
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _cmd_report(args, cfg: dict) -> int:
    bundle: dict = {}
    run_dir = Path(args.from_dir) if args.from_dir else None
    if run_dir is not None:
        detail = _load_optional_json(run_dir / "detail.json")
        summary = _load_optional_json(run_dir / "summary.json")
        if detail:
            bundle["selection"] = [detail]
        if summary:
            bundle["thresholds"] = [{"top_fraction": summary["top_fraction"],
                                     "k": summary["k"], "t": summary["threshold"]}]
        input_stage = _load_optional_json(run_dir / "stages" / "input.json")
        if input_stage:
            bundle["cleaning"] = {"n_before": input_stage["outliers"]["n_before"],
                                  "n_after": input_stage["outliers"]["n_after"]}
    for extra, key in ((args.tradeoff_dir, "curve"), (args.weighted_dir, "weighted")):
        if extra:
            doc = _load_optional_json(Path(extra) / ("curve.json" if key == "curve"
                                                     else "weighted.json"))
            if doc is not None:
                bundle[key] = doc["points"] if key == "curve" else doc
    if args.calibrate_dir:
        gradient = _load_optional_json(Path(args.calibrate_dir) / "gradient.json")
        table = _load_optional_json(Path(args.calibrate_dir) / "calibration.json")
        if gradient:
            bundle["gradient"] = gradient
        if table:
            bundle["calibration"] = table
    robustness = []
    for directory in args.robustness_dir or []:
        doc = _load_optional_json(Path(directory) / "robustness.json")
        if doc is not None:
            robustness.append(doc)
    if robustness:
        bundle["robustness"] = robustness
    if args.dbn_dir:
        doc = _load_optional_json(Path(args.dbn_dir) / "dbn.json")
        occupancy = None
        occ_path = Path(args.dbn_dir) / "occupancy.csv"
        if occ_path.exists():
            lines = occ_path.read_text(encoding="utf-8").splitlines()
            headers = lines[0].split(",")
            occupancy = [{h: (int(v) if h == "generation" else float(v))
                          for h, v in zip(headers, line.split(","))}
                         for line in lines[1:] if line]
        if doc is not None:
            bundle["dbn"] = {"occupancy": occupancy or [],
                             "q1_share_final": doc["corrected_q1_share_final"],
                             "generations": doc["generations"], "mode": doc["mode"],
                             "n_individuals": doc["n_individuals"],
                             "improvement_pp": doc["improvement_pp"]}

    formats = [f.strip() for f in (args.formats or "markdown,json").split(",") if f.strip()]
    with _AtomicDir(args.out) as out:
        written = emit_report(bundle, formats, out)
        _manifest(out, "report", cfg, None, None)
    print(f"report: wrote {', '.join(written) or 'nothing'} -> {args.out}")
    return EXIT_OK


def _add_schema_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--col-merit", dest="col_merit")
    p.add_argument("--col-escs", dest="col_escs")
    p.add_argument("--col-id", dest="col_id")
    p.add_argument("--col-weight", dest="col_weight")
    p.add_argument("--col-pre-optin", dest="col_pre_optin")
    p.add_argument("--col-post-optin", dest="col_post_optin")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="input delimited file")
    p.add_argument("--quartile-method", dest="quartile_method",
                   help="quartile estimator for outlier fences (default linear)")
    p.add_argument("--national-reference", dest="national_reference",
                   help="one-column CSV of national reference SES values")
    p.add_argument("--rank-method", dest="rank_method", choices=("hazen", "inclusive"))
    _add_schema_flags(p)


def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--top-fraction", dest="top_fraction", type=float)
    p.add_argument("--emergency-file", dest="emergency_file")
    p.add_argument("--emergency-beta", dest="emergency_beta", type=float)
    p.add_argument("--allow-negative-correction", dest="allow_negative_correction",
                   action="store_true",
                   help="debug: unclamped corrections (never feeds selection)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amf",
                                     description="Equity-corrected non-displacing "
                                                 "selection engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ingest", help="load, validate, and clean a cohort")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_data_flags(p)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("run", help="execute the five-stage pipeline and seal it")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_data_flags(p)
    _add_policy_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("calibrate", help="gradient estimate and alpha calibration table")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--alphas", help="comma-separated alpha grid (default 5,10,15)")
    p.add_argument("--no-intercept", dest="no_intercept", action="store_true")
    _add_data_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("tradeoff", help="alpha trade-off curve and feasibility")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--alphas")
    p.add_argument("--top-fraction", dest="top_fraction", type=float)
    p.add_argument("--svg", action="store_true")
    _add_data_flags(p)
    p.set_defaults(func=_cmd_tradeoff)

    p = sub.add_parser("robustness", help="seeded perturbation experiments")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("ses", "score", "variance", "threshold"))
    p.add_argument("--sigma", type=float)
    p.add_argument("--eta-sd", dest="eta_sd", type=float)
    p.add_argument("--s", type=float, help="variance scale factor")
    p.add_argument("--top-fractions", dest="top_fractions")
    p.add_argument("--shifts", help="comma-separated additive threshold shifts")
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--top-fraction", dest="top_fraction", type=float)
    p.add_argument("--rank-method", dest="rank_method", choices=("hazen", "inclusive"))
    _add_schema_flags(p)
    p.add_argument("--data")
    p.add_argument("--quartile-method", dest="quartile_method")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("weighted", help="population-weighted re-aggregation")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--top-fraction", dest="top_fraction", type=float)
    _add_data_flags(p)
    p.set_defaults(func=_cmd_weighted)

    p = sub.add_parser("dbn", help="long-run mobility simulation")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--population-n", dest="population_n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mode", choices=("expected", "sample"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_dbn)

    p = sub.add_parser("verify", help="re-derive and check a sealed run directory")
    p.add_argument("directory")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="markdown/JSON/CSV/SVG comparison report")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--from", dest="from_dir", help="a sealed run directory")
    p.add_argument("--tradeoff", dest="tradeoff_dir")
    p.add_argument("--calibrate", dest="calibrate_dir")
    p.add_argument("--weighted", dest="weighted_dir")
    p.add_argument("--robustness", dest="robustness_dir", action="append")
    p.add_argument("--dbn", dest="dbn_dir")
    p.add_argument("--formats", help="comma list: markdown,json,csv,svg-plots")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    try:
        cfg = _load_config(cfg_path)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, SunsetViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KillSwitchAbort as exc:
        print(f"kill-switch abort ({exc.cause}): {exc.detail}", file=sys.stderr)
        return EXIT_KILLSWITCH


if __name__ == "__main__":
    sys.exit(main())
