"""Report emission: markdown/JSON/CSV summaries and deterministic SVG plots.

The markdown report lays computed values side by side with the published
evaluation values for this mechanism on the PISA 2022 Korea cohort, flagging
each comparison as match or mismatch. Published values live in a static
fixture keyed by what they measure. Plots are text SVG so artifacts diff
cleanly; no raster output.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._canonical import canonical_json
from .calibration import linear_fit
from .selection import SelectionOutcome
from .ses_index import QUARTILES


@dataclass(frozen=True)
class PublishedValue:
    key: str
    description: str
    value: float
    tol_kind: str = "exact"  # exact | abs | rel
    tol: float = 0.0

    def matches(self, computed: float | None) -> bool | None:
        if computed is None:
            return None
        if self.tol_kind == "exact":
            return computed == self.value
        if self.tol_kind == "abs":
            return abs(computed - self.value) <= self.tol
        if self.tol_kind == "rel":
            return abs(computed - self.value) <= self.tol * abs(self.value)
        raise ValueError(f"unknown tolerance kind {self.tol_kind}")


PUBLISHED: tuple[PublishedValue, ...] = (
    PublishedValue("cleaning.n_before", "cohort size before SES outlier removal", 6391),
    PublishedValue("cleaning.n_removed", "SES outliers removed", 14),
    PublishedValue("cleaning.n_after", "analytic cohort size", 6377),
    PublishedValue("threshold.top10", "raw threshold, top 10%", 666.62, "abs", 0.01),
    PublishedValue("threshold.top05", "raw threshold, top 5%", 698.43, "abs", 0.01),
    PublishedValue("threshold.top15", "raw threshold, top 15%", 642.94, "abs", 0.01),
    PublishedValue("admits.alpha5", "additional admits, alpha=5", 4),
    PublishedValue("admits.alpha10", "additional admits, alpha=10", 6),
    PublishedValue("admits.alpha15", "additional admits, alpha=15", 9),
    PublishedValue("mean_c.alpha5", "mean correction among admits, alpha=5", 1.48, "abs", 0.05),
    PublishedValue("mean_c.alpha10", "mean correction among admits, alpha=10", 2.99, "abs", 0.05),
    PublishedValue("mean_c.alpha15", "mean correction among admits, alpha=15", 4.76, "abs", 0.05),
    PublishedValue("min_c.alpha5", "min correction among admits, alpha=5", 0.99, "abs", 0.05),
    PublishedValue("min_c.alpha10", "min correction among admits, alpha=10", 1.98, "abs", 0.05),
    PublishedValue("min_c.alpha15", "min correction among admits, alpha=15", 2.97, "abs", 0.05),
    PublishedValue("max_c.alpha5", "max correction among admits, alpha=5", 2.32, "abs", 0.05),
    PublishedValue("max_c.alpha10", "max correction among admits, alpha=10", 4.64, "abs", 0.05),
    PublishedValue("max_c.alpha15", "max correction among admits, alpha=15", 6.95, "abs", 0.05),
    PublishedValue("q1_pct.alpha5", "bottom-quartile share of admits (%), alpha=5", 50),
    PublishedValue("q1_pct.alpha10", "bottom-quartile share of admits (%), alpha=10", 67),
    PublishedValue("q1_pct.alpha15", "bottom-quartile share of admits (%), alpha=15", 78),
    PublishedValue("gap_min.alpha15", "min corrected exceedance, alpha=15", 0.16, "abs", 0.05),
    PublishedValue("gap_max.alpha15", "max corrected exceedance, alpha=15", 6.14, "abs", 0.05),
    PublishedValue("gradient.beta", "achievement slope per SES unit", 47.29, "rel", 0.01),
    PublishedValue("gradient.r_squared", "gradient fit R^2", 0.136, "rel", 0.01),
    PublishedValue("gradient.sigma_escs", "cohort SES standard deviation", 0.823, "rel", 0.01),
    PublishedValue("gradient.delta_per_sd", "achievement gap per SES sd", 38.90, "rel", 0.01),
    PublishedValue("calibration.pct.alpha5", "max correction as % of SES effect, alpha=5", 6),
    PublishedValue("calibration.pct.alpha10", "max correction as % of SES effect, alpha=10", 13),
    PublishedValue("calibration.pct.alpha15", "max correction as % of SES effect, alpha=15", 19),
    PublishedValue("linearity.r_squared", "R^2 of admits vs alpha line", 0.987, "abs", 0.01),
    PublishedValue("variance.s08.count", "admits under variance scale 0.8, alpha=10", 7),
    PublishedValue("variance.s12.count", "admits under variance scale 1.2, alpha=10", 6),
    PublishedValue("sweep.top05.count", "admits at top 5% threshold, alpha=10", 6),
    PublishedValue("sweep.top10.count", "admits at top 10% threshold, alpha=10", 6),
    PublishedValue("sweep.top15.count", "admits at top 15% threshold, alpha=10", 8),
    PublishedValue("weighted.alpha15", "population-weighted admits, alpha=15", 760, "rel", 0.05),
    PublishedValue("dbn.q1_final_pct", "long-run bottom-tier share (%)", 39.5, "abs", 1.0),
)

_PUBLISHED_BY_KEY = {p.key: p for p in PUBLISHED}


def published_value(key: str) -> PublishedValue:
    return _PUBLISHED_BY_KEY[key]


def selection_detail(outcome: SelectionOutcome, n_cohort: int) -> dict:
    """Per-alpha statistics used by reports: counts, correction and gap spreads."""
    cs = np.array([a.c for a in outcome.conditional])
    gaps = np.array([a.gap for a in outcome.conditional])
    deltas = np.array([a.delta for a in outcome.conditional])

    def stats(x: np.ndarray) -> dict:
        if len(x) == 0:
            return {"min": None, "max": None, "mean": None, "sd": None}
        return {"min": float(x.min()), "max": float(x.max()),
                "mean": float(x.mean()),
                "sd": float(x.std(ddof=1)) if len(x) > 1 else 0.0}

    return {
        "alpha": outcome.alpha,
        "threshold": outcome.threshold.t,
        "n_cohort": n_cohort,
        "n_regular": outcome.n_regular,
        "n_conditional": outcome.n_conditional,
        "share_of_cohort": outcome.n_conditional / n_cohort if n_cohort else 0.0,
        "quartile_composition": dict(outcome.quartile_composition),
        "c": stats(cs),
        "gap": stats(gaps),
        "delta": stats(deltas),
    }


def _fmt(x, digits: int = 4) -> str:
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if x == int(x) and abs(x) < 1e15:
            return str(int(x))
        return f"{x:.{digits}g}" if abs(x) < 1e-4 or abs(x) >= 1e6 else f"{round(x, digits):g}"
    return str(x)


def _md_table(headers: Sequence[str], rows: Sequence[Sequence]) -> list[str]:
    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    return lines


def _flag(published: PublishedValue | None, computed) -> str:
    if published is None or computed is None:
        return "-"
    verdict = published.matches(computed)
    if verdict is None:
        return "-"
    return "match" if verdict else "MISMATCH"


def _compare_row(key: str, computed) -> list:
    pub = _PUBLISHED_BY_KEY.get(key)
    return [pub.description if pub else key, _fmt(computed),
            _fmt(pub.value) if pub else "-", _flag(pub, computed)]


def render_markdown(bundle: Mapping) -> str:
    """Markdown comparison report for whatever sections the bundle carries."""
    lines: list[str] = ["# Selection engine report", ""]

    cleaning = bundle.get("cleaning")
    if cleaning:
        lines += ["## Cohort cleaning", ""]
        lines += _md_table(
            ["quantity", "computed", "published", "flag"],
            [_compare_row("cleaning.n_before", cleaning.get("n_before")),
             _compare_row("cleaning.n_removed",
                          cleaning.get("n_before", 0) - cleaning.get("n_after", 0)),
             _compare_row("cleaning.n_after", cleaning.get("n_after"))])
        lines.append("")

    thresholds = bundle.get("thresholds")
    if thresholds:
        lines += ["## Merit thresholds", ""]
        rows = []
        for t in thresholds:
            key = f"threshold.top{int(round(t['top_fraction'] * 100)):02d}"
            pub = _PUBLISHED_BY_KEY.get(key)
            rows.append([f"top {t['top_fraction']:.0%}", t["k"], _fmt(t["t"]),
                         _fmt(pub.value) if pub else "-", _flag(pub, t["t"])])
        lines += _md_table(["fraction", "k", "computed T", "published T", "flag"], rows)
        lines.append("")

    selection = bundle.get("selection")
    if selection:
        lines += ["## Additional admits by correction strength", ""]
        rows = []
        for det in selection:
            alpha = det["alpha"]
            key = f"admits.alpha{int(alpha):d}"
            pub = _PUBLISHED_BY_KEY.get(key)
            rows.append([alpha, det["n_conditional"],
                         f"{det['share_of_cohort']:.2%}",
                         _fmt(det["c"]["mean"]),
                         _fmt(pub.value) if pub else "-",
                         _flag(pub, det["n_conditional"])])
        lines += _md_table(["alpha", "additional admits", "share of cohort",
                            "mean correction", "published admits", "flag"], rows)
        lines.append("")

        lines += ["## Quartile composition of additional admits", ""]
        rows = []
        for det in selection:
            alpha = det["alpha"]
            comp = det["quartile_composition"]
            pub = _PUBLISHED_BY_KEY.get(f"q1_pct.alpha{int(alpha):d}")
            q1_pct = round(100 * comp.get("Q1", 0.0))
            rows.append([alpha] + [f"{comp.get(q, 0.0):.0%}" for q in QUARTILES]
                        + [_fmt(pub.value) + "%" if pub else "-", _flag(pub, q1_pct)])
        lines += _md_table(["alpha", "Q1", "Q2", "Q3", "Q4",
                            "published Q1", "flag"], rows)
        lines.append("")

        lines += ["## Correction magnitudes among additional admits", ""]
        rows = []
        for det in selection:
            alpha = int(det["alpha"])
            c = det["c"]
            rows.append([alpha, _fmt(c["min"]), _fmt(c["max"]), _fmt(c["mean"]), _fmt(c["sd"]),
                         _flag(_PUBLISHED_BY_KEY.get(f"mean_c.alpha{alpha}"), c["mean"])])
        lines += _md_table(["alpha", "min", "max", "mean", "sd", "mean flag"], rows)
        lines.append("")

        lines += ["## Threshold exceedance and raw distance", "",
                  "Corrected exceedance (gap) and raw distance below the threshold "
                  "(delta) are distinct per-record quantities (gap = c - delta); the "
                  "published summary tables report identical spreads for both, so "
                  "both computed spreads are shown without forcing agreement.", ""]
        rows = []
        for det in selection:
            g, d = det["gap"], det["delta"]
            rows.append([det["alpha"], _fmt(g["min"]), _fmt(g["max"]), _fmt(g["mean"]),
                         _fmt(d["min"]), _fmt(d["max"]), _fmt(d["mean"])])
        lines += _md_table(["alpha", "gap min", "gap max", "gap mean",
                            "delta min", "delta max", "delta mean"], rows)
        lines.append("")

    gradient = bundle.get("gradient")
    if gradient:
        lines += ["## SES-achievement gradient", ""]
        lines += _md_table(["quantity", "computed", "published", "flag"], [
            _compare_row("gradient.beta", gradient.get("beta_gradient")),
            _compare_row("gradient.r_squared", gradient.get("r_squared")),
            _compare_row("gradient.sigma_escs", gradient.get("sigma_escs")),
            _compare_row("gradient.delta_per_sd", gradient.get("delta_per_sd"))])
        lines.append("")

    calibration = bundle.get("calibration")
    if calibration:
        lines += ["## Correction-strength calibration", ""]
        rows = []
        for row in calibration:
            alpha = int(row["alpha"])
            pub = _PUBLISHED_BY_KEY.get(f"calibration.pct.alpha{alpha}")
            rows.append([row["alpha"], _fmt(row["max_correction"]),
                         f"{row['percent_of_ses_effect']}%",
                         f"{_fmt(pub.value)}%" if pub else "-",
                         _flag(pub, row["percent_of_ses_effect"])])
        lines += _md_table(["alpha", "max correction", "% of SES effect",
                            "published %", "flag"], rows)
        lines.append("")

    curve = bundle.get("curve")
    if curve and len(curve) >= 2:
        alphas = [p["alpha"] for p in curve]
        counts = [p["n_conditional"] for p in curve]
        try:
            slope, intercept, r2 = linear_fit(alphas, counts)
            pub = _PUBLISHED_BY_KEY.get("linearity.r_squared")
            lines += ["## Trade-off curve linearity", "",
                      f"Admit counts vs alpha: slope {_fmt(slope)}, "
                      f"intercept {_fmt(intercept)}, R^2 {_fmt(r2)} "
                      f"(published {_fmt(pub.value)}, {_flag(pub, r2)}).", ""]
        except ValueError:
            pass

    for rob in bundle.get("robustness", []):
        agg = rob["aggregates"]
        lines += [f"## Robustness: {rob['kind']}", "",
                  f"params: `{canonical_json(rob['params'])}`, alpha {rob['alpha']}, "
                  f"seed {rob['base_seed']}, rng {rob['rng']} ({rob['deviates']})", ""]
        lines += _md_table(
            ["replicates", "mean count", "sd count", "mean Q1", "mean Q2",
             "mean Q3", "mean Q4", "any-Q3 runs", "any-Q4 runs"],
            [[len(rob["replicates"]), _fmt(agg["mean_count"]), _fmt(agg["sd_count"]),
              _fmt(agg["mean_quartile_shares"].get("Q1", 0.0)),
              _fmt(agg["mean_quartile_shares"].get("Q2", 0.0)),
              _fmt(agg["mean_quartile_shares"].get("Q3", 0.0)),
              _fmt(agg["mean_quartile_shares"].get("Q4", 0.0)),
              _fmt(agg["frac_any_q3"]), _fmt(agg["frac_any_q4"])]])
        if rob["kind"] in ("variance_scale", "threshold_shift"):
            lines += ["", "Per-setting counts:", ""]
            lines += _md_table(["setting", "admits", "min gap"],
                               [[r["label"], r["n_conditional"], _fmt(r["min_gap"])]
                                for r in rob["replicates"]])
        lines.append("")

    weighted = bundle.get("weighted")
    if weighted:
        alpha = int(weighted["alpha"])
        pub = _PUBLISHED_BY_KEY.get(f"weighted.alpha{alpha}")
        lines += ["## Population-weighted estimates", ""]
        lines += _md_table(
            ["alpha", "sample admits", "weighted admits", "published", "flag",
             "weighted bottom-half share", "weighted median SES"],
            [[weighted["alpha"], weighted["n_conditional"],
              _fmt(weighted["weighted_n_conditional"]),
              _fmt(pub.value) if pub else "-",
              _flag(pub, weighted["weighted_n_conditional"]),
              _fmt(weighted.get("weighted_bottom_half_share")),
              _fmt(weighted.get("weighted_median_ses"))]])
        lines.append("")

    dbn = bundle.get("dbn")
    if dbn:
        pub = _PUBLISHED_BY_KEY.get("dbn.q1_final_pct")
        q1_pct = 100 * dbn["q1_share_final"]
        lines += ["## Long-run mobility simulation", "",
                  f"Final bottom-tier share {_fmt(q1_pct)}% over {dbn['generations']} "
                  f"generations ({dbn['mode']} mode, {dbn['n_individuals']} individuals); "
                  f"published long-run share {_fmt(pub.value)}% ({_flag(pub, q1_pct)}).", ""]
        if dbn.get("improvement_pp") is not None:
            lines += [f"Correction-shock improvement of the bottom-tier share: "
                      f"{_fmt(dbn['improvement_pp'])} percentage points.", ""]

    if len(lines) == 2:
        lines += ["(empty bundle: no sections to report)", ""]
    return "\n".join(lines) + "\n"


# --- SVG -------------------------------------------------------------------

_PALETTE = ("#1f6f8b", "#c2571a", "#4a7c59", "#7b4b94")


def svg_line_plot(series: Mapping[str, Sequence[tuple[float, float]]], title: str,
                  xlabel: str, ylabel: str, width: int = 480, height: int = 320) -> str:
    """Minimal deterministic line plot; coordinates fixed to 2 decimals."""
    margin = 48.0
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x: float) -> float:
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y: float) -> float:
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" '
             f'font-family="sans-serif" font-size="14">{title}</text>',
             f'<line x1="{margin:.2f}" y1="{height - margin:.2f}" x2="{width - margin:.2f}" '
             f'y2="{height - margin:.2f}" stroke="black"/>',
             f'<line x1="{margin:.2f}" y1="{margin:.2f}" x2="{margin:.2f}" '
             f'y2="{height - margin:.2f}" stroke="black"/>',
             f'<text x="{width / 2:.2f}" y="{height - 10:.2f}" text-anchor="middle" '
             f'font-family="sans-serif" font-size="11">{xlabel}</text>',
             f'<text x="14" y="{height / 2:.2f}" text-anchor="middle" '
             f'font-family="sans-serif" font-size="11" '
             f'transform="rotate(-90 14 {height / 2:.2f})">{ylabel}</text>']
    for tick in (x_lo, (x_lo + x_hi) / 2, x_hi):
        parts.append(f'<text x="{sx(tick):.2f}" y="{height - margin + 16:.2f}" '
                     f'text-anchor="middle" font-family="sans-serif" font-size="10">'
                     f'{tick:.3g}</text>')
    for tick in (y_lo, (y_lo + y_hi) / 2, y_hi):
        parts.append(f'<text x="{margin - 6:.2f}" y="{sy(tick) + 3:.2f}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="10">'
                     f'{tick:.3g}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{width - margin + 4:.2f}" y="{margin + 14 * i + 10:.2f}" '
                     f'font-family="sans-serif" font-size="10" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _csv_from_rows(rows: Sequence[Mapping], headers: Sequence[str]) -> str:
    def cell(v) -> str:
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [",".join(headers)]
    for row in rows:
        lines.append(",".join(cell(row.get(h)) for h in headers))
    return "\n".join(lines) + "\n"


def emit_report(bundle: Mapping, formats: Sequence[str],
                out_dir: str | os.PathLike) -> list[str]:
    """Write the requested report formats; returns the relative file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    def put(name: str, text: str) -> None:
        with open(out / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(name)

    for fmt in formats:
        if fmt == "markdown":
            put("report.md", render_markdown(bundle))
        elif fmt == "json":
            put("report.json", canonical_json(dict(bundle)) + "\n")
        elif fmt == "csv":
            if bundle.get("curve"):
                headers = ["alpha", "n_conditional", "mean_c", "projected_cost",
                           "share_q1", "share_q2", "share_q3", "share_q4"]
                put("curve.csv", _csv_from_rows(bundle["curve"], headers))
            for i, rob in enumerate(bundle.get("robustness", [])):
                headers = ["replicate", "label", "n_conditional", "min_gap",
                           "share_q1", "share_q2", "share_q3", "share_q4"]
                put(f"robustness_{rob['kind']}_{i}.csv",
                    _csv_from_rows(rob["replicates"], headers))
            if bundle.get("dbn", {}).get("occupancy"):
                headers = ["generation", "tier1", "tier2", "tier3", "tier4"]
                put("occupancy.csv", _csv_from_rows(bundle["dbn"]["occupancy"], headers))
        elif fmt == "svg-plots":
            if bundle.get("curve") and len(bundle["curve"]) >= 2:
                pts = [(p["alpha"], float(p["n_conditional"])) for p in bundle["curve"]]
                slope, intercept, r2 = linear_fit([p[0] for p in pts], [p[1] for p in pts])
                fit = [(x, intercept + slope * x) for x, _ in pts]
                put("admits_vs_alpha.svg",
                    svg_line_plot({"admits": pts, f"fit (R^2={r2:.3f})": fit},
                                  "Additional admits vs correction strength",
                                  "alpha", "additional admits"))
            for rob in bundle.get("robustness", []):
                if rob["kind"] == "ses_noise" and rob["replicates"]:
                    pts = [(float(r["replicate"]), float(r["n_conditional"]))
                           for r in rob["replicates"]]
                    put("ses_noise_counts.svg",
                        svg_line_plot({"admits": pts}, "Admit counts under SES noise",
                                      "replicate", "additional admits"))
                if rob["kind"] == "threshold_shift" and rob["replicates"]:
                    pts = [(float(i), float(r["n_conditional"]))
                           for i, r in enumerate(rob["replicates"])]
                    put("threshold_sweep.svg",
                        svg_line_plot({"admits": pts}, "Admit counts across thresholds",
                                      "setting index", "additional admits"))
            if bundle.get("dbn", {}).get("occupancy"):
                rows = bundle["dbn"]["occupancy"]
                series = {f"tier {k}": [(float(r["generation"]), float(r[f"tier{k}"]))
                                        for r in rows] for k in range(1, 5)}
                put("dbn_trajectory.svg",
                    svg_line_plot(series, "Tier occupancy across generations",
                                  "generation", "population share"))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    return written
