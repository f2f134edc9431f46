import io

import numpy as np
import pytest

from amf import (ApplicantRecord, Cohort, DataError, SchemaMapping, cohort_from_csv,
                 cohort_to_csv, load_cohort, remove_ses_outliers)

from conftest import cohort_from_text, make_cohort

CSV = """id,score,ses,w,optin
a,600,0.5,1.2,1
b,610,-0.3,0.8,0
c,590,,1.0,1
d,x,0.1,1.0,1
e,620,1.4,,1
"""


def test_load_drops_rows_missing_merit_or_escs():
    cohort = load_cohort(io.StringIO(CSV),
                         SchemaMapping(merit="score", escs="ses", id="id",
                                       weight="w", pre_optin="optin"))
    assert cohort.ids() == ("a", "b", "e")
    assert cohort.n_dropped_missing == 2
    assert cohort.records[2].weight == 1.0  # empty weight cell defaults
    assert cohort.records[0].pre_optin is True
    assert cohort.records[1].pre_optin is False
    assert cohort.records[1].post_optin is True  # unmapped column defaults true


def test_load_synthetic_missing_count():
    # 10 data rows, 2 lacking the SES cell -> 8 records.
    lines = ["id,merit,escs"]
    for i in range(10):
        escs = "" if i in (3, 7) else f"{i / 10:.1f}"
        lines.append(f"r{i},{500 + i},{escs}")
    cohort = cohort_from_text("\n".join(lines), merit="merit", escs="escs", id="id")
    assert len(cohort) == 8
    assert cohort.n_dropped_missing == 2


def test_header_only_is_zero_usable_rows():
    with pytest.raises(DataError, match="zero usable rows"):
        cohort_from_text("id,merit,escs\n", merit="merit", escs="escs")


def test_missing_mapped_column():
    with pytest.raises(DataError, match="missing mapped column"):
        cohort_from_text("id,merit\nr1,5\n", merit="merit", escs="escs")


def test_unreadable_source():
    with pytest.raises(DataError, match="unreadable"):
        load_cohort("/nonexistent/file.csv", SchemaMapping(merit="m", escs="e"))


def test_tab_delimiter_autodetected():
    cohort = cohort_from_text("merit\tescs\n600\t0.1\n", merit="merit", escs="escs")
    assert len(cohort) == 1
    assert cohort.records[0].id == "row1"  # synthesized when no id column mapped


def test_duplicate_ids_rejected():
    with pytest.raises(DataError, match="duplicate ids"):
        cohort_from_text("id,merit,escs\nx,1,0\nx,2,0\n",
                         merit="merit", escs="escs", id="id")


def test_nonfinite_values_dropped_as_missing():
    cohort = cohort_from_text("merit,escs\ninf,0.1\n600,nan\n601,0.2\n",
                              merit="merit", escs="escs")
    assert len(cohort) == 1
    assert cohort.n_dropped_missing == 2


def test_negative_weight_rejected():
    with pytest.raises(DataError, match="weight"):
        ApplicantRecord(id="a", merit_score=1.0, escs_raw=0.0, weight=-1.0)


def test_tukey_fences_hand_computed():
    # Values 1..9 plus 100: Q1 = 3.25, Q3 = 7.75 under linear interpolation,
    # IQR = 4.5, fences [-3.5, 14.5]; only 100 falls outside.
    records = tuple(ApplicantRecord(id=f"r{i}", merit_score=0.0, escs_raw=float(v))
                    for i, v in enumerate(list(range(1, 10)) + [100]))
    cleaned, report = remove_ses_outliers(Cohort(records=records))
    assert report.q1 == pytest.approx(3.25)
    assert report.q3 == pytest.approx(7.75)
    assert report.iqr == pytest.approx(4.5)
    assert report.lower_fence == pytest.approx(-3.5)
    assert report.upper_fence == pytest.approx(14.5)
    assert report.removed_ids == ("r9",)
    assert report.n_before - len(report.removed_ids) == report.n_after
    assert len(cleaned) == 9


def test_degenerate_iqr_removes_nothing():
    records = tuple(ApplicantRecord(id=f"r{i}", merit_score=1.0, escs_raw=2.0)
                    for i in range(6))
    cleaned, report = remove_ses_outliers(Cohort(records=records))
    assert report.iqr == 0.0
    assert report.removed_ids == ()
    assert len(cleaned) == 6


def test_single_pass_is_stable_under_frozen_fences():
    cohort = make_cohort(300, seed=3)
    cleaned, report = remove_ses_outliers(cohort)
    # Second pass with the same (frozen) fences removes nothing more.
    survivors = [r for r in cleaned.records
                 if report.lower_fence <= r.escs_raw <= report.upper_fence]
    assert len(survivors) == report.n_after


def test_order_preserved_minus_removals():
    cohort = make_cohort(200, seed=11)
    cleaned, report = remove_ses_outliers(cohort)
    removed = set(report.removed_ids)
    assert cleaned.ids() == tuple(i for i in cohort.ids() if i not in removed)


def test_load_determinism_and_csv_roundtrip(tmp_path):
    cohort = make_cohort(50, seed=5)
    path = tmp_path / "cohort.csv"
    cohort_to_csv(cohort, path)
    again = cohort_from_csv(path)
    assert again.content_digest() == cohort.content_digest()
    # Same bytes in, byte-identical serialization out.
    buf1, buf2 = io.StringIO(), io.StringIO()
    cohort_to_csv(again, buf1)
    cohort_to_csv(cohort_from_csv(path), buf2)
    assert buf1.getvalue() == buf2.getvalue()


def test_quartile_method_is_configurable():
    records = tuple(ApplicantRecord(id=f"r{i}", merit_score=0.0, escs_raw=float(v))
                    for i, v in enumerate(list(range(1, 10)) + [100]))
    _, linear = remove_ses_outliers(Cohort(records=records), quartile_method="linear")
    _, midpoint = remove_ses_outliers(Cohort(records=records), quartile_method="midpoint")
    assert linear.q1 != midpoint.q1  # different estimators, different fences
