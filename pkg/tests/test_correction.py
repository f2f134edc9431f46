import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amf import (CorrectionPolicy, CorrectionResult, EmergencyPolicy, SunsetViolationError,
                 apply_correction, apply_emergency, eligibility_boundary, emergency_from_csv,
                 percentile_rank)

from conftest import make_cohort
from test_ses_index import cohort_of


def test_center_gets_zero():
    for alpha in (0.0, 5.0, 15.0, 50.0):
        assert apply_correction(0.5, 600.0, CorrectionPolicy(alpha=alpha)).c == 0.0


def test_maximum_correction_at_bottom():
    result = apply_correction(0.0, 600.0, CorrectionPolicy(alpha=15))
    assert result.c == pytest.approx(7.5)
    assert result.m_star == pytest.approx(607.5)


def test_above_center_is_clamped():
    assert apply_correction(0.8, 600.0, CorrectionPolicy(alpha=10)).c == 0.0


def test_worked_example():
    result = apply_correction(0.2, 660.0, CorrectionPolicy(alpha=10))
    assert result.c == pytest.approx(3.0)
    assert result.m_star == pytest.approx(663.0)


def test_unclamped_debug_mode():
    policy = CorrectionPolicy(alpha=10, clamp_nonnegative=False)
    assert apply_correction(0.8, 600.0, policy).c == pytest.approx(-3.0)


@given(st.floats(min_value=0, max_value=1, allow_nan=False),
       st.floats(min_value=1e-6, max_value=60, allow_nan=False))
def test_bound_and_eligibility(s, alpha):
    c = apply_correction(s, 0.0, CorrectionPolicy(alpha=alpha)).c
    assert 0.0 <= c <= 0.5 * alpha
    assert (c > 0) == (s < 0.5)


@given(st.floats(min_value=0, max_value=1, allow_nan=False),
       st.floats(min_value=0, max_value=30, allow_nan=False),
       st.floats(min_value=0, max_value=4, allow_nan=False))
def test_linearity_in_alpha(s, alpha, lam):
    base = apply_correction(s, 0.0, CorrectionPolicy(alpha=alpha)).c
    scaled = apply_correction(s, 0.0, CorrectionPolicy(alpha=lam * alpha)).c
    assert scaled == pytest.approx(lam * base, rel=1e-12, abs=1e-12)


@given(st.floats(min_value=0, max_value=1, allow_nan=False),
       st.floats(min_value=0, max_value=1, allow_nan=False),
       st.floats(min_value=0, max_value=30, allow_nan=False))
def test_monotone_in_disadvantage(s_a, s_b, alpha):
    if s_a > s_b:
        s_a, s_b = s_b, s_a
    policy = CorrectionPolicy(alpha=alpha)
    assert apply_correction(s_a, 0.0, policy).c >= apply_correction(s_b, 0.0, policy).c


def test_equal_ses_preserves_merit_order():
    policy = CorrectionPolicy(alpha=12)
    lo = apply_correction(0.3, 600.0, policy)
    hi = apply_correction(0.3, 610.0, policy)
    assert hi.m_star > lo.m_star
    assert hi.c == lo.c


def test_s_out_of_range_rejected():
    with pytest.raises(ValueError):
        apply_correction(1.2, 0.0, CorrectionPolicy(alpha=5))


def test_emergency_zero_indicator_is_identity():
    policy = EmergencyPolicy(beta_e=2.0, indicator={}, sunset_cycle="2025")
    base = CorrectionResult(c=1.5, m_star=601.5)
    assert apply_emergency(base, 0.0, policy, cycle="2025") == base


def test_emergency_arithmetic():
    policy = EmergencyPolicy(beta_e=2.0, indicator={}, sunset_cycle="2025")
    bumped = apply_emergency(CorrectionResult(c=1.0, m_star=601.0), 1.0, policy, "2025")
    assert bumped.c == pytest.approx(3.0)
    assert bumped.m_star == pytest.approx(603.0)


def test_emergency_sunset_violation():
    policy = EmergencyPolicy(beta_e=2.0, indicator={}, sunset_cycle="2025")
    with pytest.raises(SunsetViolationError):
        apply_emergency(CorrectionResult(c=1.0, m_star=601.0), 1.0, policy, "2026")


def test_emergency_indicator_bounds_validated():
    with pytest.raises(ValueError):
        EmergencyPolicy(beta_e=1.0, indicator={"a": 1.5}, sunset_cycle="c")


def test_emergency_csv_loader():
    text = "id,e_value,cycle\np1,1.0,2025\np2,0.5,2025\n"
    policy = emergency_from_csv(io.StringIO(text), beta_e=3.0)
    assert policy.sunset_cycle == "2025"
    assert policy.indicator == {"p1": 1.0, "p2": 0.5}


def test_emergency_csv_multiple_cycles_rejected():
    from amf import DataError
    text = "id,e_value,cycle\np1,1.0,2025\np2,0.5,2026\n"
    with pytest.raises(DataError, match="multiple cycles"):
        emergency_from_csv(io.StringIO(text), beta_e=3.0)


def test_eligibility_boundary_even_cohort():
    idx = percentile_rank(cohort_of([1, 2, 3, 4, 5, 6, 7, 8]))
    assert eligibility_boundary(CorrectionPolicy(alpha=10), idx) == pytest.approx(0.5)


def test_eligibility_boundary_mu_extremes():
    idx = percentile_rank(make_cohort(64, seed=9))
    assert eligibility_boundary(CorrectionPolicy(alpha=1, mu=0.0), idx) == 0.0
    # mu = 1: everyone with s < 1, i.e. all under the hazen convention.
    assert eligibility_boundary(CorrectionPolicy(alpha=1, mu=1.0), idx) == pytest.approx(1.0)
