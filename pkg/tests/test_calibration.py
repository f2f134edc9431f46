import numpy as np
import pytest

from amf import (ApplicantRecord, Cohort, CorrectionPolicy, FeasibilityBounds, SupportBand,
                 apply_correction, calibration_table, feasible_alpha, linear_fit,
                 percentile_rank, ses_gradient, tradeoff_curve)

from conftest import make_cohort


def cohort_xy(xs, ys):
    return Cohort(records=tuple(
        ApplicantRecord(id=f"r{i}", merit_score=float(y), escs_raw=float(x))
        for i, (x, y) in enumerate(zip(xs, ys))))


# 10-point synthetic set with a hand-computed normal-equations oracle. The
# oracle values below were produced by plain sum-based normal equations,
# independently of the engine's estimator, and are frozen here.
ORACLE_X = list(range(10))
ORACLE_E = [0.5, -0.3, 0.2, -0.1, 0.4, -0.5, 0.1, 0.3, -0.2, -0.4]
ORACLE_Y = [3 * x + 2 + e for x, e in zip(ORACLE_X, ORACLE_E)]
ORACLE_BETA = 2.9563636363636365
ORACLE_INTERCEPT = 2.1963636363636367
ORACLE_R2 = 0.9986940317300428
ORACLE_SIGMA = 3.0276503540974917
ORACLE_DELTA = 8.950835410477312


def test_gradient_matches_normal_equations_oracle():
    est = ses_gradient(cohort_xy(ORACLE_X, ORACLE_Y))
    assert est.beta_gradient == pytest.approx(ORACLE_BETA, rel=1e-12)
    assert est.intercept == pytest.approx(ORACLE_INTERCEPT, rel=1e-12)
    assert est.r_squared == pytest.approx(ORACLE_R2, rel=1e-12)
    assert est.sigma_escs == pytest.approx(ORACLE_SIGMA, rel=1e-12)
    assert est.delta_per_sd == pytest.approx(ORACLE_DELTA, rel=1e-12)


def test_exact_linear_fit():
    est = ses_gradient(cohort_xy([0, 1, 2, 3], [5, 7, 9, 11]))  # y = 2x + 5
    assert est.beta_gradient == pytest.approx(2.0)
    assert est.intercept == pytest.approx(5.0)
    assert est.r_squared == pytest.approx(1.0)


def test_independent_merit_gives_near_zero_slope():
    rng = np.random.default_rng(42)
    xs = rng.normal(0, 1, 4000)
    ys = rng.normal(600, 30, 4000)
    est = ses_gradient(cohort_xy(xs, ys))
    assert abs(est.beta_gradient) < 2.0
    assert est.r_squared < 0.01


def test_gradient_shift_invariance():
    base = ses_gradient(cohort_xy(ORACLE_X, ORACLE_Y))
    shifted = ses_gradient(cohort_xy(ORACLE_X, [y + 100 for y in ORACLE_Y]))
    assert shifted.beta_gradient == pytest.approx(base.beta_gradient)
    assert shifted.r_squared == pytest.approx(base.r_squared)
    assert shifted.intercept == pytest.approx(base.intercept + 100)


def test_no_intercept_mode():
    est = ses_gradient(cohort_xy([1, 2, 3, 4], [2, 4, 6, 8]), include_intercept=False)
    assert est.beta_gradient == pytest.approx(2.0)
    assert est.intercept == 0.0
    assert est.r_squared == pytest.approx(1.0)


def test_degenerate_variance_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        ses_gradient(cohort_xy([1, 1, 1], [2, 3, 4]))
    with pytest.raises(ValueError, match="at least 3"):
        ses_gradient(cohort_xy([1, 2], [2, 3]))


def make_gradient(delta: float):
    # Construct a gradient whose delta_per_sd is exactly `delta`.
    from amf import GradientEstimate
    return GradientEstimate(beta_gradient=delta, intercept=0.0, r_squared=0.5,
                            sigma_escs=1.0, delta_per_sd=delta, n=100)


def test_calibration_table_against_published_percents():
    table = calibration_table([5, 10, 15], make_gradient(38.90))
    assert [r.max_correction for r in table] == [2.5, 5.0, 7.5]
    assert [r.percent_of_ses_effect for r in table] == [6, 13, 19]
    assert table[0].fraction_of_ses_effect == pytest.approx(2.5 / 38.90)


def test_calibration_alpha_zero():
    row = calibration_table([0], make_gradient(38.90))[0]
    assert row.max_correction == 0.0
    assert row.percent_of_ses_effect == 0


def test_table_consistency_with_correction_rule():
    table = calibration_table([5, 10, 15], make_gradient(40.0))
    grid = np.linspace(0, 1, 2001)
    for row in table:
        policy = CorrectionPolicy(alpha=row.alpha)
        max_c = max(apply_correction(float(s), 0.0, policy).c for s in grid)
        assert row.max_correction == pytest.approx(max_c)


def test_tradeoff_counts_monotone_and_ordered():
    idx = percentile_rank(make_cohort(300, seed=21))
    curve = tradeoff_curve(idx, [15, 5, 10, 0])
    assert [p.alpha for p in curve] == [0, 5, 10, 15]
    counts = [p.n_conditional for p in curve]
    assert counts == sorted(counts)
    assert curve[0].n_conditional == 0
    assert curve[0].mean_c is None


def test_tradeoff_projected_cost():
    idx = percentile_rank(make_cohort(300, seed=22))
    bounds = FeasibilityBounds(capacity_seats=100, budget_total=1e6, per_student_cost=10.0)
    curve = tradeoff_curve(idx, [5, 15], bounds=bounds)
    for p in curve:
        assert p.projected_cost == pytest.approx(10.0 * p.n_conditional)


def test_feasible_alpha_capacity_cut():
    from amf import CurvePoint
    curve = [CurvePoint(alpha=a, n_conditional=n, mean_c=None, quartile_shares={},
                        projected_cost=None)
             for a, n in [(5, 4), (10, 6), (15, 9)]]
    bounds = FeasibilityBounds(capacity_seats=5, budget_total=1e9, per_student_cost=1.0)
    assert feasible_alpha(curve, bounds) == (5,)

    ample = FeasibilityBounds(capacity_seats=100, budget_total=1e9, per_student_cost=1.0)
    assert feasible_alpha(curve, ample) == (5, 10, 15)

    broke = FeasibilityBounds(capacity_seats=100, budget_total=0.0, per_student_cost=1.0)
    assert feasible_alpha(curve, broke) == ()

    free = FeasibilityBounds(capacity_seats=100, budget_total=0.0, per_student_cost=0.0)
    assert feasible_alpha(curve, free) == (5, 10, 15)


def test_feasibility_monotone_in_resources():
    from amf import CurvePoint
    curve = [CurvePoint(alpha=a, n_conditional=n, mean_c=None, quartile_shares={},
                        projected_cost=None)
             for a, n in [(2, 1), (5, 4), (10, 6), (15, 9), (20, 14)]]
    small = FeasibilityBounds(capacity_seats=5, budget_total=50.0, per_student_cost=10.0)
    large = FeasibilityBounds(capacity_seats=10, budget_total=100.0, per_student_cost=10.0)
    assert set(feasible_alpha(curve, small)) <= set(feasible_alpha(curve, large))


def test_published_count_triple_fits_line_with_high_r2():
    # The published admit counts (4, 6, 9) on the alpha grid (5, 10, 15):
    # the least-squares fit explains ~98.7% of the variance.
    slope, intercept, r2 = linear_fit([5, 10, 15], [4, 6, 9])
    assert slope == pytest.approx(0.5)
    assert r2 == pytest.approx(0.9868, abs=5e-4)
    assert round(r2, 3) == 0.987


def test_support_schedule_carried_as_data():
    band = SupportBand(alpha_lo=0, alpha_hi=10, per_student_subsidy=1200.0)
    bounds = FeasibilityBounds(capacity_seats=5, budget_total=100.0,
                               per_student_cost=10.0, support_schedule=(band,))
    assert bounds.support_schedule[0].per_student_subsidy == 1200.0
