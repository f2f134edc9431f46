import numpy as np
import pytest
from dataclasses import replace

from amf import (DbnSpec, Individual, build_kernel, default_population, mobility_metrics,
                 occupancy_rows, simulate_population)
from amf.dbn import DEFAULT_ADMIT_MATRIX, DEFAULT_BASE_MATRIX, N_TIERS, shock_strength

IDENTITY = tuple(tuple(1.0 if i == j else 0.0 for j in range(4)) for i in range(4))
UNIFORM = tuple(tuple(0.25 for _ in range(4)) for _ in range(4))


def power_iteration_stationary(matrix, iterations=100000, tol=1e-15):
    """Independent stationary-distribution oracle (left power iteration)."""
    m = np.asarray(matrix, dtype=float)
    v = np.full(4, 0.25)
    for _ in range(iterations):
        nxt = v @ m
        if np.abs(nxt - v).sum() < tol:
            return nxt
        v = nxt
    return v


def test_no_tilt_no_shock_returns_base_exactly():
    spec = DbnSpec(gamma_ses=0.0, kappa=0.0)
    k = build_kernel(spec, s=0.2, c=3.0, t=5)
    assert np.array_equal(k, spec.base())


def test_center_ses_contributes_nothing():
    spec = DbnSpec(gamma_ses=0.05, kappa=0.0)
    assert np.array_equal(build_kernel(spec, s=0.5, c=0.0, t=3), spec.base())


def test_shock_only_at_first_generation():
    spec = DbnSpec(gamma_ses=0.0, kappa=0.05)
    with_shock = build_kernel(spec, s=0.5, c=4.0, t=1)
    without = build_kernel(spec, s=0.5, c=0.0, t=1)
    later = build_kernel(spec, s=0.5, c=4.0, t=2)
    assert not np.array_equal(with_shock, without)
    assert np.array_equal(later, spec.base())


def test_shock_saturates_at_cap():
    spec = DbnSpec(kappa=0.02, c_cap=7.5)
    assert shock_strength(spec, 7.5) == pytest.approx(0.02)
    assert shock_strength(spec, 100.0) == pytest.approx(0.02)
    assert shock_strength(spec, 3.75) == pytest.approx(0.01)
    assert shock_strength(spec, 0.0) == 0.0


def test_kernels_row_stochastic_within_tolerance():
    spec = DbnSpec(gamma_ses=0.04, kappa=0.03)
    rng = np.random.default_rng(0)
    for _ in range(300):
        s = float(rng.random())
        c = float(rng.random() * 10)
        t = int(rng.integers(1, 5))
        k = build_kernel(spec, s, c, t)
        assert (k >= 0).all()
        assert np.abs(k.sum(axis=1) - 1.0).max() < 1e-12


def test_ses_sign_orientations():
    lit = DbnSpec(gamma_ses=0.02, ses_sign="paper_literal")
    std = DbnSpec(gamma_ses=0.02, ses_sign="mobility_standard")
    up = np.triu(np.ones((4, 4), dtype=bool), 1)
    base = lit.base()
    # Low-SES individual: literal orientation raises upward entries.
    k_lit = build_kernel(lit, s=0.0, c=0.0, t=2)
    k_std = build_kernel(std, s=0.0, c=0.0, t=2)
    assert (k_lit[up] >= base[up]).all()
    assert (k_std[up] <= base[up]).all()


def test_row_collapse_raises():
    # A row that is pure upward mass collapses when the tilt removes it all.
    matrix = ((0.0, 1.0, 0.0, 0.0),
              (0.2, 0.6, 0.15, 0.05),
              (0.1, 0.2, 0.55, 0.15),
              (0.05, 0.1, 0.2, 0.65))
    spec = DbnSpec(base_matrix=matrix, gamma_ses=2.0, ses_sign="paper_literal")
    with pytest.raises(ValueError, match="collapsed"):
        build_kernel(spec, s=1.0, c=0.0, t=2)


def test_spec_validation():
    bad = tuple(tuple(row) for row in np.full((4, 4), 0.3))
    with pytest.raises(ValueError, match="sum to 1"):
        DbnSpec(base_matrix=bad)
    with pytest.raises(ValueError, match="v0"):
        DbnSpec(v0=(0.5, 0.5, 0.2, -0.2))
    with pytest.raises(ValueError, match="c_cap"):
        DbnSpec(c_cap=0.0)


def test_identity_chain_keeps_initial_distribution():
    spec = DbnSpec(base_matrix=IDENTITY, admit_matrix=None, gamma_ses=0.0, kappa=0.0,
                   generations=10)
    summary = simulate_population(spec, [Individual(s=0.3)], mode="expected")
    for row in summary.occupancy:
        assert np.allclose(row, spec.initial_distribution())
    metrics = mobility_metrics(summary)
    assert metrics.upward_rate == 0.0
    assert metrics.downward_rate == 0.0


def test_stationary_convergence_against_power_iteration_oracle():
    spec = DbnSpec(gamma_ses=0.0, kappa=0.0, admit_matrix=None, generations=200)
    summary = simulate_population(spec, [Individual(s=0.5)], mode="expected")
    oracle = power_iteration_stationary(DEFAULT_BASE_MATRIX)
    tv = 0.5 * np.abs(np.asarray(summary.occupancy[-1]) - oracle).sum()
    assert tv < 1e-6


def test_uniform_kernel_upward_rate():
    spec = DbnSpec(base_matrix=UNIFORM, admit_matrix=None, gamma_ses=0.0, kappa=0.0,
                   v0=(0.25, 0.25, 0.25, 0.25), generations=12)
    summary = simulate_population(spec, [Individual(s=0.5)], mode="expected")
    metrics = mobility_metrics(summary)
    assert metrics.upward_rate == pytest.approx(6 / 16)
    assert metrics.downward_rate == pytest.approx(6 / 16)
    assert metrics.top_state_reach == pytest.approx(1 - 0.75 ** 13)


def test_shock_adds_upward_mass_at_first_step():
    spec = DbnSpec(gamma_ses=0.0, kappa=0.05)
    pop_base = [Individual(s=0.2, c=0.0)]
    pop_amf = [Individual(s=0.2, c=5.0)]
    base = simulate_population(spec, pop_base, mode="expected")
    amf = simulate_population(spec, pop_amf, mode="expected")
    assert amf.occupancy[1][0] < base.occupancy[1][0]
    assert amf.up_mass >= base.up_mass


def test_zero_correction_individuals_identical_under_both_runs():
    spec = DbnSpec()
    person = Individual(s=0.8, c=0.0)
    a = simulate_population(spec, [person], mode="expected")
    b = simulate_population(spec, [person], mode="expected")
    assert a.occupancy == b.occupancy
    # and their kernels match bit for bit at every generation
    for t in range(1, 31):
        assert np.array_equal(build_kernel(spec, 0.8, 0.0, t),
                              build_kernel(spec, 0.8, 0.0, t))


def test_occupancy_gap_decays_after_shock():
    spec = DbnSpec()  # default base matrix is strictly positive
    pop = default_population(500)
    pop_amf = default_population(500, alpha=10)
    base = simulate_population(spec, pop, mode="expected")
    amf = simulate_population(spec, pop_amf, mode="expected")
    gaps = [0.5 * np.abs(np.asarray(a) - np.asarray(b)).sum()
            for a, b in zip(amf.occupancy, base.occupancy)]
    assert gaps[0] == 0.0
    assert gaps[1] > 0.0
    for t in range(1, len(gaps) - 1):
        assert gaps[t + 1] <= gaps[t] + 1e-15


def test_shipped_matrices_satisfy_construction_constraints():
    for matrix in (DEFAULT_BASE_MATRIX, DEFAULT_ADMIT_MATRIX):
        m = np.asarray(matrix)
        assert np.abs(m.sum(axis=1) - 1.0).max() < 1e-12
        assert (m >= 0).all()
        upward = [m[a, a + 1:].sum() for a in range(N_TIERS)]
        assert all(upward[a] >= upward[a + 1] for a in range(N_TIERS - 1))
        downward = [m[a, :a].sum() for a in range(N_TIERS)]
        assert downward[-1] < downward[-2]  # top tier falls least
        diag = np.diag(m)
        assert min(diag[0], diag[-1]) > max(diag[1], diag[2])  # sticky tails


def test_default_run_long_run_share_and_improvement():
    spec = DbnSpec()
    baseline = simulate_population(spec, default_population(2000), mode="expected")
    amf = simulate_population(spec, default_population(2000, alpha=10), mode="expected")
    q1 = baseline.q1_share_final
    assert 0.385 <= q1 <= 0.405
    improvement_pp = 100 * (baseline.q1_share_final - amf.q1_share_final)
    assert 0.0 <= improvement_pp < 0.5


def test_sample_mode_deterministic_and_emission_neutral():
    spec = DbnSpec(generations=8)
    pop = default_population(60, alpha=10)
    a = simulate_population(spec, pop, seed=5, mode="sample")
    b = simulate_population(spec, pop, seed=5, mode="sample")
    assert a == b
    with_scores = simulate_population(spec, pop, seed=5, mode="sample", emit_scores=True)
    assert with_scores.occupancy == a.occupancy  # emissions never feed transitions
    assert with_scores.mean_emission is not None
    c = simulate_population(spec, pop, seed=6, mode="sample")
    assert c != a


def test_sample_mode_requires_seed():
    with pytest.raises(ValueError, match="seed"):
        simulate_population(DbnSpec(), [Individual(s=0.5)], mode="sample")


def test_admitted_individuals_use_admit_matrix():
    spec = DbnSpec(gamma_ses=0.0, kappa=0.0, generations=5)
    plain = simulate_population(spec, [Individual(s=0.5, admitted=False)], mode="expected")
    admitted = simulate_population(spec, [Individual(s=0.5, admitted=True)], mode="expected")
    assert plain.occupancy != admitted.occupancy


def test_population_tuples_accepted_and_occupancy_rows():
    spec = DbnSpec(generations=4)
    summary = simulate_population(spec, [(0.5, 0.0), (0.2, 3.0, True)], mode="expected")
    rows = occupancy_rows(summary)
    assert len(rows) == 5
    assert rows[0]["generation"] == 0
    assert sum(rows[0][f"tier{i}"] for i in range(1, 5)) == pytest.approx(1.0)
