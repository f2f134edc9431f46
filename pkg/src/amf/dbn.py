"""Long-run mobility simulation over four latent tiers.

Each individual carries a fixed SES index s and a one-shot correction c. Their
transition kernel starts from a stylized row-stochastic base matrix, gets an
SES tilt on the off-diagonal entries, and, in the first generation only, an
upward shock that saturates in c. Populations can be propagated exactly
(expected occupancy) or sampled per individual with derived seeds.

The shipped default matrices are stylized constructions, not estimates: rows
sum to one, upward mobility declines with tier, the top tier has the lowest
downward mobility, and persistence is highest at the tails. The baseline
matrix's long-run bottom-tier share sits near 39.4%.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

N_TIERS = 4
_UP = np.triu(np.ones((N_TIERS, N_TIERS), dtype=bool), 1)
_DOWN = np.tril(np.ones((N_TIERS, N_TIERS), dtype=bool), -1)

SES_SIGNS = ("paper_literal", "mobility_standard")

# Stylized defaults; substitute via DbnSpec for other regimes.
DEFAULT_BASE_MATRIX = (
    (0.75, 0.21, 0.03, 0.01),
    (0.28, 0.52, 0.16, 0.04),
    (0.08, 0.24, 0.56, 0.12),
    (0.02, 0.07, 0.21, 0.70),
)
DEFAULT_ADMIT_MATRIX = (
    (0.70, 0.24, 0.04, 0.02),
    (0.24, 0.52, 0.19, 0.05),
    (0.06, 0.22, 0.58, 0.14),
    (0.02, 0.06, 0.19, 0.73),
)
DEFAULT_V0 = (0.35, 0.30, 0.20, 0.15)


def _as_matrix(rows: Iterable[Iterable[float]]) -> np.ndarray:
    m = np.array([[float(x) for x in row] for row in rows], dtype=float)
    if m.shape != (N_TIERS, N_TIERS):
        raise ValueError(f"transition matrix must be {N_TIERS}x{N_TIERS}, got {m.shape}")
    if (m < 0).any():
        raise ValueError("transition matrix entries must be >= 0")
    if np.abs(m.sum(axis=1) - 1.0).max() > 1e-12:
        raise ValueError("transition matrix rows must sum to 1 within 1e-12")
    return m


@dataclass(frozen=True)
class DbnSpec:
    """Transition structure, tilt and shock strengths, emissions, and horizon."""

    base_matrix: tuple[tuple[float, ...], ...] = DEFAULT_BASE_MATRIX
    admit_matrix: tuple[tuple[float, ...], ...] | None = DEFAULT_ADMIT_MATRIX
    gamma_ses: float = 0.02
    ses_sign: str = "paper_literal"
    kappa: float = 0.02
    c_cap: float = 7.5
    emission_means: tuple[float, ...] = (425.0, 500.0, 575.0, 650.0)
    emission_sds: tuple[float, ...] = (30.0, 30.0, 30.0, 30.0)
    v0: tuple[float, ...] = DEFAULT_V0
    generations: int = 30

    def __post_init__(self) -> None:
        _as_matrix(self.base_matrix)
        if self.admit_matrix is not None:
            _as_matrix(self.admit_matrix)
        if self.ses_sign not in SES_SIGNS:
            raise ValueError(f"ses_sign must be one of {SES_SIGNS}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.c_cap <= 0:
            raise ValueError("c_cap must be > 0")
        v0 = np.asarray(self.v0, dtype=float)
        if v0.shape != (N_TIERS,) or (v0 < 0).any() or abs(v0.sum() - 1.0) > 1e-12:
            raise ValueError("v0 must be a length-4 distribution summing to 1")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")

    def base(self) -> np.ndarray:
        return _as_matrix(self.base_matrix)

    def admit(self) -> np.ndarray:
        return _as_matrix(self.admit_matrix if self.admit_matrix is not None
                          else self.base_matrix)

    def initial_distribution(self) -> np.ndarray:
        return np.asarray(self.v0, dtype=float)


def shock_strength(spec: DbnSpec, c: float) -> float:
    """Saturating-linear upward shock: kappa * min(c, c_cap) / c_cap."""
    if c <= 0:
        return 0.0
    return spec.kappa * min(c, spec.c_cap) / spec.c_cap


def build_kernel(spec: DbnSpec, s: float, c: float, t: int,
                 matrix: np.ndarray | None = None) -> np.ndarray:
    """One individual's transition kernel at generation t.

    The SES tilt moves off-diagonal mass by (s - 0.5) * gamma_ses; under the
    ``paper_literal`` orientation upward entries shrink as s rises, under
    ``mobility_standard`` they grow. The correction shock adds to upward
    entries at t = 1 only. Entries are clamped at zero and rows renormalized;
    with no tilt and no shock the base matrix is returned unchanged.
    """
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"s must lie in [0, 1], got {s}")
    if c < 0:
        raise ValueError(f"c must be >= 0, got {c}")
    base = spec.base() if matrix is None else matrix
    tilt = spec.gamma_ses * (s - 0.5)
    shock = shock_strength(spec, c) if t == 1 else 0.0
    if tilt == 0.0 and shock == 0.0:
        return base.copy()
    k = base.copy()
    if spec.ses_sign == "paper_literal":
        k[_UP] -= tilt
        k[_DOWN] += tilt
    else:
        k[_UP] += tilt
        k[_DOWN] -= tilt
    if shock:
        k[_UP] += shock
    np.clip(k, 0.0, None, out=k)
    sums = k.sum(axis=1)
    if (sums == 0.0).any():
        raise ValueError("kernel row collapsed to zero after clamping")
    return k / sums[:, None]


@dataclass(frozen=True)
class Individual:
    """One simulated person: fixed SES index, one-shot correction, admit flag."""

    s: float
    c: float = 0.0
    admitted: bool = False


def _coerce_population(population: Sequence) -> tuple[Individual, ...]:
    people = []
    for entry in population:
        if isinstance(entry, Individual):
            people.append(entry)
        else:
            people.append(Individual(*entry))
    if not people:
        raise ValueError("population must be non-empty")
    return tuple(people)


@dataclass(frozen=True)
class TrajectorySummary:
    """Per-generation tier occupancy plus the tallies mobility metrics derive from."""

    occupancy: tuple[tuple[float, ...], ...]  # (generations + 1) x 4 shares
    generations: int
    n_individuals: int
    mode: str
    up_mass: float            # expected upward person-transitions
    down_mass: float          # expected downward person-transitions
    person_transitions: int
    reach_mass: float         # expected count of individuals ever in the top tier
    mean_emission: tuple[float, ...] | None = None

    @property
    def q1_share_final(self) -> float:
        return self.occupancy[-1][0]

    @property
    def upward_rate(self) -> float:
        return self.up_mass / self.person_transitions

    @property
    def downward_rate(self) -> float:
        return self.down_mass / self.person_transitions

    @property
    def top_state_reach(self) -> float:
        return self.reach_mass / self.n_individuals


@dataclass(frozen=True)
class MobilityMetrics:
    upward_rate: float
    downward_rate: float
    top_state_reach: float


def mobility_metrics(summary: TrajectorySummary) -> MobilityMetrics:
    """Upward/downward transition rates and the share ever reaching the top tier."""
    return MobilityMetrics(upward_rate=summary.upward_rate,
                           downward_rate=summary.downward_rate,
                           top_state_reach=summary.top_state_reach)


def _individual_matrix(spec: DbnSpec, person: Individual) -> np.ndarray:
    return spec.admit() if person.admitted else spec.base()


def simulate_population(spec: DbnSpec, population: Sequence, seed: int | None = None,
                        mode: str = "expected",
                        emit_scores: bool = False) -> TrajectorySummary:
    """Propagate a population for ``spec.generations`` transitions.

    ``expected`` mode propagates each individual's tier distribution exactly
    (deterministic; no seed needed). ``sample`` mode draws one path per
    individual from a philox4x64 stream keyed by (seed, individual index).
    Admitted individuals use the admit matrix when one is configured.
    Emissions, when requested, are diagnostic only and never feed transitions.
    """
    people = _coerce_population(population)
    if mode not in ("expected", "sample"):
        raise ValueError(f"mode must be 'expected' or 'sample', got {mode!r}")
    if mode == "sample" and seed is None:
        raise ValueError("sample mode requires a seed")
    g = spec.generations
    n = len(people)
    v0 = spec.initial_distribution()
    occupancy = np.zeros((g + 1, N_TIERS))
    up_mass = 0.0
    down_mass = 0.0
    reach_mass = 0.0
    emissions = np.zeros(g + 1) if emit_scores else None
    mu_x = np.asarray(spec.emission_means, dtype=float)
    sigma_x = np.asarray(spec.emission_sds, dtype=float)

    for idx, person in enumerate(people):
        base = _individual_matrix(spec, person)
        if mode == "expected":
            v = v0.copy()
            occupancy[0] += v
            if emissions is not None:
                emissions[0] += float(v @ mu_x)
            never_top = v[:N_TIERS - 1].copy()  # mass never yet in the top tier
            for t in range(1, g + 1):
                k = build_kernel(spec, person.s, person.c, t, matrix=base)
                up_mass += float((v[:, None] * k)[_UP].sum())
                down_mass += float((v[:, None] * k)[_DOWN].sum())
                never_top = never_top @ k[:N_TIERS - 1, :N_TIERS - 1]
                v = v @ k
                occupancy[t] += v
                if emissions is not None:
                    emissions[t] += float(v @ mu_x)
            reach_mass += 1.0 - float(never_top.sum())
        else:
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, idx))))
            # Separate stream: drawing emissions must not change the path.
            emit_rng = (np.random.Generator(np.random.Philox(
                np.random.SeedSequence((seed, idx, 1)))) if emissions is not None else None)
            state = int(rng.choice(N_TIERS, p=v0))
            occupancy[0, state] += 1.0
            if emit_rng is not None:
                emissions[0] += float(emit_rng.normal(mu_x[state], sigma_x[state]))
            reached = state == N_TIERS - 1
            for t in range(1, g + 1):
                k = build_kernel(spec, person.s, person.c, t, matrix=base)
                new_state = int(rng.choice(N_TIERS, p=k[state]))
                up_mass += float(new_state > state)
                down_mass += float(new_state < state)
                state = new_state
                reached = reached or state == N_TIERS - 1
                occupancy[t, state] += 1.0
                if emit_rng is not None:
                    emissions[t] += float(emit_rng.normal(mu_x[state], sigma_x[state]))
            reach_mass += float(reached)

    occupancy /= n
    return TrajectorySummary(
        occupancy=tuple(tuple(float(x) for x in row) for row in occupancy),
        generations=g, n_individuals=n, mode=mode,
        up_mass=up_mass, down_mass=down_mass, person_transitions=n * g,
        reach_mass=reach_mass,
        mean_emission=tuple(float(e / n) for e in emissions) if emissions is not None else None,
    )


def occupancy_rows(summary: TrajectorySummary) -> list[dict]:
    """CSV-ready per-generation occupancy (generation 0 is the initial draw)."""
    rows = []
    for t, dist in enumerate(summary.occupancy):
        row = {"generation": t}
        for tier in range(N_TIERS):
            row[f"tier{tier + 1}"] = dist[tier]
        rows.append(row)
    return rows


def default_population(n: int = 2000, alpha: float = 0.0,
                       admitted_top_fraction: float = 0.0) -> tuple[Individual, ...]:
    """Deterministic stylized population on an evenly spaced SES grid.

    With ``alpha`` > 0 each person below the median carries the clamped
    correction alpha * (0.5 - s); ``admitted_top_fraction`` marks the top of
    the grid as admitted (a crude stand-in for a raw-score elite when no
    cohort is wired in).
    """
    people = []
    for i in range(n):
        s = (i + 0.5) / n
        c = max(alpha * (0.5 - s), 0.0)
        admitted = s >= 1.0 - admitted_top_fraction if admitted_top_fraction > 0 else False
        people.append(Individual(s=s, c=c, admitted=admitted))
    return tuple(people)
