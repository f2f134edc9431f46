import io
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from amf import ApplicantRecord, Cohort, SchemaMapping, load_cohort

settings.register_profile("det", derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("det")

# Golden-number tests need the user-downloaded PISA 2022 Korea extract
# (columns CNTSTUID, PV1MATH, ESCS, W_FSTUWT for KOR rows). Point
# AMF_PISA2022_KOR_CSV at it, or drop it at tests/data/pisa2022_korea.csv.
PISA_ENV = "AMF_PISA2022_KOR_CSV"
PISA_DEFAULT = Path(__file__).parent / "data" / "pisa2022_korea.csv"


def pisa_csv_path() -> Path | None:
    env = os.environ.get(PISA_ENV)
    if env and Path(env).exists():
        return Path(env)
    if PISA_DEFAULT.exists():
        return PISA_DEFAULT
    return None


@pytest.fixture(scope="session")
def pisa_path():
    path = pisa_csv_path()
    if path is None:
        pytest.skip(f"PISA 2022 Korea CSV not available (set {PISA_ENV} "
                    f"or place it at {PISA_DEFAULT})")
    return path


@pytest.fixture(scope="session")
def pisa_schema():
    return SchemaMapping(merit="PV1MATH", escs="ESCS", id="CNTSTUID", weight="W_FSTUWT")


def make_cohort(n: int, seed: int, merit_sd: float = 40.0, slope: float = 20.0) -> Cohort:
    """Synthetic scored cohort: merit loosely increasing in SES plus noise."""
    rng = np.random.default_rng(seed)
    escs = rng.normal(0.0, 1.0, n)
    merit = 600.0 + slope * escs + rng.normal(0.0, merit_sd, n)
    weight = rng.uniform(0.5, 3.0, n)
    records = tuple(ApplicantRecord(id=f"p{i:04d}", merit_score=float(m),
                                    escs_raw=float(e), weight=float(w))
                    for i, (m, e, w) in enumerate(zip(merit, escs, weight)))
    return Cohort(records=records, provenance=f"synthetic(seed={seed})")


@pytest.fixture
def small_cohort() -> Cohort:
    return make_cohort(80, seed=7)


def cohort_from_text(text: str, **schema) -> Cohort:
    mapping = SchemaMapping(**schema) if schema else SchemaMapping(merit="merit", escs="escs")
    return load_cohort(io.StringIO(text), mapping)
