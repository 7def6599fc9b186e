import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quenchphase import load_config
from quenchphase.bath import BathConfig, BathSpin, FieldParams

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# (bath, a_par kHz, a_perp kHz, theta deg, r nm) for the two bundled baths
GEOMETRY_ROWS = [
    ("A", 28.7, 81.0, 71, 0.77),
    ("A", 29.0, 46.9, 77, 0.83),
    ("A", -9.8, 27.1, 35, 1.27),
    ("A", 0.3, 23.0, 55, 1.34),
    ("A", 11.4, 20.2, 76, 1.13),
    ("B", -0.1, 177.0, 55, 0.68),
    ("B", -39.4, 148.0, 40, 0.73),
    ("B", 87.9, 122.0, 102, 0.58),
    ("B", -30.0, 80.5, 34, 0.88),
    ("B", -16.0, 72.0, 42, 0.94),
    ("B", 51.7, 58.0, 100, 0.71),
    ("B", -0.1, 45.0, 55, 1.08),
]


@pytest.fixture(scope="session")
def nv_a():
    return load_config("nv_a")


@pytest.fixture(scope="session")
def nv_b():
    return load_config("nv_b")


@pytest.fixture(scope="session")
def field():
    return FieldParams.from_larmor_khz(335.0)


@pytest.fixture(scope="session")
def omega_L(field):
    return field.omega_L


def random_bath(rng, k, field, max_khz=60.0, polarized=False):
    """Random K-spin bath with couplings up to ``max_khz``."""
    spins = []
    for _ in range(k):
        a_par = float(rng.uniform(-max_khz, max_khz))
        a_perp = float(rng.uniform(0.0, max_khz))
        if polarized:
            pz = float(rng.uniform(-1, 1))
            pp = float(rng.uniform(0, math.sqrt(1 - pz**2)))
            ph = float(rng.uniform(-math.pi, math.pi))
            spins.append(BathSpin(a_par, a_perp, pz, pp, ph))
        else:
            spins.append(BathSpin(a_par, a_perp))
    return BathConfig(tuple(spins), field=field)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
