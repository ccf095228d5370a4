import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from qwdefect.model import CoinScheme, ShiftParams, single_axis_example

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

Q09 = math.sqrt(0.19)
LAMBDA_STAR = 5 / 9


@pytest.fixture
def example():
    return single_axis_example((0.9, 0.9))


@pytest.fixture
def control():
    params, scheme = single_axis_example((0.9, 0.9))
    return params, CoinScheme(2, scheme.Phi, scheme.Phi)


def unit_vector(rng, n):
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_params(rng, dim, lo=0.05, hi=0.95, phases=True):
    p = rng.uniform(lo, hi, dim) * rng.choice([-1, 1], dim)
    ph = rng.uniform(0, 2 * np.pi, dim) if phases else None
    return ShiftParams.from_p(p, ph)


def orthogonal_scheme(rng, dim):
    """Random scheme satisfying the bilinear orthogonality and coupling assumptions:
    ``Omega_j = c_j (phi_j1, -phi_j2)`` with generic ``Phi``."""
    Phi = unit_vector(rng, 2 * dim)
    c = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    blocks = Phi.reshape(dim, 2)
    Om = np.stack([c * blocks[:, 0], -c * blocks[:, 1]], axis=1).reshape(-1)
    return CoinScheme(dim, Phi, Om / np.linalg.norm(Om))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
