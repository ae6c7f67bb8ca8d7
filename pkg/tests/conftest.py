import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_market(rng, nx, ny, phi_scale=1.0, mass=(0.5, 2.0)):
    from matchtu import Margins

    phi = rng.uniform(-phi_scale, phi_scale, size=(nx, ny))
    return phi, Margins(rng.uniform(*mass, size=nx), rng.uniform(*mass, size=ny))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
