import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from torusflow.fields import FourierField, FourierTable, catalog

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SQRT2 = float(np.sqrt(2.0))
# mean of 1 / rho_S for beta0 = 0.75, frozen from tests/oracles/stepanoff_mean_oracle.py
STEPANOFF_MEAN = 1.9211539927449013


@pytest.fixture(scope="session")
def fields():
    return catalog()


@pytest.fixture(scope="session")
def compressible():
    """``b(x) = (sin 2 pi x1, 0)``."""
    return FourierField(FourierTable.from_terms(2, [((1, 0), 0, 0.0, 1.0)], n_components=2))


# criterion number -> (title, passed, seconds, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, passed, secs, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num} [{'PASS' if passed else 'FAIL'}] {title} "
                                    f"({secs:.1f} s): {detail}")
