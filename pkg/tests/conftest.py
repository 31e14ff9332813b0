import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from mirrorbench.attack import make_template  # noqa: E402
from mirrorbench.nand import geometry_for  # noqa: E402

# fast KDF for tests that are not about the KDF itself
FAST_KDF = 16


@pytest.fixture
def small():
    return geometry_for("desk-small")


@pytest.fixture
def phone(small):
    """Provisioned desk-small phone: (template, chip) with passcode 1234."""
    return make_template(small, "1234", seed=7, kdf_iterations=FAST_KDF)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
