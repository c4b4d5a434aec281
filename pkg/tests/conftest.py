import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from srclock.config import DEFAULTS, _merge, from_dict  # noqa: E402


def make_config(**sections):
    """Resolved config from DEFAULTS with section overrides."""
    return from_dict(_merge(DEFAULTS, sections))


@pytest.fixture
def small_config():
    # two weakly coupled ensembles, short schedule; cheap enough for unit tests
    return make_config(
        atoms={"occupied": [4.5, -4.5], "n_total": 2000.0, "splitting_hz_per_mf": 100.0},
        initial={"mode": "angle", "theta": 0.3},
        schedule=[{"kind": "emit", "duration_s": 2e-3}],
    )


# (criterion, PASS/FAIL, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
