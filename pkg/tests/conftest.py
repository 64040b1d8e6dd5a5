import sys
import random

import pytest

from spanprof.runtime import ProfileConfig, run_profiled


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def profile_run(tmp_path):
    """Run a task body under the logical backend and return the file path."""
    counter = [0]

    def run(body, workers=2, counter_name="logical"):
        counter[0] += 1
        out = tmp_path / f"run{counter[0]}.sppf"
        return run_profiled(body, ProfileConfig(out, counter_name, workers))

    return run


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
