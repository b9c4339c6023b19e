import os
from pathlib import Path

import numpy as np
import pytest

from hjreach import gridsolver as G
from hjreach import systems as S
from hjreach.rollout import GridValueSource

REPO = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def air3d_oracle():
    """Reference Air3D grid at 61^3 with snapshots every 0.02 s."""
    spec = S.air3d()
    snaps = G.solve(spec, 61, snapshot_times=np.linspace(0.0, spec.horizon, 51))
    return spec, snaps, GridValueSource(snaps)


@pytest.fixture(scope="session")
def runs_root():
    """Where long training runs live; reused across sessions when complete."""
    return Path(os.environ.get("HJREACH_RUNS", REPO / "runs"))


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    """Record one PASS/FAIL line per acceptance criterion and show it immediately."""

    def emit(number, title, ok, detail=""):
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        request.config._acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
