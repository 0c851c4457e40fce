import json
from types import SimpleNamespace

import numpy as np
import pytest

from smoattack.engine.cli import main, scenario_path
from smoattack.engine.config import load_config
from smoattack.engine.io import read_trace

# gate lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def bundled(name, **overrides):
    cfg = load_config(scenario_path(name))
    return cfg.with_overrides(**overrides) if overrides else cfg


def random_stable(rng, n, shift=0.5):
    """Random Hurwitz matrix with spectral abscissa at most ``-shift``."""
    A = rng.normal(size=(n, n))
    worst = np.max(np.linalg.eigvals(A).real)
    return A - (worst + shift) * np.eye(n)


def reproduce(out):
    """Run ``reproduce-paper`` into ``out``; returns ``(exit code, report)``."""
    code = main(["reproduce-paper", "--out", str(out), "--no-plots"])
    return code, json.loads((out / "metrics.json").read_text())


@pytest.fixture(scope="session")
def reproduction(tmp_path_factory):
    """One full reproduction run; the scenario fixtures below read from it."""
    out = tmp_path_factory.mktemp("reproduction")
    code, report = reproduce(out)
    return out, code, report


def _scenario(reproduction, name):
    out, _, report = reproduction
    return read_trace(out / f"{name}.csv"), SimpleNamespace(**report["scenarios"][name])


@pytest.fixture(scope="session")
def wecc_run(reproduction):
    """Full-horizon WECC run (stw, nl and sparse blocks)."""
    return _scenario(reproduction, "wecc")


@pytest.fixture(scope="session")
def wecc_reference_run(reproduction):
    return _scenario(reproduction, "wecc_reference")


@pytest.fixture(scope="session")
def smo_fixed_run(reproduction):
    return _scenario(reproduction, "smo_fixed")


@pytest.fixture(scope="session")
def smo_adaptive_run(reproduction):
    return _scenario(reproduction, "smo_adaptive")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
