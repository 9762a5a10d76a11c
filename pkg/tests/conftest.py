import numpy as np
import pytest

from lobexec.market_data import SynthSpec, synth_generate

# (criterion, passed, detail) lines filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_panel():
    return synth_generate(SynthSpec(n_tickers=3, n_days=12, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
