import numpy as np
import pytest

from nann import create_model, generate_synthetic

# Collected by tests/test_acceptance.py; printed in the terminal summary.
ACCEPTANCE_RESULTS: list[tuple[str, bool, float, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset():
    return generate_synthetic(seed=7, n_users=20, n_items=40, d_x=8, z_dim=3, density=0.05)


@pytest.fixture
def small_model():
    return create_model(d_x=8, d_h=4, z_dim=3, hidden=(8, 8), seed=3)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, seconds, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name} ({seconds:.1f}s) {detail}")
