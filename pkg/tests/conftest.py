import numpy as np
import pytest

from ewc.core import UserHistory, predict_array

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store a one-line pass/fail verdict for the terminal summary."""

    def record(name: str, passed: bool, detail: str = ""):
        _CRITERIA[name] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s.split()[0]) if s.split()[0].isdigit() else 99):
        passed, detail = _CRITERIA[name]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def separable_user(rng, T=40, margin=0.05, need_both=True):
    """Noise-free history from a random boundary, every point at least ``margin`` away."""
    while True:
        theta = np.array([rng.uniform(-0.5, 1.6), rng.uniform(-1.5, 2.0), rng.choice([-1.0, 1.0])])
        tau, e = [], []
        tries = 0
        while len(tau) < T and tries < 50 * T:
            tries += 1
            t, x = rng.uniform(1.0, 1.5), rng.uniform(0.5, 1.0)
            if abs(theta[2] * (t - theta[1] * x - theta[0])) >= margin:
                tau.append(t)
                e.append(x)
        if len(tau) < T:
            continue
        y = predict_array(theta, np.array(tau), np.array(e))
        if need_both and len(set(y.tolist())) < 2:
            continue
        return theta, UserHistory(tau, e, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
