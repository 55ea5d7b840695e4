import numpy as np
import pytest

from trendhmm.model import ModelParams, TrendPoly

# three-state rate-study truth: T1 = a (t + 1e4)^2, T2 = T1 - 5, T3 = 3 T1, a = 1e-8
RATE_Q = np.array([[0.7, 0.2, 0.1], [0.2, 0.6, 0.2], [0.1, 0.1, 0.8]])
RATE_TRENDS = ([1.0, 2e-4, 1e-8], [-4.0, 2e-4, 1e-8], [3.0, 6e-4, 3e-8])

# two-state fixed-n truth at n = 1e4: T1 = 0, T2 = 3 ((t - n/2)/(n/2))^2 - 1
FIXED_Q = np.array([[0.7, 0.3], [0.2, 0.8]])


def rate_truth(n_scale=1e5) -> ModelParams:
    return ModelParams(
        np.full(3, 1 / 3), RATE_Q, [5.0, 10.0, 15.0], [TrendPoly.from_monomial(c, n_scale) for c in RATE_TRENDS]
    )


def fixed_truth(n=10_000) -> ModelParams:
    half = n / 2
    t2 = [3.0 - 1.0, -6.0 / half, 3.0 / half**2]
    return ModelParams(
        [0.5, 0.5], FIXED_Q, [1.0, 2.0], [TrendPoly.constant(0.0, n), TrendPoly.from_monomial(t2, n)]
    )


def random_params(rng, k, degree=2, n_scale=10.0, sigma_minus=0.0, trend_scale=2.0) -> ModelParams:
    """Random parameter with rows of Q bounded below by ``sigma_minus``."""
    q = rng.dirichlet(np.ones(k), size=k)
    q = sigma_minus + (1 - k * sigma_minus) * q
    pi = rng.dirichlet(np.ones(k))
    var = rng.uniform(0.3, 2.0, size=k)
    trends = [TrendPoly(rng.normal(0, trend_scale, size=degree + 1), n_scale) for _ in range(k)]
    return ModelParams(pi, q, var, trends, sigma_minus)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def rate_params():
    return rate_truth()


@pytest.fixture(scope="session")
def fixed_params():
    return fixed_truth()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def report_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
