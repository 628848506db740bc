import math

import numpy as np
import pytest

from delayed_binomial.lattice import MarketParams, PayoffSpec, terminal_prices

WORKED = MarketParams(s0=4.0, u=2.0, d=0.5, r=0.0, n_periods=2, delay=1)


def random_market(rng, n_lo=2, n_hi=12, margin=(0.1, 0.9), delay=None):
    """Market with e^r placed a random fraction of the way through (log d, log u)."""
    n = int(rng.integers(n_lo, n_hi + 1))
    h = int(rng.integers(0, n)) if delay is None else delay
    log_u = rng.uniform(0.02, 0.4)
    log_d = -rng.uniform(0.02, 0.4)
    r = log_d + rng.uniform(*margin) * (log_u - log_d)
    return MarketParams(
        s0=float(rng.uniform(5, 100)), u=math.exp(log_u), d=math.exp(log_d), r=r, n_periods=n, delay=h
    )


def random_convex_table(rng, params):
    """Max of a few affine functions of the terminal price, rounded to keep it tame."""
    x = terminal_prices(params)
    slopes = rng.uniform(-2, 2, size=3)
    cuts = rng.uniform(x.min(), x.max(), size=3)
    values = np.max([s * (x - c) for s, c in zip(slopes, cuts)], axis=0)
    return PayoffSpec.from_table(np.maximum(values, 0.0) + rng.uniform(0, 1))


def random_payoff(rng, params):
    pick = rng.integers(0, 3)
    x = terminal_prices(params)
    strike = float(rng.uniform(x.min(), x.max()))
    if pick == 0:
        return PayoffSpec.call(strike)
    if pick == 1:
        return PayoffSpec.put(strike)
    return random_convex_table(rng, params)


@pytest.fixture
def worked():
    return WORKED


@pytest.fixture
def rng():
    return np.random.default_rng(7)


ACCEPTANCE_LINES = []


def record(line: str) -> None:
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
