"""Direct pricing through the two-state pricing chain.

Under the pricing measure for level k the moves form a Markov chain on
{down=0, up=1}: ``p_u`` is an up after an up, ``p_d`` an up after a down.  The
first N~-1 moves follow that chain and the last H+1 moves are taken together,
all up or all down, with the probabilities of the state they leave.  Values at
the two extremes of a delay block are discounted expectations of the claim
under this chain, conditioned on the initial state.

``forward_distribution`` is the production path.  ``lemma1_distribution`` and
``lemma2_distribution`` evaluate the closed-form path-counting sums and are
kept for verification.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .lattice import (
    EXACT_COMB_LIMIT,
    MarketParams,
    PayoffSpec,
    apply_payoff,
    check_convexity,
    delay_measures,
    node_price,
    require_valid,
    terminal_payoffs,
)
from .dp import NonConvexPayoff

UP, DOWN = 1, 0


class InvalidChain(ValueError):
    pass


@dataclass(frozen=True)
class ChainSpec:
    p_u: float
    p_d: float
    n_eff: int
    delay: int

    @property
    def q_u(self) -> float:
        return 1.0 - self.p_u

    @property
    def q_d(self) -> float:
        return 1.0 - self.p_d

    @classmethod
    def from_params(cls, params: MarketParams, k: int) -> "ChainSpec":
        m = delay_measures(params)
        return cls(p_u=m.p_u, p_d=m.p_d, n_eff=params.n_periods - k, delay=params.delay)

    def validate(self) -> None:
        if self.n_eff < 1:
            raise InvalidChain("n_eff must be at least 1")
        if self.delay < 0:
            raise InvalidChain("delay must be nonnegative")
        for name in ("p_u", "p_d"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidChain(f"{name}={value} is not a probability")
        if self.delay >= 1 and not self.p_u > self.p_d:
            raise InvalidChain("p_u must exceed p_d when delay >= 1")


@dataclass(frozen=True)
class TerminalDistribution:
    """Law of the terminal up-count i = 0 .. N~+H given the initial state."""

    probs: np.ndarray
    conditioned_on: int

    def total(self) -> float:
        return float(np.sum(self.probs))


def forward_distribution(chain: ChainSpec, initial_state: int) -> TerminalDistribution:
    """Propagate (up-count, last move) probabilities; O(N~^2) time, O(N~) memory."""
    chain.validate()
    if initial_state not in (UP, DOWN):
        raise InvalidChain("initial state must be 0 or 1")
    steps = chain.n_eff - 1
    h = chain.delay
    p_u, p_d, q_u, q_d = chain.p_u, chain.p_d, chain.q_u, chain.q_d
    # last_up[i] / last_down[i]: i ups so far, previous move up / down
    last_up = np.zeros(steps + 1)
    last_down = np.zeros(steps + 1)
    if initial_state == UP:
        last_up[0] = 1.0
    else:
        last_down[0] = 1.0
    for m in range(steps):
        new_up = np.zeros(steps + 1)
        new_up[1 : m + 2] = p_u * last_up[: m + 1] + p_d * last_down[: m + 1]
        new_down = np.zeros(steps + 1)
        new_down[: m + 1] = q_u * last_up[: m + 1] + q_d * last_down[: m + 1]
        last_up, last_down = new_up, new_down
    probs = np.zeros(chain.n_eff + h + 1)
    probs[h + 1 : h + 2 + steps] += p_u * last_up + p_d * last_down
    probs[: steps + 1] += q_u * last_up + q_d * last_down
    return TerminalDistribution(probs, initial_state)


def binom(n, k) -> float:
    """Binomial coefficient, zero for negative or out-of-range arguments."""
    if n < 0 or k < 0 or k > n:
        return 0.0
    if n <= EXACT_COMB_LIMIT:
        return float(math.comb(n, k))
    return math.exp(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def _term(coeff, *factors) -> float:
    # factors: (base, exponent) pairs; a vanishing coefficient kills the term
    if coeff == 0.0:
        return 0.0
    out = coeff
    for base, exponent in factors:
        out *= base**exponent
    return out


def _lemma1_f(chain: ChainSpec, i: int, j: int) -> float:
    n, h = chain.n_eff, chain.delay
    return _term(
        binom(n + h - i - 1, j - 1) * binom(i - h, j),
        (chain.q_u, j),
        (chain.q_d, n + h - i - j),
        (chain.p_u, i - j - h),
        (chain.p_d, j),
    )


def _lemma1_h(chain: ChainSpec, i: int, j: int) -> float:
    n = chain.n_eff
    first = _term(
        binom(n - i - 2, j - 1) * binom(i, j - 1),
        (chain.q_u, j),
        (chain.q_d, n - i - j),
        (chain.p_u, i - j + 1),
        (chain.p_d, j - 1),
    )
    second = _term(
        binom(n - i - 2, j - 1) * (binom(i + 1, j) - binom(i, j - 1)),
        (chain.q_u, j + 1),
        (chain.q_d, n - i - j - 1),
        (chain.p_u, i - j),
        (chain.p_d, j),
    )
    return first + second


def _lemma2_f(chain: ChainSpec, i: int, j: int) -> float:
    n, h = chain.n_eff, chain.delay
    first = _term(
        binom(i - h - 2, j - 1) * binom(n + h - i, j - 1),
        (chain.q_u, j - 1),
        (chain.q_d, n + h - i - j + 1),
        (chain.p_u, i - j - h),
        (chain.p_d, j),
    )
    second = _term(
        binom(i - h - 2, j - 1) * (binom(n + h - i + 1, j) - binom(n + h - i, j - 1)),
        (chain.q_u, j),
        (chain.q_d, n + h - i - j),
        (chain.p_u, i - j - h - 1),
        (chain.p_d, j + 1),
    )
    return first + second


def _lemma2_h(chain: ChainSpec, i: int, j: int) -> float:
    n = chain.n_eff
    return _term(
        binom(i - 1, j - 1) * binom(n - i, j),
        (chain.q_u, j),
        (chain.q_d, n - i - j),
        (chain.p_u, i - j),
        (chain.p_d, j),
    )


def _f_sum(term, chain, i, lo, hi, upper):
    if not lo <= i <= hi:
        return 0.0
    return sum(term(chain, i, j) for j in range(1, upper + 1))


def lemma1_distribution(chain: ChainSpec) -> TerminalDistribution:
    """Closed-form law conditioned on an initial up move.

    Every summand is restricted to the index range where it is defined, so
    the five cases (only h-sums, h and f sums, the i = N~-1 boundary, only
    f-sums, all ups) come out without choosing a branch.  When N~ >= H+3 the
    cases are disjoint; for shorter chains several apply to the same i and
    all of them contribute.
    """
    chain.validate()
    n, h = chain.n_eff, chain.delay
    probs = np.zeros(n + h + 1)
    for i in range(n + h + 1):
        total = _f_sum(_lemma1_h, chain, i, 0, n - 2, min(i + 1, n - i - 1))
        total += _f_sum(_lemma1_f, chain, i, h + 1, n + h - 1, min(i - h, n + h - i))
        if i == n - 1:
            total += chain.p_u ** (n - 1) * chain.q_u
        if i == n + h:
            total += chain.p_u**n
        probs[i] = total
    return TerminalDistribution(probs, UP)


def lemma2_distribution(chain: ChainSpec) -> TerminalDistribution:
    """Closed-form law conditioned on an initial down move (counts upward runs)."""
    chain.validate()
    n, h = chain.n_eff, chain.delay
    probs = np.zeros(n + h + 1)
    for i in range(n + h + 1):
        total = _f_sum(_lemma2_h, chain, i, 1, n - 1, min(i, n - i))
        total += _f_sum(_lemma2_f, chain, i, h + 2, n + h, min(i - h - 1, n + h - i + 1))
        if i == h + 1:
            total += chain.q_d ** (n - 1) * chain.p_d
        if i == 0:
            total += chain.q_d**n
        probs[i] = total
    return TerminalDistribution(probs, DOWN)


def lemma1_piecewise(chain: ChainSpec) -> np.ndarray:
    """First-match reading of the five-case split for an initial up move.

    Agrees with :func:`lemma1_distribution` when N~ >= H+3; used to report
    where a first-match case split loses mass on short chains.
    """
    n, h = chain.n_eff, chain.delay
    probs = np.zeros(n + h + 1)
    for i in range(n + h + 1):
        hs = sum(_lemma1_h(chain, i, j) for j in range(1, min(i + 1, n - i - 1) + 1))
        fs = sum(_lemma1_f(chain, i, j) for j in range(1, min(i - h, n + h - i) + 1))
        if i <= h:
            probs[i] = hs
        elif i <= n - 2:
            probs[i] = hs + fs
        elif i == n - 1:
            probs[i] = chain.p_u ** (n - 1) * chain.q_u + sum(
                _lemma1_f(chain, i, j) for j in range(1, min(n - h - 1, h + 1) + 1)
            )
        elif i <= n + h - 1:
            probs[i] = fs
        else:
            probs[i] = chain.p_u**n
    return probs


def lemma2_piecewise(chain: ChainSpec) -> np.ndarray:
    """First-match reading of the five-case split for an initial down move."""
    n, h = chain.n_eff, chain.delay
    probs = np.zeros(n + h + 1)
    for i in range(n + h + 1):
        hs = sum(_lemma2_h(chain, i, j) for j in range(1, min(i, n - i) + 1))
        fs = sum(_lemma2_f(chain, i, j) for j in range(1, min(i - h - 1, n + h - i + 1) + 1))
        if i == 0:
            probs[i] = chain.q_d**n
        elif i <= h:
            probs[i] = hs
        elif i == h + 1:
            probs[i] = chain.q_d ** (n - 1) * chain.p_d + sum(
                _lemma2_h(chain, i, j) for j in range(1, min(h + 1, n - h - 1) + 1)
            )
        elif i <= n - 1:
            probs[i] = hs + fs
        else:
            probs[i] = fs
    return probs


def _distributions(params: MarketParams, k: int, method: str):
    chain = ChainSpec.from_params(params, k)
    if method == "forward":
        return forward_distribution(chain, UP), forward_distribution(chain, DOWN)
    if method == "lemma":
        return lemma1_distribution(chain), lemma2_distribution(chain)
    raise ValueError(f"unknown method {method!r}")


def _leaf_payoff_vector(params: MarketParams, spec: PayoffSpec, k: int, a: int) -> np.ndarray:
    n, h = params.n_periods, params.delay
    n_eff = n - k
    i = np.arange(n_eff + h + 1)
    b = k - h - a
    terminal_ups = a + i
    prices = np.asarray(node_price(params, terminal_ups, b + n_eff + h - i), dtype=float)
    return apply_payoff(spec, prices, terminal_ups)


def direct_values(
    params: MarketParams, spec: PayoffSpec, k: int, a: int = 0, method: str = "forward"
) -> tuple:
    """(value_up, value_down) of the block rooted at (a, k-H-a)."""
    require_valid(params)
    n, h = params.n_periods, params.delay
    if not h <= k <= n - 1:
        raise IndexError(f"k={k} outside {h}..{n - 1}")
    if not 0 <= a <= k - h:
        raise IndexError(f"root up-count {a} outside 0..{k - h}")
    if not check_convexity(spec, params):
        raise NonConvexPayoff("payoff is not convex in the terminal price")
    dist_up, dist_down = _distributions(params, k, method)
    payoff = _leaf_payoff_vector(params, spec, k, a)
    disc = math.exp(-params.r * (n - k))
    return float(disc * dist_up.probs @ payoff), float(disc * dist_down.probs @ payoff)


def direct_price(params: MarketParams, spec: PayoffSpec, method: str = "forward") -> float:
    value_up, value_down = direct_values(params, spec, params.delay, 0, method)
    return math.exp(-params.r * params.delay) * max(value_up, value_down)


def direct_prices(params: MarketParams, payoffs: np.ndarray) -> np.ndarray:
    """Prices for many claims at once; ``payoffs`` has shape (claims, N+1).

    Rows must be convex in the terminal price; that is not rechecked here.
    """
    require_valid(params)
    n, h = params.n_periods, params.delay
    dist_up, dist_down = _distributions(params, h, "forward")
    disc = math.exp(-params.r * n)
    payoffs = np.atleast_2d(np.asarray(payoffs, dtype=float))
    return disc * np.maximum(payoffs @ dist_up.probs, payoffs @ dist_down.probs)


def distribution_csv(dist_up: TerminalDistribution, dist_down: TerminalDistribution) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("i", "prob_up", "prob_down"))
    for i, (pu, pd) in enumerate(zip(dist_up.probs, dist_down.probs)):
        writer.writerow((i, f"{pu:.12g}", f"{pd:.12g}"))
    return buf.getvalue()


def terminal_log_variance(chain: ChainSpec, log_u: float, log_d: float) -> float:
    """Variance of log(S_N/S_{k-H}) under the equal-weight mixture of initial states."""
    up = forward_distribution(chain, UP).probs
    down = forward_distribution(chain, DOWN).probs
    mix = 0.5 * (up + down)
    total = chain.n_eff + chain.delay
    i = np.arange(total + 1)
    logs = i * log_u + (total - i) * log_d
    mean = mix @ logs
    return float(mix @ (logs - mean) ** 2)
