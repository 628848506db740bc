"""Brute-force references on small trees: path enumeration and exact LPs.

Strategies are tables.  The holding ``deltas[k]`` for k = H..N-1 is an array
of length 2^(k-H) indexed by the first k-H moves, with move m (1-based)
stored in bit m-1.  Holdings before time H are zero and not stored.

Portfolio accounting is self-financing with interest on the cash account:
rebalancing proceeds at time l accrue e^{r(k-l)} up to time k.  Passing
``compounding=False`` drops that interest and reproduces the bare cash-flow
sum, which coincides with the default when r = 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import simplex
from .dp import backward_induct, hedge_plan
from .lattice import MarketParams, PayoffSpec, terminal_payoffs, validate

MAX_ENUM_PERIODS = 24
MAX_LP_PERIODS = 12
FEASIBILITY_TOL = 1e-9
ARBITRAGE_TOL = 1e-9
PATH_CHUNK = 1 << 15


class TooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    moves: tuple

    def __post_init__(self):
        if any(m not in (0, 1) for m in self.moves):
            raise ValueError("moves must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.moves)

    def history_index(self, length: int) -> int:
        return sum(bit << m for m, bit in enumerate(self.moves[:length]))

    def up_count(self, k: int) -> int:
        return sum(self.moves[:k])


@dataclass
class StrategyTable:
    x0: float
    deltas: dict = field(default_factory=dict)

    def check(self, params: MarketParams) -> None:
        h, n = params.delay, params.n_periods
        if set(self.deltas) != set(range(h, n)):
            raise ValueError(f"strategy needs holdings for k = {h}..{n - 1}")
        for k, table in self.deltas.items():
            if len(table) != 2 ** (k - h):
                raise ValueError(f"holding at k={k} needs {2 ** (k - h)} entries")

    def holding(self, k: int, path: "Path", delay: int) -> float:
        if k < delay:
            return 0.0
        return float(self.deltas[k][path.history_index(k - delay)])

    def to_dict(self) -> dict:
        return {"x0": self.x0, "deltas": {str(k): list(map(float, v)) for k, v in self.deltas.items()}}


def _check_shape(params: MarketParams) -> None:
    if not params.s0 > 0 or not 0 < params.d < params.u:
        raise ValueError("need s0 > 0 and 0 < d < u")
    if not 0 <= params.delay <= params.n_periods - 1:
        raise ValueError("delay must lie in 0..N-1")


def enumerate_paths(n: int) -> np.ndarray:
    """All 2^n move sequences as rows; row index bit m is move m+1."""
    if n > MAX_ENUM_PERIODS:
        raise TooLarge(f"path enumeration capped at N={MAX_ENUM_PERIODS}")
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.int64)


def price_paths(params: MarketParams, paths: np.ndarray) -> np.ndarray:
    """S_k(omega) for k = 0..N, shape (paths, N+1)."""
    ups = np.concatenate([np.zeros((len(paths), 1), dtype=np.int64), np.cumsum(paths, axis=1)], axis=1)
    k = np.arange(params.n_periods + 1)
    return params.s0 * params.u**ups * params.d ** (k - ups)


def history_indices(paths: np.ndarray, length: int) -> np.ndarray:
    if length == 0:
        return np.zeros(len(paths), dtype=np.int64)
    return paths[:, :length] @ (1 << np.arange(length))


def portfolio_value(
    params: MarketParams, strategy: StrategyTable, path: Path, k: int, compounding: bool = True
) -> float:
    """Value at time k of the strategy along one path."""
    _check_shape(params)
    strategy.check(params)
    n, h, r = params.n_periods, params.delay, params.r
    if path.n != n:
        raise ValueError(f"path length {path.n} != N={n}")
    if not 0 <= k <= n:
        raise IndexError(f"k={k} outside 0..{n}")
    if k < h:
        return math.exp(-r * (h - k)) * portfolio_value(params, strategy, path, h, compounding)

    def price(t):
        b = path.up_count(t)
        return params.s0 * params.u**b * params.d ** (t - b)

    def delta(t):
        return strategy.holding(max(t, h), path, h)

    value = math.exp(r * k) * strategy.x0
    for l in range(h + 1, k):
        growth = math.exp(r * (k - l)) if compounding else 1.0
        value += growth * price(l) * (delta(l - 1) - delta(l))
    value += price(k) * delta(max(k - 1, h))
    return value


def initial_values(params: MarketParams, strategy: StrategyTable) -> np.ndarray:
    """V_0 at each of the H+1 attainable S_H values (lowest first)."""
    h, r = params.delay, params.r
    j = np.arange(h + 1)
    s_h = params.s0 * params.u**j * params.d ** (h - j)
    return strategy.x0 + float(strategy.deltas[h][0]) * math.exp(-r * h) * s_h


def _terminal_rows(params: MarketParams, paths: np.ndarray, compounding: bool):
    """Coefficients of V_N in (x0, holdings...) for every path."""
    n, h, r = params.n_periods, params.delay, params.r
    prices = price_paths(params, paths)
    offsets = {}
    col = 1
    for k in range(h, n):
        offsets[k] = col
        col += 2 ** (k - h)
    rows = np.zeros((len(paths), col))
    rows[:, 0] = math.exp(r * n)
    for k in range(h, n):
        hold_growth = math.exp(r * (n - k - 1)) if compounding else 1.0
        coeff = hold_growth * prices[:, k + 1]
        if k >= h + 1:
            coeff = coeff - (math.exp(r * (n - k)) if compounding else 1.0) * prices[:, k]
        cols = offsets[k] + history_indices(paths, k - h)
        rows[np.arange(len(paths)), cols] += coeff
    return rows, offsets, prices


def _strategy_from_vector(params: MarketParams, vec: np.ndarray, offsets: dict) -> StrategyTable:
    h, n = params.delay, params.n_periods
    deltas = {k: np.array(vec[offsets[k] : offsets[k] + 2 ** (k - h)]) for k in range(h, n)}
    return StrategyTable(x0=float(vec[0]), deltas=deltas)


def _terminal_claim(params: MarketParams, spec: PayoffSpec, prices: np.ndarray, paths: np.ndarray):
    values = terminal_payoffs(spec, params)
    return values[paths.sum(axis=1)]


def _terminal_values(params: MarketParams, strategy: StrategyTable, paths: np.ndarray, compounding: bool):
    """V_N along each path without forming the dense coefficient matrix."""
    n, h, r = params.n_periods, params.delay, params.r
    prices = price_paths(params, paths)
    values = np.full(len(paths), math.exp(r * n) * strategy.x0)
    for k in range(h, n):
        hold = np.asarray(strategy.deltas[k], dtype=float)[history_indices(paths, k - h)]
        coeff = (math.exp(r * (n - k - 1)) if compounding else 1.0) * prices[:, k + 1]
        if k >= h + 1:
            coeff = coeff - (math.exp(r * (n - k)) if compounding else 1.0) * prices[:, k]
        values += coeff * hold
    return values, prices


def superrep_check(
    params: MarketParams, spec: PayoffSpec, strategy: StrategyTable, compounding: bool = True
) -> dict:
    _check_shape(params)
    if params.n_periods > MAX_ENUM_PERIODS:
        raise TooLarge(f"path enumeration capped at N={MAX_ENUM_PERIODS}")
    strategy.check(params)
    n = params.n_periods
    claim_table = terminal_payoffs(spec, params)
    worst = math.inf
    for start in range(0, 2**n, PATH_CHUNK):
        idx = np.arange(start, min(start + PATH_CHUNK, 2**n))
        paths = ((idx[:, None] >> np.arange(n)) & 1).astype(np.int64)
        terminal, _ = _terminal_values(params, strategy, paths, compounding)
        worst = min(worst, float((terminal - claim_table[paths.sum(axis=1)]).min()))
    return {
        "feasible": bool(worst >= -FEASIBILITY_TOL),
        "worst_slack": worst,
        "initial_worst": float(initial_values(params, strategy).max()),
    }


def strategy_from_plan(params: MarketParams, plan: dict) -> StrategyTable:
    """Expand a per-root-node hedge plan into a history table."""
    h, n = params.delay, params.n_periods
    deltas = {}
    for k in range(h, n):
        length = k - h
        hist = np.arange(2**length)
        ups = np.array([bin(x).count("1") for x in hist])
        deltas[k] = np.array([plan[(int(a), length - int(a))][1] for a in ups], dtype=float)
    return StrategyTable(x0=plan[(0, 0)][0], deltas=deltas)


def dp_strategy(params: MarketParams, spec: PayoffSpec) -> StrategyTable:
    return strategy_from_plan(params, hedge_plan(backward_induct(params, spec)))


def _lp_cap(params: MarketParams) -> None:
    if params.n_periods > MAX_LP_PERIODS:
        raise TooLarge(f"LP oracle capped at N={MAX_LP_PERIODS}")


def minmax_lp_oracle(
    params: MarketParams, spec: PayoffSpec, compounding: bool = True, return_strategy: bool = False
):
    """min over super-replicating strategies of the worst initial value, as one LP."""
    _check_shape(params)
    _lp_cap(params)
    n, h, r = params.n_periods, params.delay, params.r
    paths = enumerate_paths(n)
    rows, offsets, prices = _terminal_rows(params, paths, compounding)
    n_vars = rows.shape[1] + 1  # t is the last variable
    claim = _terminal_claim(params, spec, prices, paths)

    j = np.arange(h + 1)
    s_h = params.s0 * params.u**j * params.d ** (h - j)
    head = np.zeros((h + 1, n_vars))
    head[:, 0] = 1.0
    head[:, offsets[h]] = math.exp(-r * h) * s_h
    head[:, -1] = -1.0
    tail = np.zeros((len(paths), n_vars))
    tail[:, :-1] = -rows
    c = np.zeros(n_vars)
    c[-1] = 1.0
    # Shift x0 and t by the same cash amount so the origin is feasible and
    # the solver can start from the slack basis.
    shift = 2.0 * math.exp(-r * n) * (float(np.max(np.abs(claim))) + 1.0)
    a_ub = np.vstack([head, tail])
    b_ub = np.concatenate([np.zeros(h + 1), -claim])
    offset = np.zeros(n_vars)
    offset[0] = offset[-1] = shift
    problem = simplex.LpProblem(c=c, a_ub=a_ub, b_ub=b_ub - a_ub @ offset, free=range(n_vars))
    result = simplex.solve(problem)
    x = result.x + offset
    if return_strategy:
        return float(x[-1]), _strategy_from_vector(params, x[:-1], offsets)
    return float(x[-1])


def arbitrage_search(params: MarketParams, compounding: bool = True) -> dict:
    """Look for a strategy with max V_0 <= 0, V_N >= 0 and V_N > 0 somewhere.

    The LP maximizes the total terminal value over strategies normalized to
    |delta| <= 1 and |x0| <= max path price.  Arbitrage is a cone, so the
    box loses nothing; it keeps rounding noise from being scaled up into a
    spurious optimum.  A positive optimum certifies an arbitrage, which is
    then shifted in x0 so that max V_0 is exactly zero.
    """
    _check_shape(params)
    _lp_cap(params)
    n, h, r = params.n_periods, params.delay, params.r
    paths = enumerate_paths(n)
    rows, offsets, prices = _terminal_rows(params, paths, compounding)
    n_vars = rows.shape[1]
    j = np.arange(h + 1)
    s_h = params.s0 * params.u**j * params.d ** (h - j)
    head = np.zeros((h + 1, n_vars))
    head[:, 0] = 1.0
    head[:, offsets[h]] = math.exp(-r * h) * s_h
    total = rows.sum(axis=0)
    bound = np.ones(n_vars)
    bound[0] = float(prices.max())
    eye = np.eye(n_vars)
    problem = simplex.LpProblem(
        c=-total,
        a_ub=np.vstack([head, -rows, eye, -eye]),
        b_ub=np.concatenate([np.zeros(h + 1), np.zeros(len(paths)), bound, bound]),
        free=range(n_vars),
    )
    result = simplex.solve(problem)
    optimum = -result.objective
    found = bool(optimum > ARBITRAGE_TOL)
    certificate = None
    if found:
        certificate = _strategy_from_vector(params, result.x, offsets)
        certificate.x0 -= float(initial_values(params, certificate).max())
        terminal = rows @ _strategy_vector(certificate, offsets, n_vars)
        if terminal.min() < -FEASIBILITY_TOL or terminal.max() <= ARBITRAGE_TOL:
            raise simplex.LpError("arbitrage certificate failed re-evaluation; degenerate problem")
    return {"arbitrage_found": found, "optimum": float(optimum), "certificate": certificate}


def _strategy_vector(strategy: StrategyTable, offsets: dict, size: int) -> np.ndarray:
    vec = np.zeros(size)
    vec[0] = strategy.x0
    for k, table in strategy.deltas.items():
        vec[offsets[k] : offsets[k] + len(table)] = table
    return vec


def verification_report(params: MarketParams, spec: PayoffSpec, with_lp: bool = True) -> dict:
    """Cross-check DP, direct and LP prices plus path-wise feasibility of the DP hedge."""
    from .direct import direct_price
    from .dp import dp_price

    price_dp = dp_price(params, spec)
    price_direct = direct_price(params, spec)
    check = superrep_check(params, spec, dp_strategy(params, spec))
    use_lp = with_lp and params.n_periods <= MAX_LP_PERIODS
    price_lp = minmax_lp_oracle(params, spec) if use_lp else None
    diffs = [abs(price_dp - price_direct)]
    if price_lp is not None:
        diffs.append(abs(price_dp - price_lp))
    report = dict(check)
    report.update(
        price_lp=price_lp,
        price_dp=price_dp,
        price_direct=price_direct,
        max_abs_diff=max(diffs),
    )
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False)


__all__ = [
    "Path",
    "StrategyTable",
    "TooLarge",
    "arbitrage_search",
    "dp_strategy",
    "enumerate_paths",
    "minmax_lp_oracle",
    "portfolio_value",
    "strategy_from_plan",
    "superrep_check",
    "initial_values",
    "verification_report",
]
