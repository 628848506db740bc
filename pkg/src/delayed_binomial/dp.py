"""Super-replication by backward induction over (H+1)-period blocks.

A block rooted at node (a, b) spans times a+b .. a+b+H+1.  Its position is
fixed from the root's information and held over the last period, so the
terminal value of the block is a line ``e^{r(H+1)} x0 + delta * x`` in the
leaf price ``x``.  For convex leaf payoffs the cheapest dominating line is the
chord through the two extreme leaves, which is all the recursion needs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .lattice import (
    MarketParams,
    PayoffError,
    PayoffSpec,
    apply_payoff,
    check_convexity,
    delay_measures,
    is_convex,
    node_price,
    require_valid,
    terminal_payoffs,
)

SURFACE_COLUMNS = ("level", "a", "b", "value_up", "value_down", "x0_star", "delta_star")


class DegenerateLattice(ValueError):
    pass


class NonConvexPayoff(PayoffError):
    pass


@dataclass(frozen=True)
class BlockSolution:
    x0_star: float
    delta_star: float
    value_up: float
    value_down: float


@dataclass
class ValueSurface:
    """Extreme-point values and block hedges for every root node.

    Arrays are indexed by time level ``k`` (H..N-1) via ``k - H``; the entry
    at position ``a`` belongs to the block rooted at (a, k-H-a).
    """

    params: MarketParams
    value_up: list
    value_down: list
    x0_star: list
    delta_star: list
    price: float

    def levels(self) -> range:
        return range(self.params.delay, self.params.n_periods)

    def block(self, k: int, a: int) -> BlockSolution:
        idx = k - self.params.delay
        return BlockSolution(
            float(self.x0_star[idx][a]),
            float(self.delta_star[idx][a]),
            float(self.value_up[idx][a]),
            float(self.value_down[idx][a]),
        )

    def rows(self):
        h = self.params.delay
        for k in self.levels():
            idx = k - h
            for a in range(idx + 1):
                yield (
                    k,
                    a,
                    idx - a,
                    float(self.value_up[idx][a]),
                    float(self.value_down[idx][a]),
                    float(self.x0_star[idx][a]),
                    float(self.delta_star[idx][a]),
                )

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SURFACE_COLUMNS)
        for row in self.rows():
            writer.writerow([row[0], row[1], row[2], *(f"{v:.12g}" for v in row[3:])])
        return buf.getvalue() if fh is None else ""


def _block_arrays(root, payoff_up, payoff_down, params, measure):
    u, d, r, h = params.u, params.d, params.r, params.delay
    up_ratio = u ** (h + 1)
    down_ratio = d ** (h + 1)
    spread = up_ratio - down_ratio
    if spread == 0:
        raise DegenerateLattice("u^(H+1) equals d^(H+1)")
    delta = (payoff_up - payoff_down) / (root * spread)
    x0 = math.exp(-r * (h + 1)) * (up_ratio * payoff_down - down_ratio * payoff_up) / spread
    disc = math.exp(-r)
    value_up = disc * (measure.p_u * payoff_up + measure.q_u * payoff_down)
    value_down = disc * (measure.p_d * payoff_up + measure.q_d * payoff_down)
    return x0, delta, value_up, value_down


def solve_block(root_price, payoff_up, payoff_down, params: MarketParams) -> BlockSolution:
    """Optimal line for one block given the payoffs at its two extreme leaves."""
    if not root_price > 0:
        raise ValueError("root price must be positive")
    measure = delay_measures(params)
    x0, delta, vu, vd = _block_arrays(
        float(root_price), float(payoff_up), float(payoff_down), params, measure
    )
    return BlockSolution(float(x0), float(delta), float(vu), float(vd))


def _root_prices(params: MarketParams, time: int) -> np.ndarray:
    a = np.arange(time + 1)
    return np.asarray(node_price(params, a, time - a), dtype=float)


def backward_induct(params: MarketParams, spec: PayoffSpec, check: bool = False) -> ValueSurface:
    """Full value surface and hedge blocks.

    With ``check=True`` every block's effective leaf payoff is rebuilt from
    the child lines and tested for convexity (O(N^2 H) extra work).
    """
    require_valid(params)
    if not check_convexity(spec, params):
        raise NonConvexPayoff("payoff is not convex in the terminal price")
    measure = delay_measures(params)
    n, h = params.n_periods, params.delay
    levels = n - h
    vu = [None] * levels
    vd = [None] * levels
    xs = [None] * levels
    ds = [None] * levels

    terminal = terminal_payoffs(spec, params)
    for k in range(n - 1, h - 1, -1):
        idx = k - h
        roots = _root_prices(params, idx)
        if k == n - 1:
            pay_up = terminal[h + 1 : h + 2 + idx]
            pay_down = terminal[: idx + 1]
        else:
            pay_up = vu[idx + 1][1:]
            pay_down = vd[idx + 1][:-1]
        xs[idx], ds[idx], vu[idx], vd[idx] = _block_arrays(roots, pay_up, pay_down, params, measure)
        if check:
            _assert_block_convexity(params, spec, idx, xs, ds, terminal)

    price = math.exp(-params.r * h) * max(vu[0][0], vd[0][0])
    return ValueSurface(params, vu, vd, xs, ds, float(price))


def dp_price(params: MarketParams, spec: PayoffSpec) -> float:
    """Price only, keeping two levels in memory."""
    require_valid(params)
    if not check_convexity(spec, params):
        raise NonConvexPayoff("payoff is not convex in the terminal price")
    measure = delay_measures(params)
    n, h = params.n_periods, params.delay
    terminal = terminal_payoffs(spec, params)
    pay_up = terminal[h + 1 :]
    pay_down = terminal[: n - h]
    disc = math.exp(-params.r)
    for _ in range(n - h):
        value_up = disc * (measure.p_u * pay_up + measure.q_u * pay_down)
        value_down = disc * (measure.p_d * pay_up + measure.q_d * pay_down)
        pay_up, pay_down = value_up[1:], value_down[:-1]
    return float(math.exp(-params.r * h) * max(value_up[0], value_down[0]))


def hedge_plan(surface: ValueSurface) -> dict:
    """Map root node (a, b) -> (x0_star, delta_star)."""
    plan = {}
    h = surface.params.delay
    for k in surface.levels():
        idx = k - h
        for a in range(idx + 1):
            plan[(a, idx - a)] = (float(surface.x0_star[idx][a]), float(surface.delta_star[idx][a]))
    return plan


def block_leaf_payoffs(surface: ValueSurface, spec: PayoffSpec, k: int, a: int) -> tuple:
    """Leaf prices and effective payoffs of the block whose hedge is set at level k.

    Interior leaves take the larger of the two child-block values reaching
    them; terminal blocks read the claim directly.
    """
    params = surface.params
    h = params.delay
    idx = k - h
    return _leaf_payoffs(params, spec, idx, a, surface.x0_star, surface.delta_star)


def _leaf_payoffs(params, spec, idx, a, xs, ds, terminal=None):
    h, n = params.delay, params.n_periods
    b = idx - a
    leaf_ups = a + np.arange(h + 2)
    leaf_downs = b + h + 1 - np.arange(h + 2)
    prices = np.asarray(node_price(params, leaf_ups, leaf_downs), dtype=float)
    if idx + h + 1 == n:
        if terminal is None:
            return prices, apply_payoff(spec, prices, leaf_ups)
        return prices, terminal[leaf_ups]
    growth = math.exp(params.r * h)
    child_up = growth * xs[idx + 1][a + 1] + ds[idx + 1][a + 1] * prices
    child_down = growth * xs[idx + 1][a] + ds[idx + 1][a] * prices
    values = np.where(
        np.arange(h + 2) == 0,
        child_down,
        np.where(np.arange(h + 2) == h + 1, child_up, np.maximum(child_up, child_down)),
    )
    return prices, values


def _assert_block_convexity(params, spec, idx, xs, ds, terminal):
    for a in range(idx + 1):
        prices, values = _leaf_payoffs(params, spec, idx, a, xs, ds, terminal)
        if not is_convex(prices, values, tol=1e-9 * max(1.0, float(np.max(np.abs(values))))):
            raise AssertionError(f"block payoff not convex at level {idx + params.delay}, a={a}")
