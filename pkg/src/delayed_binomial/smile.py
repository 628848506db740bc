"""Implied-volatility smiles of delayed-lattice super-replication prices."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .asymptotics import bs_price, build_scaling
from .direct import direct_prices
from .lattice import PayoffSpec, apply_payoff, terminal_prices

SMILE_COLUMNS = ("strike", "price_call", "price_put", "iv_call", "iv_put", "flag_call", "flag_put")
VOL_LOW = 1e-6
VOL_HIGH = 10.0
MAX_BISECTIONS = 200
PRICE_TOL = 1e-10

OK = "ok"
BELOW_INTRINSIC = "below_intrinsic"
ABOVE_BOUND = "above_bound"


@dataclass(frozen=True)
class ImpliedVol:
    vol: Optional[float]
    flag: str
    iterations: int = 0


def implied_vol(
    price: float, s0: float, strike: float, r_annual: float, horizon: float, kind: str = "call"
) -> ImpliedVol:
    """Bisection on [1e-6, 10]; flags prices outside the attainable band.

    Bisection runs until the bracket stops shrinking in floating point, so
    the price match is usually far tighter than 1e-10 * s0.
    """
    if price < 0 or not math.isfinite(price):
        raise ValueError("price must be finite and nonnegative")
    low_price = bs_price(s0, strike, r_annual, VOL_LOW, horizon, kind)
    high_price = bs_price(s0, strike, r_annual, VOL_HIGH, horizon, kind)
    tol = PRICE_TOL * s0
    if price < low_price - tol:
        return ImpliedVol(None, BELOW_INTRINSIC)
    if price > high_price + tol:
        return ImpliedVol(None, ABOVE_BOUND)
    lo, hi = VOL_LOW, VOL_HIGH
    it = 0
    for it in range(1, MAX_BISECTIONS + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if bs_price(s0, strike, r_annual, mid, horizon, kind) < price:
            lo = mid
        else:
            hi = mid
    vol = 0.5 * (lo + hi)
    if abs(bs_price(s0, strike, r_annual, vol, horizon, kind) - price) > tol:
        # price sits in a band edge where the pricing map is flat
        flag = BELOW_INTRINSIC if vol < 2 * VOL_LOW else ABOVE_BOUND
        return ImpliedVol(None, flag, it)
    return ImpliedVol(vol, OK, it)


@dataclass(frozen=True)
class SmileBase:
    s0: float = 40.0
    sigma: float = 0.1
    r_annual: float = 0.0
    horizon: float = 1.0
    h_periods: int = 1
    n: int = 100
    mu: float = 0.0

    @classmethod
    def from_dict(cls, data: dict) -> "SmileBase":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown smile fields: {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class SmilePoint:
    strike: float
    price_call: float
    price_put: float
    iv_call: Optional[float]
    iv_put: Optional[float]
    flag_call: str
    flag_put: str


def default_strikes(s0: float, count: int = 41) -> np.ndarray:
    return np.linspace(0.6 * s0, 1.4 * s0, count)


def smile_curve(base: SmileBase, strikes: Optional[Sequence[float]] = None) -> list:
    seq = build_scaling(base.n, base.mu, base.sigma, base.r_annual, base.h_periods, base.horizon)
    params = seq.market_params(base.s0)
    strikes = default_strikes(base.s0) if strikes is None else np.asarray(strikes, dtype=float)
    if np.any(strikes <= 0):
        raise ValueError("strikes must be positive")
    prices = terminal_prices(params)
    calls = np.array([apply_payoff(PayoffSpec.call(k), prices) for k in strikes])
    puts = np.array([apply_payoff(PayoffSpec.put(k), prices) for k in strikes])
    call_prices = direct_prices(params, calls)
    put_prices = direct_prices(params, puts)
    points = []
    for k, c, p in zip(strikes, call_prices, put_prices):
        ic = implied_vol(float(c), base.s0, float(k), base.r_annual, base.horizon, "call")
        ip = implied_vol(float(p), base.s0, float(k), base.r_annual, base.horizon, "put")
        points.append(SmilePoint(float(k), float(c), float(p), ic.vol, ip.vol, ic.flag, ip.flag))
    return points


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.12g}"


def smile_csv(points: list, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SMILE_COLUMNS)
    for pt in points:
        writer.writerow(
            [
                _fmt(pt.strike),
                _fmt(pt.price_call),
                _fmt(pt.price_put),
                _fmt(pt.iv_call),
                _fmt(pt.iv_put),
                pt.flag_call,
                pt.flag_put,
            ]
        )
    return buf.getvalue() if fh is None else ""
