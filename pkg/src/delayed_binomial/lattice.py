"""Binomial market with delayed execution: parameters, payoffs, pricing measures."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

LOG_SPACE_THRESHOLD = 1000
CONVEXITY_TOL = 1e-12
ROUNDING_SLACK = 8.0
EXACT_COMB_LIMIT = 60

PAYOFF_KINDS = ("call", "put", "table")


class InvalidParameters(ValueError):
    """Raised when market parameters fall outside the validity window."""


class PayoffError(ValueError):
    pass


@dataclass(frozen=True)
class MarketParams:
    s0: float
    u: float
    d: float
    r: float
    n_periods: int
    delay: int = 0

    @property
    def n(self) -> int:
        return self.n_periods

    @property
    def h(self) -> int:
        return self.delay

    def with_delay(self, delay: int) -> "MarketParams":
        return MarketParams(self.s0, self.u, self.d, self.r, self.n_periods, delay)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MarketParams":
        expected = {"s0", "u", "d", "r", "n_periods", "delay"}
        extra = set(data) - expected
        missing = {"s0", "u", "d", "r", "n_periods"} - set(data)
        if extra or missing:
            raise ValueError(f"bad market fields: missing={sorted(missing)} extra={sorted(extra)}")
        n_periods = data["n_periods"]
        delay = data.get("delay", 0)
        if int(n_periods) != n_periods or int(delay) != delay:
            raise ValueError("n_periods and delay must be integers")
        return cls(
            s0=float(data["s0"]),
            u=float(data["u"]),
            d=float(data["d"]),
            r=float(data["r"]),
            n_periods=int(n_periods),
            delay=int(delay),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class LatticeNode:
    ups: int
    downs: int

    @property
    def time(self) -> int:
        return self.ups + self.downs

    def price(self, params: MarketParams) -> float:
        return node_price(params, self.ups, self.downs)


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    strike: Optional[float] = None
    table: Optional[tuple] = field(default=None)

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise PayoffError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("call", "put") and self.strike is None:
            raise PayoffError(f"{self.kind} payoff needs a strike")
        if self.kind == "table":
            if self.table is None:
                raise PayoffError("table payoff needs a table")
            object.__setattr__(self, "table", tuple(float(v) for v in self.table))

    @classmethod
    def call(cls, strike: float) -> "PayoffSpec":
        return cls("call", strike=float(strike))

    @classmethod
    def put(cls, strike: float) -> "PayoffSpec":
        return cls("put", strike=float(strike))

    @classmethod
    def from_table(cls, values: Sequence[float]) -> "PayoffSpec":
        return cls("table", table=tuple(values))

    def to_dict(self) -> dict:
        if self.kind == "table":
            return {"kind": "table", "table": list(self.table)}
        return {"kind": self.kind, "strike": self.strike}

    @classmethod
    def from_dict(cls, data: dict) -> "PayoffSpec":
        extra = set(data) - {"kind", "strike", "table"}
        if extra:
            raise ValueError(f"bad payoff fields: {sorted(extra)}")
        if "kind" not in data:
            raise ValueError("payoff needs a kind")
        strike = data.get("strike")
        return cls(
            kind=data["kind"],
            strike=None if strike is None else float(strike),
            table=data.get("table"),
        )


@dataclass(frozen=True)
class DelayMeasure:
    """Pricing probabilities attached to the H+1 positions of S_H in a delay block.

    ``probs_up[j]`` is the up-extreme probability when the price sits j ups
    above the bottom of the block.
    """

    probs_up: tuple
    probs_down: tuple

    @property
    def p_u(self) -> float:
        return self.probs_up[-1]

    @property
    def p_d(self) -> float:
        return self.probs_up[0]

    @property
    def q_u(self) -> float:
        return self.probs_down[-1]

    @property
    def q_d(self) -> float:
        return self.probs_down[0]


def validate(params: MarketParams) -> list[str]:
    """Return every violated parameter invariant; empty when valid."""
    violations = []
    if not params.s0 > 0:
        violations.append("s0 must be positive")
    if not 0 < params.d:
        violations.append("d must be positive")
    if not params.d < params.u:
        violations.append("d must be below u")
    if params.n_periods < 1:
        violations.append("n_periods must be at least 1")
    if params.delay < 0:
        violations.append("delay must be nonnegative")
    if params.delay > params.n_periods - 1:
        violations.append("delay exceeds N-1")
    growth = math.exp(params.r)
    if not growth < params.u:
        violations.append("e^r >= u")
    if not params.d < growth:
        violations.append("e^r <= d")
    return violations


def require_valid(params: MarketParams) -> None:
    violations = validate(params)
    if violations:
        raise InvalidParameters("; ".join(violations))


def node_price(params: MarketParams, ups, downs):
    """S0 u^a d^b; log-space once the lattice is deep enough to overflow."""
    if params.n_periods > LOG_SPACE_THRESHOLD:
        log_price = (
            math.log(params.s0)
            + np.asarray(ups) * math.log(params.u)
            + np.asarray(downs) * math.log(params.d)
        )
        out = np.exp(log_price)
    else:
        out = params.s0 * np.power(params.u, ups, dtype=float) * np.power(params.d, downs, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def terminal_price(params: MarketParams, up_count: int) -> float:
    if not 0 <= up_count <= params.n_periods:
        raise IndexError(f"up_count {up_count} outside 0..{params.n_periods}")
    return node_price(params, up_count, params.n_periods - up_count)


def terminal_prices(params: MarketParams) -> np.ndarray:
    i = np.arange(params.n_periods + 1)
    return np.asarray(node_price(params, i, params.n_periods - i), dtype=float)


def delay_measures(params: MarketParams) -> DelayMeasure:
    require_valid(params)
    u, d, h = params.u, params.d, params.delay
    growth = math.exp(params.r)
    denom = u ** (h + 1) - d ** (h + 1)
    probs = tuple((u**j * d ** (h - j) * growth - d ** (h + 1)) / denom for j in range(h + 1))
    return DelayMeasure(probs_up=probs, probs_down=tuple(1.0 - p for p in probs))


def _check_table(spec: PayoffSpec, params: MarketParams) -> None:
    if spec.kind == "table" and len(spec.table) != params.n_periods + 1:
        raise PayoffError(
            f"table has {len(spec.table)} entries, lattice needs {params.n_periods + 1}"
        )


def apply_payoff(spec: PayoffSpec, prices, up_counts=None):
    """Vectorized payoff; tables are looked up by terminal up-count."""
    if spec.kind == "call":
        return np.maximum(np.asarray(prices, dtype=float) - spec.strike, 0.0)
    if spec.kind == "put":
        return np.maximum(spec.strike - np.asarray(prices, dtype=float), 0.0)
    if up_counts is None:
        raise PayoffError("table payoffs need up-counts")
    return np.asarray(spec.table, dtype=float)[np.asarray(up_counts)]


def eval_payoff(spec: PayoffSpec, params: MarketParams, up_count: int) -> float:
    _check_table(spec, params)
    price = terminal_price(params, up_count)
    return float(apply_payoff(spec, price, up_count))


def terminal_payoffs(spec: PayoffSpec, params: MarketParams) -> np.ndarray:
    _check_table(spec, params)
    i = np.arange(params.n_periods + 1)
    return apply_payoff(spec, terminal_prices(params), i)


def is_convex(prices: np.ndarray, values: np.ndarray, tol: float = CONVEXITY_TOL) -> bool:
    """Secant slopes nondecreasing, allowing slope drops down to ``-tol``.

    On top of ``tol`` each comparison gets the rounding error of its two
    divided differences, which grows like eps * |value| / (price gap).
    """
    prices = np.asarray(prices, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(prices) < 3:
        return True
    gaps = np.diff(prices)
    slopes = np.diff(values) / gaps
    mag = np.maximum(np.abs(values[:-1]), np.abs(values[1:]))
    noise = ROUNDING_SLACK * np.finfo(float).eps * (mag / gaps + np.abs(slopes))
    return bool(np.all(np.diff(slopes) >= -(tol + noise[:-1] + noise[1:])))


def check_convexity(spec: PayoffSpec, params: MarketParams) -> bool:
    try:
        values = terminal_payoffs(spec, params)
    except PayoffError:
        return False
    return is_convex(terminal_prices(params), values)


def crr_price(params: MarketParams, spec: PayoffSpec) -> float:
    """Classical Cox-Ross-Rubinstein price; the delay field is ignored."""
    base = params.with_delay(0)
    require_valid(base)
    n = base.n_periods
    p = (math.exp(base.r) - base.d) / (base.u - base.d)
    weights = binomial_pmf(n, p)
    values = terminal_payoffs(spec, base)
    return float(math.exp(-base.r * n) * np.dot(weights, values))


def binomial_pmf(n: int, p: float) -> np.ndarray:
    """Binomial(n, p) weights; exact coefficients up to n = 60, log-gamma beyond."""
    i = np.arange(n + 1)
    if n <= EXACT_COMB_LIMIT:
        coeffs = np.array([math.comb(n, k) for k in range(n + 1)], dtype=float)
        return coeffs * p**i * (1.0 - p) ** (n - i)
    log_w = gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
    log_w += i * math.log(p) + (n - i) * math.log1p(-p)
    return np.exp(log_w)
