"""Small-step scaling of the delayed lattice and its Black-Scholes limit.

With ``delta_n = 1/sqrt(n)`` the per-step parameters are

    mu_n = mu T delta_n^2,  sigma_n = sigma sqrt(T) delta_n,  r_n = r T delta_n^2,
    u_n = exp(mu_n + sigma_n),  d_n = exp(mu_n - sigma_n).

The delay H stays fixed in steps, so the delay in years shrinks like 1/n.
Under the pricing measures the moves form a correlated two-state chain and
the log-price converges to Brownian motion with volatility sqrt(2H+1) sigma.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .direct import ChainSpec, terminal_log_variance
from .lattice import MarketParams, PayoffSpec

CONVERGENCE_COLUMNS = (
    "n",
    "delta_n",
    "p_nu",
    "p_nd",
    "res_pu",
    "res_pd",
    "lambda_n",
    "price_model",
    "price_bs_enlarged",
    "gap",
)
DEFAULT_N_GRID = (100, 400, 1600, 6400)
SIM_BLOCK = 8192
SIM_STEP_CHUNK = 256
THREADS_ENV = "DELAYED_BINOMIAL_THREADS"


class ScalingError(ValueError):
    """Raised when the scaled lattice leaves the validity window."""

    def __init__(self, message: str, minimal_n: Optional[int] = None):
        super().__init__(message)
        self.minimal_n = minimal_n


def minimal_valid_n(mu: float, sigma: float, r_annual: float, h_periods: int, horizon: float) -> int:
    """Smallest n with d_n < e^{r_n} < u_n and room for one delay block.

    The window condition reduces to n > (r - mu)^2 T / sigma^2.
    """
    bound = (r_annual - mu) ** 2 * horizon / sigma**2
    n = max(int(math.floor(bound)), 1)
    # the bound is exact in reals; step past rounding at the boundary
    while not _in_window(n, mu, sigma, r_annual, horizon):
        n += 1
    return max(n, h_periods + 2)


def _in_window(n: int, mu: float, sigma: float, r_annual: float, horizon: float) -> bool:
    mu_n = mu * horizon / n
    sigma_n = sigma * math.sqrt(horizon) * (1.0 / math.sqrt(n))
    r_n = r_annual * horizon / n
    return mu_n - sigma_n < r_n < mu_n + sigma_n


@dataclass(frozen=True)
class ScalingSequence:
    n: int
    mu: float
    sigma: float
    r_annual: float
    h_periods: int
    horizon: float

    @property
    def delta_n(self) -> float:
        return 1.0 / math.sqrt(self.n)

    @property
    def mu_n(self) -> float:
        return self.mu * self.horizon / self.n

    @property
    def sigma_n(self) -> float:
        return self.sigma * math.sqrt(self.horizon) * self.delta_n

    @property
    def u_n(self) -> float:
        return math.exp(self.mu_n + self.sigma_n)

    @property
    def d_n(self) -> float:
        return math.exp(self.mu_n - self.sigma_n)

    @property
    def r_n(self) -> float:
        return self.r_annual * self.horizon / self.n

    @property
    def h_time(self) -> float:
        return self.h_periods * self.horizon / self.n

    def _prob(self, j: int) -> float:
        # evaluated in log form so that large n keeps full precision
        h = self.h_periods
        a, b, rn = self.mu_n + self.sigma_n, self.mu_n - self.sigma_n, self.r_n
        top = (h + 1) * b
        num = math.expm1(j * a + (h - j) * b + rn - top)
        den = math.expm1((h + 1) * (a - b))
        return num / den

    @property
    def p_nu(self) -> float:
        return self._prob(self.h_periods)

    @property
    def p_nd(self) -> float:
        return self._prob(0)

    @property
    def lambda_n(self) -> float:
        return self.p_nu - self.p_nd

    @property
    def first_order(self) -> float:
        """Coefficient c in p = leading - c sqrt(T) delta_n + O(delta_n^2)."""
        h = self.h_periods
        return (self.mu - self.r_annual) / (2 * (h + 1) * self.sigma) + (2 * h + 1) * self.sigma / (
            4 * (h + 1)
        )

    @property
    def phi(self) -> float:
        return -2.0 * self.first_order * math.sqrt(self.horizon)

    @property
    def sigma_enlarged(self) -> float:
        return math.sqrt(2 * self.h_periods + 1) * self.sigma

    def market_params(self, s0: float) -> MarketParams:
        return MarketParams(s0, self.u_n, self.d_n, self.r_n, self.n, self.h_periods)

    def chain(self) -> ChainSpec:
        return ChainSpec(self.p_nu, self.p_nd, self.n - self.h_periods, self.h_periods)


def build_scaling(
    n: int, mu: float, sigma: float, r_annual: float, h_periods: int, horizon: float
) -> ScalingSequence:
    if int(n) != n or n < 1:
        raise ScalingError("n must be a positive integer")
    if int(h_periods) != h_periods or h_periods < 0:
        raise ScalingError("h_periods must be a nonnegative integer")
    if not sigma > 0:
        raise ScalingError("sigma must be positive")
    if not horizon > 0:
        raise ScalingError("horizon must be positive")
    n, h_periods = int(n), int(h_periods)
    n_min = minimal_valid_n(mu, sigma, r_annual, h_periods, horizon)
    if n < h_periods + 2:
        raise ScalingError(f"n={n} leaves no ordinary move before the delay block; need n >= {h_periods + 2}", n_min)
    seq = ScalingSequence(n, float(mu), float(sigma), float(r_annual), h_periods, float(horizon))
    if not _in_window(n, seq.mu, seq.sigma, seq.r_annual, seq.horizon):
        raise ScalingError(f"validity window fails at n={n}; minimal valid n is {n_min}", n_min)
    return seq


def expansion_check(seq: ScalingSequence) -> dict:
    h = seq.h_periods
    step = seq.first_order * math.sqrt(seq.horizon) * seq.delta_n
    lead_u = (2 * h + 1) / (2 * (h + 1))
    lead_d = 1 / (2 * (h + 1))
    return {"res_pu": seq.p_nu - (lead_u - step), "res_pd": seq.p_nd - (lead_d - step)}


def norm_cdf(x: float) -> float:
    # erfc form keeps relative accuracy in the far left tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bs_price(
    s0: float, strike: float, r_annual: float, sigma_annual: float, horizon: float, kind: str = "call"
) -> float:
    """European Black-Scholes value; sigma = 0 or T = 0 give discounted intrinsic."""
    if kind not in ("call", "put"):
        raise ValueError(f"unknown option kind {kind!r}")
    if not (s0 > 0 and strike > 0):
        raise ValueError("s0 and strike must be positive")
    if sigma_annual < 0 or horizon < 0:
        raise ValueError("sigma and horizon must be nonnegative")
    disc_strike = strike * math.exp(-r_annual * horizon)
    if sigma_annual == 0 or horizon == 0:
        if kind == "call":
            return max(s0 - disc_strike, 0.0)
        return max(disc_strike - s0, 0.0)
    vol = sigma_annual * math.sqrt(horizon)
    d1 = (math.log(s0 / disc_strike) + 0.5 * vol * vol) / vol
    d2 = d1 - vol
    if kind == "call":
        return s0 * norm_cdf(d1) - disc_strike * norm_cdf(d2)
    return disc_strike * norm_cdf(-d2) - s0 * norm_cdf(-d1)


def thread_count() -> int:
    """Worker cap from DELAYED_BINOMIAL_THREADS; 0 or unset means one per CPU."""
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if value < 0:
        raise ValueError(f"{THREADS_ENV} must be nonnegative")
    return value or (os.cpu_count() or 1)


def _simulate_block(seq: ScalingSequence, count: int, seed: int, block: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))
    h = seq.h_periods
    ordinary = seq.n - h - 1
    state = rng.random(count) < 0.5
    ups = np.zeros(count, dtype=np.int64)
    done = 0
    while done < ordinary:
        chunk = min(SIM_STEP_CHUNK, ordinary - done)
        draws = rng.random((chunk, count))
        for row in draws:
            state = row < np.where(state, seq.p_nu, seq.p_nd)
            ups += state
        done += chunk
    last = rng.random(count) < np.where(state, seq.p_nu, seq.p_nd)
    ups += last * (h + 1)
    return seq.n * seq.mu_n + seq.sigma_n * (2 * ups - seq.n)


def simulate_chain(seq: ScalingSequence, paths: int, seed: int, threads: Optional[int] = None) -> np.ndarray:
    """Samples of log(S_n/S_0) under the pricing chain, initial state uniform.

    Paths are cut into fixed blocks with their own Philox streams keyed by
    (seed, block index), so the output does not depend on the thread count.
    """
    if paths < 1:
        raise ValueError("paths must be positive")
    if seq.sigma_n == 0:
        # no moves to speak of; the chain probabilities are 0/0 here
        return np.full(paths, seq.n * seq.mu_n)
    counts = [min(SIM_BLOCK, paths - start) for start in range(0, paths, SIM_BLOCK)]
    workers = min(threads or thread_count(), len(counts))
    if workers <= 1:
        parts = [_simulate_block(seq, c, seed, b) for b, c in enumerate(counts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda bc: _simulate_block(seq, bc[1], seed, bc[0]), enumerate(counts)))
    return np.concatenate(parts)


def chain_log_variance(seq: ScalingSequence) -> float:
    """Exact variance of log(S_n/S_0) from the forward distribution."""
    return terminal_log_variance(seq.chain(), seq.mu_n + seq.sigma_n, seq.mu_n - seq.sigma_n)


def model_price(seq: ScalingSequence, s0: float, spec: PayoffSpec) -> float:
    from .dp import dp_price

    return dp_price(seq.market_params(s0), spec)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    delta_n: float
    p_nu: float
    p_nd: float
    res_pu: float
    res_pd: float
    lambda_n: float
    price_model: float
    price_bs_enlarged: float
    gap: float
    valid: bool = True

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in CONVERGENCE_COLUMNS)


def convergence_sweep(
    n_grid: Iterable[int],
    mu: float,
    sigma: float,
    r_annual: float,
    h_periods: int,
    horizon: float,
    s0: float,
    strike: Optional[float] = None,
    kind: str = "call",
    with_prices: bool = True,
) -> list:
    """One row per n; n outside the validity window gives a NaN row marked invalid."""
    strike = s0 if strike is None else strike
    spec = PayoffSpec(kind, strike=strike)
    rows = []
    for n in n_grid:
        try:
            seq = build_scaling(n, mu, sigma, r_annual, h_periods, horizon)
        except ScalingError:
            nan = float("nan")
            rows.append(ConvergenceRow(int(n), 1 / math.sqrt(n) if n > 0 else nan, *([nan] * 8), valid=False))
            continue
        res = expansion_check(seq)
        bs = bs_price(s0, strike, r_annual, seq.sigma_enlarged, horizon, kind)
        price = model_price(seq, s0, spec) if with_prices else float("nan")
        rows.append(
            ConvergenceRow(
                seq.n,
                seq.delta_n,
                seq.p_nu,
                seq.p_nd,
                res["res_pu"],
                res["res_pd"],
                seq.lambda_n,
                price,
                bs,
                price - bs,
            )
        )
    return rows


def convergence_csv(rows: list, fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONVERGENCE_COLUMNS)
    for row in rows:
        vals = row.values()
        writer.writerow([vals[0], *(f"{v:.12g}" for v in vals[1:])])
    return buf.getvalue() if fh is None else ""
