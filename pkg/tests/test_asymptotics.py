import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delayed_binomial import asymptotics
from delayed_binomial.asymptotics import (
    CONVERGENCE_COLUMNS,
    ScalingError,
    ScalingSequence,
    bs_price,
    build_scaling,
    chain_log_variance,
    convergence_csv,
    convergence_sweep,
    expansion_check,
    minimal_valid_n,
    norm_cdf,
    simulate_chain,
    thread_count,
)
from delayed_binomial.direct import DOWN, UP, forward_distribution
from delayed_binomial.lattice import delay_measures


def test_scaling_substitution():
    seq = build_scaling(100, 0, 0.1, 0, 1, 1)
    assert seq.delta_n == 0.1
    assert seq.sigma_n == pytest.approx(0.01, rel=1e-15)
    assert seq.u_n == pytest.approx(math.exp(0.01), rel=1e-15)
    assert seq.d_n == pytest.approx(math.exp(-0.01), rel=1e-15)
    assert seq.h_time == pytest.approx(0.01)


def test_probabilities_match_lattice():
    seq = build_scaling(400, 0.05, 0.2, 0.01, 2, 1)
    m = delay_measures(seq.market_params(40))
    assert seq.p_nu == pytest.approx(m.p_u, rel=1e-9)
    assert seq.p_nd == pytest.approx(m.p_d, rel=1e-9)


def test_lambda_limit():
    lambdas = [build_scaling(n, 0, 0.1, 0, 1, 1).lambda_n for n in (100, 1000, 10000)]
    gaps = [abs(x - 0.5) for x in lambdas]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[-1] < 1e-5


def test_leading_terms():
    seq = build_scaling(10**6, 0, 0.1, 0, 1, 1)
    assert seq.p_nu == pytest.approx(0.75, abs=1e-3)
    assert seq.p_nd == pytest.approx(0.25, abs=1e-3)


def test_first_order_without_drift():
    seq = build_scaling(100, 0.03, 0.2, 0.03, 2, 4)
    assert seq.first_order == pytest.approx(5 * 0.2 / 12)


@pytest.mark.parametrize("params", [(0, 0.1, 0, 1, 1), (0.05, 0.2, 0.01, 2, 1)])
def test_residual_rate(params):
    res = [expansion_check(build_scaling(n, *params)) for n in (100, 400, 1600, 6400)]
    for key in ("res_pu", "res_pd"):
        for a, b in zip(res, res[1:]):
            assert 2.5 <= abs(a[key]) / abs(b[key]) <= 6


def test_minimal_valid_n():
    assert minimal_valid_n(0, 0.1, 0, 1, 1) == 3
    n = minimal_valid_n(0.3, 0.1, 0, 1, 1)
    assert n == 10
    build_scaling(n, 0.3, 0.1, 0, 1, 1)
    with pytest.raises(ScalingError) as info:
        build_scaling(n - 1, 0.3, 0.1, 0, 1, 1)
    assert info.value.minimal_n == n


@pytest.mark.parametrize("bad", [dict(n=0), dict(sigma=0.0), dict(horizon=0.0), dict(h_periods=-1), dict(n=2)])
def test_build_rejects(bad):
    args = dict(n=100, mu=0, sigma=0.1, r_annual=0, h_periods=1, horizon=1) | bad
    with pytest.raises(ScalingError):
        build_scaling(**args)


def test_bs_reference_value():
    # s0 (2 N(sigma/2) - 1) at s0 = K = 40, sigma = 0.1732051
    assert bs_price(40, 40, 0, 0.1732051, 1) == pytest.approx(2.7605024435, abs=1e-9)
    assert 40 * (2 * norm_cdf(0.1732051 / 2) - 1) == pytest.approx(2.7605024435, abs=1e-9)


def test_bs_degenerate():
    assert bs_price(40, 30, 0.05, 0.0, 1) == pytest.approx(40 - 30 * math.exp(-0.05))
    assert bs_price(40, 50, 0.05, 0.0, 1) == 0
    assert bs_price(40, 50, 0.05, 0.2, 0.0, "put") == 10


@given(
    s0=st.floats(1, 200), k=st.floats(1, 200), r=st.floats(-0.05, 0.2), vol=st.floats(0.01, 2), t=st.floats(0.01, 5)
)
def test_put_call_parity(s0, k, r, vol, t):
    diff = bs_price(s0, k, r, vol, t) - bs_price(s0, k, r, vol, t, "put")
    assert diff == pytest.approx(s0 - k * math.exp(-r * t), abs=1e-12 * max(s0, k))


def test_norm_cdf_tail():
    assert norm_cdf(-30) == pytest.approx(4.906713927148187e-198, rel=1e-12)


def test_thread_count(monkeypatch):
    monkeypatch.setenv("DELAYED_BINOMIAL_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("DELAYED_BINOMIAL_THREADS", "0")
    assert thread_count() >= 1
    monkeypatch.setenv("DELAYED_BINOMIAL_THREADS", "x")
    with pytest.raises(ValueError):
        thread_count()


def test_simulation_deterministic_across_threads():
    seq = build_scaling(300, 0, 0.1, 0, 2, 1)
    one = simulate_chain(seq, 20000, seed=5, threads=1)
    many = simulate_chain(seq, 20000, seed=5, threads=4)
    assert np.array_equal(one, many)
    assert not np.array_equal(one, simulate_chain(seq, 20000, seed=6, threads=1))


def test_simulation_degenerate_sigma():
    seq = ScalingSequence(50, 0.1, 0.0, 0.0, 1, 1.0)
    assert np.all(simulate_chain(seq, 10, seed=1) == pytest.approx(50 * seq.mu_n))


def _exact_mean(seq):
    chain = seq.chain()
    mix = 0.5 * (forward_distribution(chain, UP).probs + forward_distribution(chain, DOWN).probs)
    i = np.arange(len(mix))
    return float(mix @ (i * math.log(seq.u_n) + (len(mix) - 1 - i) * math.log(seq.d_n)))


def test_simulation_mean_and_variance():
    seq = build_scaling(400, 0, 0.1, 0, 1, 1)
    samples = simulate_chain(seq, 50000, seed=11)
    var = chain_log_variance(seq)
    se_var = var * math.sqrt(2 / (len(samples) - 1))
    assert abs(samples.var(ddof=1) - var) < 4 * se_var
    se_mean = samples.std(ddof=1) / math.sqrt(len(samples))
    assert abs(samples.mean() - _exact_mean(seq)) < 4 * se_mean


def test_mean_follows_stationary_drift():
    # stationary law of the two-state chain gives the per-step drift
    seq = build_scaling(6400, 0, 0.1, 0, 1, 1)
    chain = seq.chain()
    pi_up = chain.p_d / (1 - chain.p_u + chain.p_d)
    assert _exact_mean(seq) == pytest.approx(seq.n * seq.sigma_n * (2 * pi_up - 1), rel=1e-3)


def test_variance_tends_to_enlarged():
    seq = build_scaling(6400, 0, 0.1, 0, 1, 1)
    assert chain_log_variance(seq) == pytest.approx(3 * 0.01, rel=0.02)


def test_sweep_marks_invalid_rows():
    rows = convergence_sweep([5, 100], 0.3, 0.1, 0, 1, 1, 40, with_prices=False)
    assert not rows[0].valid and math.isnan(rows[0].p_nu)
    assert rows[1].valid
    text = convergence_csv(rows)
    assert text.splitlines()[0] == ",".join(CONVERGENCE_COLUMNS)
    assert text.splitlines()[1].startswith("5,0.4472135955,nan")


def test_sweep_no_delay_gap_small():
    rows = convergence_sweep([100, 400], 0, 0.1, 0, 0, 1, 40)
    for row in rows:
        assert abs(row.gap) <= 0.005 * 40


def test_gap_shrinks_with_delay():
    rows = convergence_sweep([100, 400, 1600], 0, 0.1, 0, 1, 1, 40)
    gaps = [r.gap for r in rows]
    assert gaps[0] > gaps[1] > gaps[2] > 0
