import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_market, random_payoff
from delayed_binomial.direct import (
    DOWN,
    UP,
    ChainSpec,
    InvalidChain,
    direct_price,
    direct_prices,
    direct_values,
    distribution_csv,
    forward_distribution,
    lemma1_distribution,
    lemma1_piecewise,
    lemma2_distribution,
    lemma2_piecewise,
)
from delayed_binomial.dp import backward_induct, dp_price
from delayed_binomial.lattice import MarketParams, binomial_pmf, PayoffSpec, crr_price, terminal_payoffs

chains = st.builds(
    lambda pd, gap, n, h: ChainSpec(pd + gap * (1 - pd), pd, n, h),
    st.floats(0.01, 0.9),
    st.floats(0.05, 0.95),
    st.integers(1, 30),
    st.integers(1, 6),
)


def test_one_step_chain():
    chain = ChainSpec(0.7, 0.2, 1, 2)
    probs = forward_distribution(chain, UP).probs
    assert probs.tolist() == pytest.approx([0.3, 0, 0, 0.7])


def test_no_delay_is_binomial():
    chain = ChainSpec(0.35, 0.35, 9, 0)
    for state in (UP, DOWN):
        assert forward_distribution(chain, state).probs == pytest.approx(binomial_pmf(9, 0.35), abs=1e-15)


@given(chains)
@settings(max_examples=150, deadline=None)
def test_lemmas_match_forward(chain):
    up = forward_distribution(chain, UP).probs
    down = forward_distribution(chain, DOWN).probs
    assert np.abs(lemma1_distribution(chain).probs - up).max() <= 1e-10
    assert np.abs(lemma2_distribution(chain).probs - down).max() <= 1e-10
    assert up.sum() == pytest.approx(1, abs=1e-12)
    assert down.sum() == pytest.approx(1, abs=1e-12)


def test_lemma_extremes():
    chain = ChainSpec(0.8, 0.3, 7, 2)
    assert lemma1_distribution(chain).probs[-1] == pytest.approx(0.8**7, rel=1e-14)
    assert lemma2_distribution(chain).probs[0] == pytest.approx(0.7**7, rel=1e-14)


def test_piecewise_agrees_on_long_chains():
    for h in range(1, 5):
        chain = ChainSpec(0.75, 0.25, h + 3 + 4, h)
        assert lemma1_piecewise(chain) == pytest.approx(lemma1_distribution(chain).probs, abs=1e-13)
        assert lemma2_piecewise(chain) == pytest.approx(lemma2_distribution(chain).probs, abs=1e-13)


def test_piecewise_loses_mass_on_short_chains():
    # a first-match split assigns each i to one case; short chains need several
    chain = ChainSpec(0.75, 0.25, 3, 2)
    assert abs(lemma1_piecewise(chain).sum() - 1) > 1e-3


def test_chain_validation():
    with pytest.raises(InvalidChain):
        ChainSpec(0.2, 0.5, 3, 1).validate()
    with pytest.raises(InvalidChain):
        ChainSpec(0.6, 0.5, 0, 1).validate()
    with pytest.raises(InvalidChain):
        forward_distribution(ChainSpec(0.6, 0.5, 2, 1), 2)


def test_direct_values_worked(worked):
    vu, vd = direct_values(worked, PayoffSpec.call(4), 1)
    assert (vu, vd) == pytest.approx((5.6, 0.8), abs=1e-14)
    assert direct_price(worked, PayoffSpec.call(4)) == pytest.approx(5.6, abs=1e-14)


def test_direct_values_constant():
    params = MarketParams(10, 1.3, 0.8, 0.02, 6, 2)
    vu, vd = direct_values(params, PayoffSpec.from_table([5.0] * 7), 3)
    assert (vu, vd) == pytest.approx((5 * math.exp(-0.06), 5 * math.exp(-0.06)), rel=1e-14)


def test_direct_values_last_block():
    params = MarketParams(10, 1.3, 0.8, 0.02, 5, 2)
    spec = PayoffSpec.call(10)
    surface = backward_induct(params, spec)
    for a in range(0, 3):
        got = direct_values(params, spec, 4, a)
        blk = surface.block(4, a)
        assert got == pytest.approx((blk.value_up, blk.value_down), rel=1e-13)


def test_surface_matches_direct_everywhere(rng):
    for _ in range(10):
        params = random_market(rng, n_lo=3, n_hi=10)
        spec = random_payoff(rng, params)
        surface = backward_induct(params, spec)
        for k in surface.levels():
            for a in range(k - params.delay + 1):
                blk = surface.block(k, a)
                got = direct_values(params, spec, k, a)
                assert got == pytest.approx((blk.value_up, blk.value_down), rel=1e-10, abs=1e-10)


def test_methods_agree(rng):
    for _ in range(40):
        params = random_market(rng)
        spec = random_payoff(rng, params)
        fwd = direct_price(params, spec)
        assert direct_price(params, spec, method="lemma") == pytest.approx(fwd, abs=1e-10)
        assert dp_price(params, spec) == pytest.approx(fwd, abs=1e-10)


def test_no_delay_crr(rng):
    for _ in range(20):
        params = random_market(rng, delay=0)
        spec = random_payoff(rng, params)
        assert direct_price(params, spec) == pytest.approx(crr_price(params, spec), abs=1e-12, rel=1e-12)


def test_batch_prices(rng):
    params = random_market(rng, n_lo=8)
    specs = [PayoffSpec.call(k) for k in (0.5 * params.s0, params.s0, 1.5 * params.s0)]
    batch = direct_prices(params, np.array([terminal_payoffs(s, params) for s in specs]))
    assert batch == pytest.approx([direct_price(params, s) for s in specs], rel=1e-13)


def test_distribution_csv():
    chain = ChainSpec(0.7, 0.2, 1, 1)
    text = distribution_csv(forward_distribution(chain, UP), forward_distribution(chain, DOWN))
    assert text == "i,prob_up,prob_down\n0,0.3,0.8\n1,0,0\n2,0.7,0.2\n"
