import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import ma, make
from jumpldp.errors import ValidationError
from jumpldp.exactdist import (
    build_chain,
    event_probability,
    log_yule_tail,
    poisson_weights,
    transient_distribution,
    yule_tail,
)
from jumpldp.network import ScaledState
from jumpldp.paths import MacroPath
from jumpldp.simulator import tube_probability_mc


def dense_generator(chain):
    m = chain.n_live + 1
    Q = np.zeros((m, m))
    for i in range(chain.n_live):
        for k in range(chain.indptr[i], chain.indptr[i + 1]):
            Q[i, chain.indices[k]] += chain.rates[k]
    Q -= np.diag(Q.sum(axis=1))
    return Q


def test_birth_chain_rates(birth):
    c = build_chain(birth, 10, ScaledState(10, (1,)), 100)
    assert c.n_live == 100 and c.truncated
    np.testing.assert_array_equal(c.states[:, 0], np.arange(1, 101))
    # from n particles the total rate is v * (n / v) = n
    np.testing.assert_allclose(c.outflow()[:-1], np.arange(1, 101))
    assert c.q == 100.0


def test_frozen_chain():
    net = make(["A"], [ma({"A": 1}, {}, 0.0)])
    c = build_chain(net, 5, [1.0])
    assert c.n_live == 1 and len(c.rates) == 0 and not c.truncated


def test_isomerisation_chain_has_three_states(iso):
    c = build_chain(iso, 2, [1.0, 0.0])
    assert c.n_live == 3
    assert set(map(tuple, c.states)) == {(2, 0), (1, 1), (0, 2)}


def test_time_zero_is_point_mass(iso):
    d = transient_distribution(build_chain(iso, 4, [1.0, 0.0]), 0.0)
    assert d.probs[0] == 1.0 and d.probs[1:].sum() == 0.0


def test_yule_geometric_law(birth):
    c = build_chain(birth, 1, [1.0], 400)
    d = transient_distribution(c, 1.0, 1e-14)
    n = c.states[:, 0]
    want = math.exp(-1.0) * (1 - math.exp(-1.0)) ** (n - 1)
    np.testing.assert_allclose(d.probs[:60], want[:60], rtol=1e-10, atol=1e-14)


def test_two_state_closed_form(iso):
    c = build_chain(iso, 1, [1.0, 0.0])
    for t in (0.1, 0.7, 2.5):
        d = transient_distribution(c, t)
        assert d.probs[0] == pytest.approx(0.5 * (1 + math.exp(-2 * t)), abs=1e-12)


@pytest.mark.parametrize("t", [0.3, 1.0, 2.0])
def test_matches_matrix_exponential(t):
    net = make(["A", "B"], [ma({"A": 2}, {"B": 1}, 0.7), ma({"B": 1}, {"A": 2}, 0.2), ma({}, {"A": 1}, 0.5)])
    c = build_chain(net, 4, [0.5, 0.0], 60)
    d = transient_distribution(c, t, 1e-14)
    P = expm(dense_generator(c) * t)[0]
    np.testing.assert_allclose(d.probs, P[:-1], atol=1e-12)
    assert d.sink == pytest.approx(P[-1], abs=1e-12)


def test_birth_threshold_probability_large_v(birth):
    v = 200
    c = build_chain(birth, v, ScaledState(v, (1,)), 20 * v)
    p = event_probability(c, 1.0, lambda x: x[0] >= 0.5 - 1e-12, tol=1e-100)
    want = (1 - math.exp(-1.0)) ** 99
    assert p == pytest.approx(want, rel=1e-9)
    assert p == pytest.approx(yule_tail(1.0, 100), rel=1e-9)


def test_event_always_true_is_one(iso):
    c = build_chain(iso, 10, [1.0, 0.0])
    assert event_probability(c, 1.3, lambda x: True) == pytest.approx(1.0, abs=1e-12)


def test_bracket_with_sink(birth):
    c = build_chain(birth, 5, ScaledState(5, (1,)), 10)
    ev = event_probability(c, 1.0, lambda x: x[0] > 100, bracket=True)
    assert ev.value == 0.0
    assert ev.upper > 0.0


@pytest.mark.parametrize("v", [20, 50])
def test_bracket_contains_yule_tail(birth, v):
    delta = 0.5
    k = math.ceil(v * delta)
    c = build_chain(birth, v, ScaledState(v, (1,)), int(20 * v * delta))
    tol = 1e-13
    ev = event_probability(c, 1.0, lambda x: x[0] >= delta - 1e-12, tol=tol, bracket=True)
    y = yule_tail(1.0, k)
    assert ev.lower - 10 * tol <= y <= ev.upper + 10 * tol
    assert ev.upper - ev.lower < 10 * tol


def test_probability_conservation(iso, birth):
    for c in (build_chain(iso, 30, [1.0, 0.0]), build_chain(birth, 10, ScaledState(10, (1,)), 30)):
        for t in (0.2, 1.0, 3.0):
            d = transient_distribution(c, t, 1e-12)
            assert d.total() == pytest.approx(1.0, abs=1e-11)


def test_threshold_monotone_in_time(birth):
    c = build_chain(birth, 20, ScaledState(20, (1,)), 400)
    ps = [event_probability(c, t, lambda x: x[0] >= 0.5) for t in np.linspace(0.1, 2.0, 20)]
    assert all(b >= a for a, b in zip(ps, ps[1:]))


def test_distribution_csv(iso):
    text = transient_distribution(build_chain(iso, 2, [1.0, 0.0]), 1.0).to_csv()
    assert text.splitlines()[0] == "state_index,x_1,x_2,prob"
    assert len(text.splitlines()) == 4


def test_rejects_bad_arguments(iso):
    c = build_chain(iso, 2, [1.0, 0.0])
    with pytest.raises(ValidationError):
        transient_distribution(c, -1.0)
    with pytest.raises(ValidationError):
        transient_distribution(c, 1.0, 0.0)
    with pytest.raises(ValidationError):
        build_chain(iso, 2, [1.0, 0.0], 0)


def test_yule_tail_values():
    assert yule_tail(1.0, 1) == 1.0
    assert yule_tail(1.0, 100) == pytest.approx(0.6321205588285577**99, rel=1e-13)
    assert yule_tail(math.inf, 7) == 1.0
    assert yule_tail(60.0, 5) == pytest.approx(1.0, abs=1e-20)
    assert log_yule_tail(1.0, 10**6) == pytest.approx((10**6 - 1) * math.log(1 - math.exp(-1)), rel=1e-14)
    with pytest.raises(ValidationError):
        yule_tail(1.0, 0)


@given(st.floats(0.0, 5e4))
def test_poisson_weights_mass(mean):
    w = poisson_weights(mean, 1e-12)
    assert abs(w.sum() - 1.0) < 1e-9


def test_mc_wilson_coverage_of_exact_values(birth):
    # staying below delta on [0, t] is the complement of X(t) > delta for a
    # nondecreasing path; count how often the 95% interval covers the exact value
    rng = np.random.default_rng(2024)
    covered = 0
    for case in range(100):
        v = int(rng.integers(5, 25))
        t = float(rng.uniform(0.2, 1.5))
        delta = float(rng.uniform(0.05, 0.5))
        c = build_chain(birth, v, ScaledState(v, (1,)), 40 * v)
        exact = event_probability(c, t, lambda x: x[0] <= delta + 1e-12)
        est = tube_probability_mc(birth, v, ScaledState(v, (1,)), MacroPath.constant([0.0], t), delta, 400, case)
        covered += est.wilson[0] <= exact <= est.wilson[1]
    assert covered >= 93
