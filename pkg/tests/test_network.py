import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ex, ma, make
from jumpldp.errors import BlowUpError, DomainError, ParseError, ValidationError
from jumpldp.network import (
    ScaledState,
    audit_aleph,
    audit_rate_convergence,
    drift,
    dump_model,
    fluid_limit,
    log_macro_rates,
    macro_rate,
    macro_rates,
    micro_rate,
    micro_rates,
    parse_model,
)


def step52():
    return make(["X1", "X2"], [ex({}, {"X2": 1}, "step(x[X1]-1)*(x[X1]-1)"), ma({}, {"X1": 1})])


# ---------------------------------------------------------------- parsing


def test_parse_birth_model(birth):
    assert birth.dim == 1
    assert birth.n_reactions == 1
    assert birth.reactions[0].gamma == (1,)
    assert macro_rate(birth, 0, [0.37]) == 0.37


def test_unknown_species_in_expression_reports_token_position():
    doc = {"species": ["A"], "reactions": [ex({"A": 1}, {}, "x[A] * x[Q]")]}
    with pytest.raises(ParseError) as info:
        parse_model(json.dumps(doc))
    assert "Q" in str(info.value)
    assert (info.value.line, info.value.column) == (1, 10)


def test_unknown_species_in_stoichiometry():
    with pytest.raises(ValidationError, match="unknown species"):
        make(["A"], [ma({"Q": 1}, {"A": 1})])


def test_negative_rate_constant_rejected():
    with pytest.raises(ValidationError, match="negative"):
        make(["A"], [ma({"A": 1}, {}, -1.0)])


def test_json_syntax_error_has_line_and_column():
    with pytest.raises(ParseError) as info:
        parse_model('{"species": ["A"],\n "reactions": [}')
    assert info.value.line == 2


def test_zero_jump_needs_placeholder_flag():
    with pytest.raises(ValidationError, match="placeholder"):
        make(["A"], [ma({"A": 1}, {"A": 1})])
    doc = {"species": ["A"], "reactions": [dict(ma({"A": 1}, {"A": 1}), placeholder=True), ma({"A": 1}, {"A": 2})]}
    net = parse_model(json.dumps(doc))
    assert net.reactions[0].placeholder


def test_expression_rate_exp_minus_two_over_x():
    net = make(["A"], [ex({"A": 1}, {"A": 2}, "exp(-2/x[A])")])
    assert macro_rate(net, 0, [0.5]) == pytest.approx(math.exp(-4.0), rel=1e-15)


# ---------------------------------------------------------------- rates


def test_macro_rate_dimer(dimer):
    assert macro_rate(dimer, 0, [0.3, 0.0]) == pytest.approx(0.09, rel=1e-15)


def test_macro_rate_zero_factor(dimer):
    assert macro_rate(dimer, 0, [0.0, 0.7]) == 0.0


def test_micro_rate_dimer(dimer):
    # k v^-2 C(3,2) 2! with v=10
    assert micro_rate(dimer, 0, ScaledState(10, (3, 0))) == pytest.approx(0.06, rel=1e-14)
    assert micro_rate(dimer, 0, ScaledState(10, (1, 0))) == 0.0


def test_micro_rate_birth(birth):
    assert micro_rate(birth, 0, ScaledState(10, (3,))) == pytest.approx(0.3, rel=1e-15)


def test_expression_micro_rate_equals_macro():
    net = make(["A"], [ex({"A": 1}, {"A": 2}, "exp(-1/x[A])")])
    s = ScaledState(7, (3,))
    assert micro_rate(net, 0, s) == macro_rate(net, 0, s.x)


def test_domain_error_is_signalled():
    net = make(["A"], [ex({"A": 1}, {}, "log(x[A] - 1)")])
    with pytest.raises(DomainError):
        macro_rate(net, 0, [0.5])


def test_step_is_right_continuous():
    net = make(["A"], [ex({}, {"A": 1}, "step(x[A] - 1)")])
    assert macro_rate(net, 0, [1.0]) == 1.0
    assert macro_rate(net, 0, [0.999]) == 0.0


def test_log_rates_survive_underflow():
    net = make(["A"], [ex({"A": 1}, {"A": 2}, "exp(-1/x[A])")])
    assert log_macro_rates(net, [1e-3])[0] == pytest.approx(-1000.0, rel=1e-12)
    assert macro_rates(net, [1e-3])[0] == 0.0


# ---------------------------------------------------------------- drift and fluid limit


def test_drift_examples(birth, iso):
    np.testing.assert_allclose(drift(birth, [0.5]), [0.5])
    np.testing.assert_allclose(drift(iso, [0.3, 0.3]), [0.0, 0.0], atol=0)
    np.testing.assert_allclose(drift(step52(), [0.5, 0.0]), [1.0, 0.0])


def test_fluid_limit_from_zero_stays_zero(birth):
    z = fluid_limit(birth, [0.0], 1.0, 100)
    assert np.all(z.points == 0.0)


def test_fluid_limit_exponential(birth):
    z = fluid_limit(birth, [1.0], 1.0, 1000)
    assert abs(z.points[-1, 0] - math.e) < 1e-6


def test_fluid_limit_isomerisation_equilibrium(iso):
    z = fluid_limit(iso, [1.0, 0.0], 20.0, 2000)
    np.testing.assert_allclose(z.points[-1], [0.5, 0.5], atol=1e-9)
    # closed form (1 + e^{-2t})/2 at t = 1
    z1 = fluid_limit(iso, [1.0, 0.0], 1.0, 1000)
    assert abs(z1.points[-1, 0] - 0.5 * (1 + math.exp(-2.0))) < 1e-10


def test_fluid_limit_blow_up_detected():
    net = make(["A"], [ma({"A": 2}, {"A": 3})])  # x' = x^2 explodes at t = 1
    with pytest.raises(BlowUpError):
        fluid_limit(net, [1.0], 2.0, 1000, bound=1e6)


# ---------------------------------------------------------------- audits


def test_convergence_audit_unary_is_zero(birth):
    rep = audit_rate_convergence(birth, [10, 100], np.linspace(0, 1, 11))
    assert rep.sups == (0.0, 0.0)


def test_convergence_audit_dimer_decreases(dimer):
    grid = [[x, 0.0] for x in np.linspace(0, 1, 11)]
    rep = audit_rate_convergence(dimer, [10, 100, 1000], grid)
    assert rep.monotone and rep.sups[0] > rep.sups[1] > rep.sups[2]
    # |x(x - 1/v) - x^2| = x/v, largest at x = 1
    np.testing.assert_allclose(rep.sups, [0.1, 0.01, 0.001], rtol=1e-12)


def test_convergence_audit_expression_is_zero():
    net = make(["A"], [ex({"A": 1}, {"A": 2}, "exp(-1/x[A])")])
    rep = audit_rate_convergence(net, [10, 100], np.linspace(0.1, 1, 10))
    assert rep.sups == (0.0, 0.0)


def test_convergence_audit_rejects_empty_grid(birth):
    with pytest.raises(ValidationError):
        audit_rate_convergence(birth, [10], [])


def test_aleph_examples(birth, dimer):
    assert audit_aleph(birth, 10, np.linspace(0.1, 1, 10)) == 1.0
    grid = [[x, 0.0] for x in (0.2, 0.4, 0.6, 0.8, 1.0)]
    assert audit_aleph(dimer, 10, grid) == pytest.approx(0.5, rel=1e-14)
    assert audit_aleph(dimer, 10, [[0.0, 0.5]]) == math.inf


# ---------------------------------------------------------------- properties


mass_action_nets = st.lists(
    st.tuples(
        st.lists(st.integers(0, 2), min_size=2, max_size=2),
        st.lists(st.integers(0, 2), min_size=2, max_size=2),
        st.floats(0.1, 3.0),
    ).filter(lambda t: t[0] != t[1]),
    min_size=1,
    max_size=3,
).map(
    lambda rs: make(
        ["A", "B"],
        [ma({s: n for s, n in zip("AB", i) if n}, {s: n for s, n in zip("AB", o) if n}, k) for i, o, k in rs],
    )
)


@given(mass_action_nets, st.integers(1, 50), st.lists(st.integers(0, 60), min_size=2, max_size=2))
def test_micro_rate_matches_binomial_formula(net, v, counts):
    s = ScaledState(v, tuple(counts))
    for r, rx in enumerate(net.reactions):
        want = rx.rate_law.k
        for n, g in zip(counts, rx.gamma_in):
            want *= math.comb(n, g) * math.factorial(g) / v**g
        got = micro_rate(net, r, s)
        assert got == pytest.approx(want, rel=1e-12, abs=0)
        assert (got == 0.0) == any(n < g for n, g in zip(counts, rx.gamma_in))


@given(mass_action_nets, st.lists(st.floats(0.0, 2.0), min_size=2, max_size=2))
def test_drift_in_span_and_nonnegative_rates(net, x):
    lam = macro_rates(net, x)
    assert np.all(lam >= 0)
    G = net.gamma_matrix.astype(float)
    d = drift(net, x)
    coef, *_ = np.linalg.lstsq(G, d, rcond=None)
    np.testing.assert_allclose(G @ coef, d, atol=1e-12 * (1 + np.abs(d).max()))


@given(st.lists(st.floats(0.0, 3.0), min_size=2, max_size=2))
def test_conserved_total_for_isomerisation(iso_x):
    net = make(["A", "B"], [ma({"A": 1}, {"B": 1}, 1.7), ma({"B": 1}, {"A": 1}, 0.4)])
    assert drift(net, iso_x).sum() == pytest.approx(0.0, abs=1e-15)


@given(mass_action_nets, st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_mass_action_lipschitz_on_unit_box(net, a, b):
    # on [0,1]^2, |d/dx_i k prod x^g| <= k * g_i, so L1-Lipschitz with constant k * max_i g_i
    for r, rx in enumerate(net.reactions):
        L = rx.rate_law.k * max(rx.gamma_in)
        diff = abs(macro_rate(net, r, a) - macro_rate(net, r, b))
        assert diff <= L * np.abs(np.subtract(a, b)).sum() + 1e-12


@given(mass_action_nets, st.sampled_from([10, 100, 1000]))
def test_rate_error_is_order_one_over_v(net, v):
    grid = [[x, y] for x in np.linspace(0, 1, 5) for y in np.linspace(0, 1, 5)]
    sup_v = audit_rate_convergence(net, [v, 10 * v], grid).sups
    if sup_v[0] > 1e-12:  # below that the two rates agree up to rounding
        assert sup_v[1] <= sup_v[0] / 5


def test_dump_parse_round_trip_is_bit_exact():
    net = make(
        ["A", "B"],
        [
            ex({"A": 1}, {"B": 1}, "x[A]*exp(-1/x[B]) + pow(x[A], 0.5)"),
            ex({}, {"A": 1}, "max(step(x[B]-0.5)*(x[B]-0.5), 0.1) / (1 + x[A]^2)"),
            ma({"A": 2}, {"B": 1}, 0.3),
        ],
    )
    back = parse_model(dump_model(net))
    rng = np.random.default_rng(3)
    for x in rng.uniform(0.01, 3.0, size=(100, 2)):
        assert np.array_equal(macro_rates(net, x), macro_rates(back, x))


def test_micro_rates_vector(dimer):
    np.testing.assert_array_equal(micro_rates(dimer, ScaledState(10, (3, 0))), [micro_rate(dimer, 0, ScaledState(10, (3, 0)))])
