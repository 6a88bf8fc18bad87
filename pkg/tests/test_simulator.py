import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import ma, make
from jumpldp.errors import JumpCapExceeded, ValidationError
from jumpldp.exactdist import yule_tail
from jumpldp.network import ScaledState, fluid_limit
from jumpldp.paths import MacroPath
from jumpldp.simulator import (
    fluid_gap,
    mix_seed,
    reachable_set,
    simulate_with_flux,
    ssa_simulate,
    sup_distance,
    tube_probability_mc,
    wilson_interval,
)


def two_species_b_autocatalysis():
    # B <-> 2B, A <-> 2A + B
    return make(
        ["A", "B"],
        [
            ma({"B": 1}, {"B": 2}),
            ma({"B": 2}, {"B": 1}),
            ma({"A": 1}, {"A": 2, "B": 1}),
            ma({"A": 2, "B": 1}, {"A": 1}),
        ],
    )


def test_birth_from_zero_never_moves(birth):
    for seed in range(5):
        p = ssa_simulate(birth, 10, ScaledState(10, (0,)), 1.0, seed)
        assert p.n_jumps == 0


def test_birth_path_is_nondecreasing_on_lattice(birth):
    p = ssa_simulate(birth, 10, ScaledState(10, (1,)), 1.0, 4)
    counts = p.count_states()[:, 0]
    assert np.all(np.diff(counts) == 1)
    assert counts[0] == 1
    assert np.all(np.diff(p.jump_times) > 0)
    assert p.n_jumps == 0 or (p.jump_times[0] > 0 and p.jump_times[-1] <= 1.0)


def test_isomerisation_mean_endpoint_near_equilibrium(iso):
    ends = np.array([ssa_simulate(iso, 100, [1.0, 0.0], 5.0, s)(5.0) for s in range(50)])
    assert np.all(np.abs(ends.mean(axis=0) - 0.5) < 0.1)


def test_determinism(iso):
    a = ssa_simulate(iso, 100, [1.0, 0.0], 5.0, 7)
    b = ssa_simulate(iso, 100, [1.0, 0.0], 5.0, 7)
    assert a.to_csv() == b.to_csv()
    c = ssa_simulate(iso, 100, [1.0, 0.0], 5.0, 8)
    assert a.to_csv() != c.to_csv()


def test_trajectory_csv_layout(iso):
    text = ssa_simulate(iso, 10, [1.0, 0.0], 0.5, 1).to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,reaction,x_1,x_2"
    assert lines[1].startswith("0,-1,")
    assert lines[-1].startswith("0.5,-1,")


def test_flux_identity_and_counts(iso, birth):
    f = simulate_with_flux(iso, 50, [1.0, 0.0], 3.0, 2)
    assert f.identity_residual() == 0
    W = f.path.reaction_counts()
    assert np.all(np.diff(W, axis=0) >= 0)
    t = np.linspace(0, 3, 31)
    G = iso.gamma_matrix.astype(float)
    for ti in t:
        np.testing.assert_allclose(f.X(ti), np.array([1.0, 0.0]) + G @ f.W(ti), atol=1e-12)
    g = simulate_with_flux(birth, 10, ScaledState(10, (1,)), 10.0, 0)
    assert g.path.n_jumps >= 3
    # W after the third jump is 3/v
    assert g.W(g.path.jump_times[2])[0] == pytest.approx(0.3)


def test_flux_csv_appends_counters(iso):
    text = simulate_with_flux(iso, 10, [1.0, 0.0], 0.5, 1).to_csv()
    assert text.splitlines()[0] == "t,reaction,x_1,x_2,w_1,w_2"


def test_jump_cap(birth):
    with pytest.raises(JumpCapExceeded):
        ssa_simulate(birth, 100, ScaledState(100, (100,)), 5.0, 0, max_jumps=1000)


def test_rejects_bad_inputs(birth):
    with pytest.raises(ValidationError):
        ssa_simulate(birth, 0, [0.0], 1.0, 0)
    with pytest.raises(ValidationError):
        ssa_simulate(birth, 10, [0.05], 1.0, 0)  # off the lattice


def test_poisson_jump_counts():
    net = make(["A"], [ma({}, {"A": 1}, 1.0)])
    v, runs = 10, 10_000
    n = np.array([ssa_simulate(net, v, [0.0], 1.0, s).n_jumps for s in range(runs)])
    edges = np.arange(0, 25)
    obs = np.array([np.sum(n == k) for k in edges[:-1]] + [np.sum(n >= edges[-1])])
    pmf = stats.poisson.pmf(edges[:-1], v * 1.0)
    exp = np.append(pmf, 1 - pmf.sum()) * runs
    assert stats.chisquare(obs, exp).pvalue > 1e-3


# ---------------------------------------------------------------- reachable set


def test_reachable_set_stays_on_b_axis():
    net = two_species_b_autocatalysis()
    rs = reachable_set(net, 20, [0.0, 1 / 20], state_cap=500)
    assert np.all(rs.states[:, 0] == 0.0)
    assert len(rs) > 1


def test_reachable_set_truncates(birth):
    rs = reachable_set(birth, 10, [0.1], state_cap=50)
    assert rs.truncated and len(rs) == 50
    np.testing.assert_allclose(rs.states[:, 0], np.arange(1, 51) / 10)


def test_reachable_set_absorbing(birth):
    rs = reachable_set(birth, 10, [0.0])
    assert len(rs) == 1 and not rs.truncated


# ---------------------------------------------------------------- tubes and gaps


def test_tube_contains_everything_for_large_delta(iso):
    z = fluid_limit(iso, [1.0, 0.0], 1.0, 50)
    est = tube_probability_mc(iso, 20, [1.0, 0.0], z, 10.0, 200, 1)
    assert est.p_hat == 1.0


def test_tube_empty_for_zero_delta_off_lattice(iso):
    z = MacroPath.constant([0.55, 0.45], 1.0)
    est = tube_probability_mc(iso, 20, [1.0, 0.0], z, 0.0, 200, 1)
    assert est.hits == 0 and est.zero_hits and est.log_estimate is None


def test_tube_matches_yule_oracle(birth):
    # the birth path is nondecreasing, so staying within 0.1 of zero on [0,1]
    # means at most 5 particles at t=1: 1 - P[N(1) >= 6]
    v = 50
    exact = 1.0 - yule_tail(1.0, 6)
    est = tube_probability_mc(birth, v, ScaledState(v, (1,)), MacroPath.constant([0.0], 1.0), 0.1, 10_000, 11)
    lo, hi = est.wilson
    assert lo <= exact <= hi


def test_tube_estimate_independent_of_jobs(iso):
    z = fluid_limit(iso, [1.0, 0.0], 1.0, 50)
    a = tube_probability_mc(iso, 50, [1.0, 0.0], z, 0.08, 300, 5, jobs=1)
    b = tube_probability_mc(iso, 50, [1.0, 0.0], z, 0.08, 300, 5, jobs=4)
    assert a == b


def test_fluid_gap_shrinks_with_v(iso):
    small = fluid_gap(iso, 100, [1.0, 0.0], 1.0, range(20))
    large = fluid_gap(iso, 10_000, [1.0, 0.0], 1.0, range(20))
    assert large.median < small.median


def test_fluid_gap_zero_for_frozen_model():
    net = make(["A"], [ma({"A": 1}, {}, 0.0)])
    assert fluid_gap(net, 10, [0.5], 1.0, range(3)).gaps == (0.0, 0.0, 0.0)


def test_fluid_gap_birth_from_one_particle(birth):
    g = fluid_gap(birth, 100, ScaledState(100, (1,)), 1.0, range(10))
    # fluid path from 1/v is exp(t)/v; compare with a dense grid
    t = np.linspace(0.0, 1.0, 100_001)
    for seed, gap in enumerate(g.gaps):
        p = ssa_simulate(birth, 100, ScaledState(100, (1,)), 1.0, seed)
        dense = np.abs(p(t)[:, 0] - np.exp(t) / 100).max()
        assert gap == pytest.approx(dense, abs=1e-6)
        assert 0 < gap < 0.1


def test_sup_distance_against_dense_grid(iso):
    p = ssa_simulate(iso, 30, [1.0, 0.0], 2.0, 3)
    z = MacroPath(np.array([0.0, 0.7, 2.0]), np.array([[1.0, 0.0], [0.3, 0.6], [0.5, 0.5]]))
    exact = sup_distance(p, z)
    t = np.linspace(0.0, 2.0, 200_001)
    dense = np.linalg.norm(p(t) - z(t), axis=1).max()
    assert dense <= exact + 1e-12
    assert exact - dense < 0.01


# ---------------------------------------------------------------- helpers


@given(st.integers(0, 2**63 - 1), st.integers(0, 10**6))
def test_mix_seed_in_range_and_stable(seed, idx):
    a = mix_seed(seed, idx)
    assert a == mix_seed(seed, idx)
    assert 0 <= a < 2**64


@given(st.integers(1, 500).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_interval_brackets_estimate(hn):
    h, n = hn
    lo, hi = wilson_interval(h, n)
    assert 0.0 <= lo <= h / n <= hi <= 1.0


@given(st.integers(0, 10_000), st.sampled_from([5, 20, 100]))
def test_states_on_lattice_and_orthant(seed, v):
    net = make(["A", "B"], [ma({"A": 2}, {"B": 1}), ma({"B": 1}, {"A": 1}, 0.5), ma({}, {"A": 1}, 0.3)])
    p = ssa_simulate(net, v, ScaledState(v, (v, 0)), 0.5, seed)
    c = p.count_states()
    assert np.all(c >= 0)
    np.testing.assert_allclose(p.states() * v, c)
