import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from jumpldp.lp import feasible_nonneg, simplex
from jumpldp.ratefn import LP_TOL, _support_direct, _support_lp


def random_lp(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    A = rng.integers(-2, 3, size=(m, n)).astype(float)
    if rng.random() < 0.6:
        b = A @ rng.uniform(0, 2, n) * (rng.random(n) < 0.7).any()
    else:
        b = rng.normal(0, 1, m)
    c = rng.normal(0, 1, n)
    return c, A, b


@given(st.integers(0, 2**32 - 1))
def test_simplex_agrees_with_scipy(seed):
    c, A, b = random_lp(seed)
    ours = simplex(c, A, b)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * len(c), method="highs")
    expected = {0: "optimal", 2: "infeasible", 3: "unbounded"}[ref.status]
    assert ours.status == expected
    if expected == "optimal":
        assert ours.value == pytest.approx(ref.fun, abs=1e-7 * (1 + abs(ref.fun)))
        np.testing.assert_allclose(A @ ours.x, b, atol=1e-8)
        assert np.all(ours.x >= 0)


@given(st.integers(0, 2**32 - 1))
def test_farkas_certificate_separates(seed):
    _, A, b = random_lp(seed)
    res = feasible_nonneg(A, b)
    if res.status == "infeasible":
        y = res.farkas
        assert np.all(y @ A <= 1e-9) and y @ b > 1e-9


def test_degenerate_program_terminates():
    # classic cycling example for the textbook rule; Bland's rule must finish
    A = np.array([[0.5, -5.5, -2.5, 9, 1, 0, 0], [0.5, -1.5, -0.5, 1, 0, 1, 0], [1, 0, 0, 0, 0, 0, 1]])
    b = np.array([0.0, 0.0, 1.0])
    c = np.array([-10, 57, 9, 24, 0, 0, 0.0])
    res = simplex(c, A, b)
    ref = linprog(c, A_eq=A, b_eq=b, method="highs")
    assert res.status == "optimal" and res.value == pytest.approx(ref.fun)


@settings(max_examples=1000)
@given(st.integers(0, 2**32 - 1))
def test_closed_form_support_matches_lp(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3))
    R = int(rng.integers(1, 5))
    gamma = rng.integers(-2, 3, size=(R, d)).astype(float)
    idx = sorted(int(r) for r in rng.choice(R, size=int(rng.integers(1, R + 1)), replace=False))
    y = gamma[idx].T @ (rng.uniform(0, 1, len(idx)) * (rng.random(len(idx)) < 0.6)) if rng.random() < 0.7 else rng.normal(0, 1, d)
    scale = 1.0 + float(np.linalg.norm(y))
    fast = _support_direct(gamma, idx, y, scale)
    if fast is None:
        return
    slow = _support_lp(gamma, idx, y)
    assert fast.feasible == slow.feasible
    if fast.feasible:
        assert fast.support == slow.support
        np.testing.assert_allclose(gamma.T @ fast.mu, y, atol=LP_TOL * scale * 10)
