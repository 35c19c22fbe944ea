import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsde_tree import BsdeProblem, TreeTopology, UsageError, cond_prev, expectation, solve_bsde
from fbsde_tree.bsde import bsde_stability_report
from fbsde_tree.errors import NumericError, ShapeError

from oracles import cond_prev_loop


def _yp(k, yp, zp):
    return yp


def test_noise_terminal_is_killed(rademacher3):
    xi = rademacher3.last_noise(3)[:, None]
    y = solve_bsde(BsdeProblem(rademacher3, xi, _yp))
    for k in range(3):
        assert np.all(y[k] == 0.0)


def test_constant_terminal_propagates(trinomial3):
    y = solve_bsde(BsdeProblem(trinomial3, np.full((27, 2), 4.0), _yp))
    for k in range(4):
        assert np.allclose(y[k], 4.0, atol=1e-14)


def test_y_plus_z_driver(rademacher3):
    xi = rademacher3.last_noise(3)[:, None]
    y = solve_bsde(BsdeProblem(rademacher3, xi, lambda k, yp, zp: yp + zp))
    for k in range(3):
        assert np.allclose(y[k], 1.0, atol=1e-15)


def test_zero_driver(skewed4):
    xi = np.random.default_rng(0).standard_normal((16, 3))
    y = solve_bsde(BsdeProblem(skewed4, xi, lambda k, yp, zp: np.zeros_like(yp)))
    assert all(np.all(y[k] == 0.0) for k in range(4))
    assert np.array_equal(y[4], xi)


def _nonlinear_driver(topo, seed):
    rng = np.random.default_rng(seed)
    W = 0.5 * rng.standard_normal((topo.horizon, 2, 2))

    def driver(k, yp, zp):
        return np.tanh(yp @ W[k]) + 0.3 * zp - 0.1 * k
    return driver


def test_matches_loop_sweep(trinomial3):
    driver = _nonlinear_driver(trinomial3, 1)
    xi = np.random.default_rng(1).standard_normal((27, 2))
    y = solve_bsde(BsdeProblem(trinomial3, xi, driver))
    cur = xi
    for k in range(2, -1, -1):
        yp, zp = cond_prev_loop(trinomial3, cur)
        cur = driver(k, yp, zp)
        assert np.allclose(y[k], cur, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_conditional_moment_inequalities(skewed4, seed):
    xi = 5 * np.random.default_rng(seed).standard_normal((16, 2))
    y = solve_bsde(BsdeProblem(skewed4, xi, _nonlinear_driver(skewed4, seed)))
    for k in range(1, 5):
        yp, zp = cond_prev(y[k], skewed4)
        full = float(expectation(skewed4, np.sum(y[k] ** 2, axis=1)))
        assert full - float(expectation(skewed4, np.sum(yp ** 2, axis=1))) >= -1e-14 * (1 + full)
        assert full - float(expectation(skewed4, np.sum(zp ** 2, axis=1))) >= -1e-14 * (1 + full)


def test_resolve_is_idempotent(skewed4):
    driver = _nonlinear_driver(skewed4, 2)
    xi = np.random.default_rng(2).standard_normal((16, 2))
    y = solve_bsde(BsdeProblem(skewed4, xi, driver))
    again = solve_bsde(BsdeProblem(skewed4, y[4], driver))
    assert all(np.array_equal(y[k], again[k]) for k in range(5))


def test_non_finite_driver(rademacher3):
    def driver(k, yp, zp):
        return yp / 0.0 if k == 1 else yp

    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(NumericError) as info:
            solve_bsde(BsdeProblem(rademacher3, np.ones((8, 1)), driver))
    assert info.value.k == 1


def test_problem_validation(rademacher3):
    with pytest.raises(ShapeError):
        BsdeProblem(rademacher3, np.ones((4, 1)), _yp)
    with pytest.raises(NumericError):
        BsdeProblem(rademacher3, np.full((8, 1), np.nan), _yp)
    one = BsdeProblem(rademacher3, np.ones(8), _yp)
    assert one.terminal.shape == (8, 1)


# -- stability ratios ----------------------------------------------------------

def test_identical_problems(rademacher3):
    p = BsdeProblem(rademacher3, np.arange(8.0), lambda k, yp, zp: yp - zp)
    assert bsde_stability_report(p, p).lhs == 0.0


def test_shifted_terminal_ratio():
    N, delta = 5, 0.3
    topo = TreeTopology(N)
    xi = np.random.default_rng(0).standard_normal((2 ** N, 1))
    rec = bsde_stability_report(BsdeProblem(topo, xi, _yp), BsdeProblem(topo, xi + delta, _yp))
    assert rec.lhs == pytest.approx((N + 1) * delta ** 2, rel=1e-12)
    assert rec.rhs == pytest.approx(delta ** 2, rel=1e-12)


def test_topology_mismatch(rademacher3):
    other = TreeTopology(3, (1.0, -1.0), (0.5, 0.5))
    other4 = TreeTopology(4)
    with pytest.raises(UsageError):
        bsde_stability_report(BsdeProblem(rademacher3, np.ones(8), _yp),
                              BsdeProblem(other4, np.ones(16), _yp))
    bsde_stability_report(BsdeProblem(rademacher3, np.ones(8), _yp),
                          BsdeProblem(other, np.ones(8), _yp))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_ratio_homogeneous_in_data_difference(trinomial3, seed):
    rng = np.random.default_rng(seed)
    Y, Z = 0.5 * rng.standard_normal((2, 3, 2, 2))
    off = rng.standard_normal((3, 9, 2))
    xi, dxi = rng.standard_normal((2, 27, 2))
    base = BsdeProblem(trinomial3, xi, lambda k, yp, zp: yp @ Y[k] + zp @ Z[k])
    ratios = []
    for s in (1.0, 0.5, 0.25):
        pert = BsdeProblem(trinomial3, xi + s * dxi, lambda k, yp, zp, s=s:
                           yp @ Y[k] + zp @ Z[k] + s * off[k][:yp.shape[0]])
        rec = bsde_stability_report(base, pert)
        ratios.append(rec.ratio)
    assert ratios[1] == pytest.approx(ratios[0], rel=1e-9)
    assert ratios[2] == pytest.approx(ratios[0], rel=1e-9)
