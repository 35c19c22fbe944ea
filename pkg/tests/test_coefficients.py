import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsde_tree import (DominationData, TreeTopology, UsageError, affine_coefficients,
                        blend_alpha, check_conditions, cond_prev, make_monotone_family, negate,
                        pq_maps, reorient)
from fbsde_tree.coefficients import node_blocks
from fbsde_tree.errors import ShapeError


@pytest.fixture(scope="module")
def topo():
    return TreeTopology(3)


@pytest.fixture(scope="module")
def family1(topo):
    return make_monotone_family(topo, 2, gain=0.1, seed=7, case=1)


@pytest.fixture(scope="module")
def family2(topo):
    return make_monotone_family(topo, 2, gain=0.1, seed=8, case=2)


def _probe(topo, k, n, rng, batch=()):
    shape = batch + (topo.n_nodes(k), n)
    return rng.standard_normal(shape), rng.standard_normal(shape), rng.standard_normal(shape)


# -- pq maps -------------------------------------------------------------------

def test_pq_identity_a(topo):
    dom = DominationData.build(topo, 2, v=1.0, A=np.eye(2))
    P, _ = pq_maps(dom, 0, np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), node=0)
    assert np.array_equal(P, [1.0, 2.0])


def test_pq_b_only(topo):
    dom = DominationData.build(topo, 1, mu=1.0, B=np.eye(1))
    _, Q = pq_maps(dom, 1, np.zeros(1), np.array([3.0]), np.array([7.0]), node=1)
    assert np.array_equal(Q, [3.0])


def test_pq_linearity(topo):
    dom = DominationData.build(topo, 1, mu=1.0, B=np.eye(1), C=np.eye(1))
    _, Q = pq_maps(dom, 2, np.zeros(1), np.array([1.0]), np.array([2.0]), node=3)
    assert np.array_equal(Q, [3.0])


def test_pq_vectorised_matches_nodes(family1, topo):
    _, dom = family1
    rng = np.random.default_rng(0)
    x, yp, zp = _probe(topo, 2, 2, rng)
    P, Q = pq_maps(dom, 2, x, yp, zp)
    for v in range(4):
        Pv, Qv = pq_maps(dom, 2, x[v], yp[v], zp[v], node=v)
        assert np.allclose(P[v], Pv) and np.allclose(Q[v], Qv)


# -- domination data -----------------------------------------------------------

def test_domination_requires_exactly_one_constant(topo):
    with pytest.raises(UsageError):
        DominationData.build(topo, 2)
    with pytest.raises(UsageError):
        DominationData.build(topo, 2, mu=1.0, v=1.0)
    with pytest.raises(UsageError):
        DominationData.build(topo, 2, mu=-1.0)


def test_domination_rejects_non_finite(topo):
    with pytest.raises(UsageError):
        DominationData.build(topo, 1, mu=1.0, M=[[np.nan]])


def test_domination_rows_from_array(topo):
    dom = DominationData.build(topo, 1, mu=1.0, B=np.array([[0.6], [0.0]]),
                               C=np.array([[0.0], [0.4]]))
    assert dom.B[2].shape == (4, 2, 1) and dom.A[0].shape == (1, 2, 1)


# -- blending ------------------------------------------------------------------

def test_blend_identity_at_one(family1, topo):
    coeffs, dom = family1
    blended = blend_alpha(coeffs, dom, 1.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        k = int(rng.integers(0, 3))
        x, yp, zp = _probe(topo, k, 2, rng)
        for a, b in zip(blended.gamma(k, x, yp, zp), coeffs.gamma(k, x, yp, zp)):
            assert np.array_equal(a, b)
        y0 = rng.standard_normal(2)
        assert np.array_equal(blended.initial(y0), coeffs.initial(y0))
        xN = rng.standard_normal((8, 2))
        assert np.array_equal(blended.terminal(xN), coeffs.terminal(xN))


def test_blend_case2_driver_collapse(family2, topo):
    coeffs, dom = family2
    zero = blend_alpha(coeffs, dom, 0.0)
    rng = np.random.default_rng(2)
    for k in range(3):
        x, yp, zp = _probe(topo, k, 2, rng)
        want = -dom.v * np.einsum("vji,vjl,vl->vi", dom.A[k], dom.A[k], x)
        assert np.allclose(zero.driver(k, x, yp, zp), want, atol=1e-14)


def test_blend_case1_drift_ignores_x(family1, topo):
    coeffs, dom = family1
    zero = blend_alpha(coeffs, dom, 0.0)
    rng = np.random.default_rng(3)
    x1, yp, zp = _probe(topo, 1, 2, rng)
    x2 = rng.standard_normal(x1.shape)
    assert np.array_equal(zero.drift(1, x1, yp, zp), zero.drift(1, x2, yp, zp))
    assert np.array_equal(zero.diffusion(1, x1, yp, zp), zero.diffusion(1, x2, yp, zp))


def test_blend_rejects_alpha_outside(family1):
    coeffs, dom = family1
    for bad in (-0.1, 1.5):
        with pytest.raises(UsageError):
            blend_alpha(coeffs, dom, bad)


@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.9])
def test_blend_preserves_conditions(family1, family2, alpha):
    for coeffs, dom in (family1, family2):
        rep = check_conditions(blend_alpha(coeffs, dom, alpha), dom, 3000, seed=5)
        assert rep.passed, rep.violations


def _gamma_slack(coeffs, dom, k, th, thb):
    # standard-orientation slack of the Gamma monotonicity inequality
    g = coeffs.gamma(k, *th)
    gb = coeffs.gamma(k, *thb)
    hat = [a - b for a, b in zip(th, thb)]
    inner = sum(np.sum((a - b) * h, axis=-1) for a, b, h in zip(g, gb, hat))
    P = np.einsum("vij,...vj->...vi", dom.A[k], hat[0])
    Q = dom.q_map(k, hat[1], hat[2])
    return -dom.v * np.sum(P ** 2, axis=-1) - dom.mu * np.sum(Q ** 2, axis=-1) - inner


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(0.0, 1.0), seed=st.integers(0, 10 ** 6), k=st.integers(0, 2))
def test_monotone_slack_is_affine_in_alpha(family1, topo, alpha, seed, k):
    coeffs, dom = family1
    rng = np.random.default_rng(seed)
    th, thb = _probe(topo, k, 2, rng), _probe(topo, k, 2, rng)
    s1 = _gamma_slack(coeffs, dom, k, th, thb)
    s0 = _gamma_slack(blend_alpha(coeffs, dom, 0.0), dom, k, th, thb)
    sa = _gamma_slack(blend_alpha(coeffs, dom, alpha), dom, k, th, thb)
    assert np.allclose(sa, alpha * s1 + (1 - alpha) * s0, atol=1e-12, rtol=0)


# -- condition checks ----------------------------------------------------------

def test_family_passes_standard_orientation(family1, family2):
    for coeffs, dom in (family1, family2):
        rep = check_conditions(coeffs, dom, 10_000, seed=0, tolerance=1e-12)
        assert rep.passed and rep.total_violations == 0
        assert all(v <= rep.samples[k] for k, v in rep.violations.items())


def test_negated_family_passes_flipped_orientation(family1, family2):
    for coeffs, dom in (family1, family2):
        rep = check_conditions(negate(coeffs), dom, 10_000, seed=1, orientation="flipped")
        assert rep.passed
        # and it is not monotone in the standard orientation
        assert not check_conditions(negate(coeffs), dom, 2000, seed=1).passed


def test_reorient_turns_flipped_into_standard(family1):
    coeffs, dom = family1
    flipped = reorient(coeffs)
    assert check_conditions(flipped, dom, 3000, seed=2, orientation="flipped").passed
    assert check_conditions(reorient(flipped), dom, 3000, seed=2).passed


def test_coincident_pairs_have_zero_slack(family1):
    coeffs, dom = family1
    rep = check_conditions(coeffs, dom, 500, seed=3, spread=0.0)
    assert all(v == 0.0 for v in rep.worst_slack.values())
    assert all(v == 0.0 for v in rep.lipschitz.values())


def test_check_conditions_detects_violation(topo):
    # increasing driver violates the standard monotonicity inequality
    coeffs = affine_coefficients(topo, 1, initial={"matrix": [[-1.0]]},
                                 driver={"x": 1.0 * np.eye(1)})
    dom = DominationData.build(topo, 1, mu=1.0, M=np.eye(1))
    rep = check_conditions(coeffs, dom, 1000, seed=0)
    assert rep.violations["monotone/gamma"] > 0 and not rep.passed
    assert rep.as_dict()["passed"] is False


def test_check_conditions_argument_errors(family1):
    coeffs, dom = family1
    with pytest.raises(UsageError):
        check_conditions(coeffs, dom, 0)
    with pytest.raises(UsageError):
        check_conditions(coeffs, dom, 10, orientation="sideways")


# -- built-in family -----------------------------------------------------------

def test_linear_family_passes(topo):
    for case in (1, 2):
        coeffs, dom = make_monotone_family(topo, 2, gain=0.0, seed=1, case=case)
        assert check_conditions(coeffs, dom, 10_000, seed=4).passed


def test_family_seed7_nonlinear(topo):
    coeffs, dom = make_monotone_family(topo, 2, m=1, gain=0.1, seed=7)
    assert check_conditions(coeffs, dom, 10_000, seed=7).passed


def test_family_deterministic(topo):
    a, _ = make_monotone_family(topo, 2, gain=0.1, seed=9)
    b, _ = make_monotone_family(topo, 2, gain=0.1, seed=9)
    c, _ = make_monotone_family(topo, 2, gain=0.1, seed=10)
    rng = np.random.default_rng(0)
    x, yp, zp = _probe(topo, 2, 2, rng)
    for p, q in zip(a.gamma(2, x, yp, zp), b.gamma(2, x, yp, zp)):
        assert np.array_equal(p, q)
    assert not np.allclose(a.drift(2, x, yp, zp), c.drift(2, x, yp, zp))


def test_family_argument_errors(topo):
    with pytest.raises(UsageError):
        make_monotone_family(topo, 2, gain=0.3)
    with pytest.raises(UsageError):
        make_monotone_family(topo, 2, case=3)
    with pytest.raises(UsageError):
        make_monotone_family(topo, 2, strength=0.0)


def test_family_is_node_dependent(topo):
    coeffs, _ = make_monotone_family(topo, 1, seed=2)
    x = np.zeros((4, 1))
    out = coeffs.drift(2, x, x, x)
    assert len(np.unique(np.round(out, 12))) > 1


# -- affine coefficients -------------------------------------------------------

def test_affine_coefficients_evaluate(topo):
    coeffs = affine_coefficients(
        topo, 1, initial={"matrix": [[2.0]], "offset": [1.0]},
        terminal={"matrix": [[3.0]]},
        drift={"x": [[1.0]], "y": [[2.0]], "z": [[3.0]], "offset": [4.0]})
    one = np.ones((2, 1))
    assert np.allclose(coeffs.drift(1, one, one, one), 10.0)
    assert np.allclose(coeffs.initial(np.array([1.0])), 3.0)
    assert np.allclose(coeffs.terminal(np.ones((8, 1))), 3.0)
    assert np.allclose(coeffs.driver(0, np.ones((1, 1)), one[:1], one[:1]), 0.0)


def test_affine_coefficients_shape_errors(topo):
    with pytest.raises(ShapeError):
        affine_coefficients(topo, 2, initial={"matrix": np.eye(3)})
    with pytest.raises(ShapeError):
        affine_coefficients(topo, 2, drift={"x": np.zeros((5, 2, 2))})


def test_node_blocks_lifts_scalars(topo):
    mats = node_blocks(topo, 2.0, (2, 2), [0, 1])
    assert np.array_equal(mats[1][1], 2 * np.eye(2))
    vecs = node_blocks(topo, [1.0, 2.0], (3,), [0, 1])
    assert np.array_equal(vecs[1], np.full((2, 3), 2.0))


def test_batched_evaluation_matches_single(family2, topo):
    coeffs, _ = family2
    rng = np.random.default_rng(4)
    x, yp, zp = _probe(topo, 2, 2, rng, batch=(5,))
    out = coeffs.driver(2, x, yp, zp)
    for i in range(5):
        assert np.allclose(out[i], coeffs.driver(2, x[i], yp[i], zp[i]))


def test_cond_prev_inputs_are_admissible(family1, topo):
    coeffs, _ = family1
    y3 = np.random.default_rng(0).standard_normal((8, 2))
    yp, zp = cond_prev(y3, topo)
    f, b, s = coeffs.gamma(2, np.zeros((4, 2)), yp, zp)
    assert f.shape == b.shape == s.shape == (4, 2)
