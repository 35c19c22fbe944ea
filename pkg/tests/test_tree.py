import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsde_tree import (AdaptedProcess, PerturbationData, ShapeError, TreeTopology, UsageError,
                        aggregate, cond_prev, expectation, random_adapted)
from fbsde_tree.tree import require_finite
from fbsde_tree.errors import NumericError

from oracles import cond_prev_loop, histories, node_index


# -- topology ------------------------------------------------------------------

def test_default_law_is_rademacher():
    topo = TreeTopology(2)
    assert topo.q == 2
    assert list(topo.w) == [1.0, -1.0]
    assert list(topo.p) == [0.5, 0.5]


@pytest.mark.parametrize("support, probs", [
    ((1.0, -1.0), (0.6, 0.4)),          # nonzero mean
    ((2.0, -2.0), (0.5, 0.5)),          # wrong variance
    ((1.0, -1.0), (0.5, 0.6)),          # probabilities do not sum to one
    ((1.0,), (1.0,)),                    # q < 2
    ((1.0, -1.0, 0.0), (0.5, 0.5)),     # length mismatch
])
def test_invalid_noise_law_rejected(support, probs):
    with pytest.raises(UsageError):
        TreeTopology(2, support, probs)


def test_invalid_horizon_rejected():
    for bad in (0, -1, 1.5):
        with pytest.raises(UsageError):
            TreeTopology(bad)


def test_two_point_law_moments():
    topo = TreeTopology.two_point(3, a=3.0)
    assert abs(topo.p @ topo.w) < 1e-15
    assert abs(topo.p @ topo.w ** 2 - 1) < 1e-14


def test_node_probabilities_sum_to_one(trinomial3, skewed4):
    for topo in (trinomial3, skewed4):
        for k in range(topo.horizon + 1):
            assert abs(topo.node_probabilities(k).sum() - 1) < 1e-14


def test_node_probabilities_match_histories(skewed4):
    for k in range(skewed4.horizon + 1):
        for digits, prob in histories(skewed4, k):
            assert skewed4.node_probabilities(k)[node_index(skewed4, digits)] == pytest.approx(
                prob, abs=1e-16)


def test_digits_roundtrip(trinomial3):
    for k in range(trinomial3.horizon + 1):
        for v in range(trinomial3.n_nodes(k)):
            assert node_index(trinomial3, trinomial3.digits(k, v)) == v


def test_last_noise_is_child_digit(trinomial3):
    for k in range(1, 4):
        for v in range(trinomial3.n_nodes(k)):
            assert trinomial3.last_noise(k)[v] == trinomial3.w[v % 3]


# -- cond_prev -----------------------------------------------------------------

def test_cond_prev_two_point_average():
    topo = TreeTopology(1)
    yp, zp = cond_prev(np.array([[2.0], [4.0]]), topo)
    assert yp[0, 0] == 3.0 and zp[0, 0] == -1.0


def test_cond_prev_constant_field(trinomial3):
    yp, zp = cond_prev(np.full((9, 2), 5.0), trinomial3)
    assert np.allclose(yp, 5.0, atol=1e-15)
    assert np.allclose(zp, 0.0, atol=1e-15)


def test_cond_prev_noise_copy(skewed4):
    for k in range(1, 5):
        yp, zp = cond_prev(skewed4.last_noise(k)[:, None], skewed4)
        assert np.allclose(yp, 0.0, atol=1e-15)
        assert np.allclose(zp, 1.0, atol=1e-15)


def test_cond_prev_matches_loop(trinomial3):
    field = np.random.default_rng(0).standard_normal((27, 2))
    got = cond_prev(field, trinomial3)
    want = cond_prev_loop(trinomial3, field)
    for a, b in zip(got, want):
        assert np.allclose(a, b, atol=1e-15)


def test_cond_prev_shape_errors(rademacher3):
    with pytest.raises(ShapeError):
        cond_prev(np.zeros((3, 1)), rademacher3)
    with pytest.raises(ShapeError):
        cond_prev(np.zeros((1, 1)), rademacher3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(0.3, 3.0))
def test_tower_property(seed, a):
    topo = TreeTopology.two_point(4, a)
    field = np.random.default_rng(seed).standard_normal((16, 2))
    once = cond_prev(cond_prev(field, topo)[0], topo)[0]
    # two-step conditional mean straight from the leaf probabilities
    block = field.reshape(4, 4, 2)
    weights = topo.node_probabilities(2).reshape(1, 4)
    direct = np.einsum("b,vbd->vd", weights[0], block)
    assert np.allclose(once, direct, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), a=st.floats(0.3, 3.0), k=st.integers(1, 4))
def test_conditional_jensen(seed, a, k):
    topo = TreeTopology.two_point(4, a)
    field = 10 * np.random.default_rng(seed).standard_normal((topo.n_nodes(k), 3))
    yp, zp = cond_prev(field, topo)
    total = float(expectation(topo, np.sum(field ** 2, axis=1)))
    assert float(expectation(topo, np.sum(yp ** 2, axis=1))) <= total + 1e-14 * (1 + total)
    assert float(expectation(topo, np.sum(zp ** 2, axis=1))) <= total + 1e-14 * (1 + total)


# -- norms ---------------------------------------------------------------------

def test_aggregate_zero_process(rademacher3):
    assert aggregate(AdaptedProcess.zeros(rademacher3, 2, 0, 3), "N2") == 0.0


def test_aggregate_deterministic_ones(rademacher3):
    proc = AdaptedProcess(rademacher3, 0, [np.ones((2 ** k, 1)) for k in range(4)])
    assert aggregate(proc, "N2") == 4.0


def test_aggregate_noise_copy(rademacher3):
    fields = [np.zeros((2 ** k, 1)) for k in range(4)]
    fields[1] = rademacher3.last_noise(1)[:, None]
    assert aggregate(AdaptedProcess(rademacher3, 0, fields), "N2") == 1.0


def test_aggregate_l2_and_h(rademacher3):
    proc = AdaptedProcess(rademacher3, 2, [np.full((4, 1), 3.0)])
    assert aggregate(proc, "L2") == 9.0
    p = PerturbationData.build(rademacher3, 1, xi=[2.0], eta=np.ones((8, 1)))
    assert aggregate(p, "H") == 5.0
    with pytest.raises(UsageError):
        aggregate(AdaptedProcess.zeros(rademacher3, 1, 0, 1), "L2")


def test_aggregate_unknown_tag(rademacher3):
    with pytest.raises(UsageError):
        aggregate(AdaptedProcess.zeros(rademacher3, 1, 0, 3), "sup")


# -- adapted processes ---------------------------------------------------------

def test_random_adapted_deterministic(rademacher3):
    a = random_adapted(rademacher3, 2, 0, 3, 42)
    b = random_adapted(rademacher3, 2, 0, 3, 42)
    assert all(np.array_equal(x, y) for x, y in zip(a.fields, b.fields))


def test_random_adapted_seed_sensitivity(rademacher3):
    a = random_adapted(rademacher3, 2, 0, 3, 1)
    b = random_adapted(rademacher3, 2, 0, 3, 2)
    assert any(not np.array_equal(x, y) for x, y in zip(a.fields, b.fields))


def test_random_adapted_large_seed(rademacher3):
    random_adapted(rademacher3, 1, 0, 1, 2 ** 64 - 1)


def test_random_adapted_rejects_dimension_zero(rademacher3):
    with pytest.raises(UsageError):
        random_adapted(rademacher3, 0, 0, 3, 0)


def test_adapted_process_shape_checks(rademacher3):
    with pytest.raises(ShapeError):
        AdaptedProcess(rademacher3, 0, [np.zeros((2, 1))])
    with pytest.raises(ShapeError):
        AdaptedProcess(rademacher3, 0, [np.zeros((1, 1)), np.zeros((2, 2))])
    with pytest.raises(ShapeError):
        AdaptedProcess(rademacher3, 0, [np.array([[np.nan]])])
    proc = AdaptedProcess.zeros(rademacher3, 1, 1, 2)
    with pytest.raises(ShapeError):
        proc[0]
    assert proc.fields[0].flags.writeable is False


def test_adapted_process_arithmetic(rademacher3):
    a = random_adapted(rademacher3, 2, 0, 3, 0)
    b = random_adapted(rademacher3, 2, 0, 3, 1)
    c = (a + b) - b
    assert all(np.allclose(x, y) for x, y in zip(c.fields, a.fields))
    assert np.allclose(a.scale(2.0)[3], 2 * a[3])


def test_require_finite_names_node():
    field = np.zeros((4, 2))
    field[2, 1] = np.inf
    with pytest.raises(NumericError) as info:
        require_finite(field, 2, "drift")
    assert info.value.k == 2 and info.value.node == 2
