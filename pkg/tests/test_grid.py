import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterra_euler import DomainError, InvalidPartitionError, make_uniform, pi_index, tau


def test_hundred_steps_on_unit_horizon():
    p = make_uniform(1.0, 100)
    assert p.delta == 0.01
    assert p.nodes[50] == 0.5
    assert p.nodes[-1] == 1.0


def test_single_step():
    np.testing.assert_array_equal(make_uniform(1.0, 1).nodes, [0.0, 1.0])


def test_half_horizon_four_steps():
    np.testing.assert_array_equal(make_uniform(0.5, 4).nodes, [0, 0.125, 0.25, 0.375, 0.5])


@pytest.mark.parametrize("T,N", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -3), (5.0, 2),
                                 (float("inf"), 4), (1.0, 2.5)])
def test_rejects_bad_partitions(T, N):
    with pytest.raises(InvalidPartitionError):
        make_uniform(T, N)


def test_floor_maps_inside_a_cell():
    p = make_uniform(1.0, 4)
    assert tau(p, 0.3) == 0.25
    assert pi_index(p, 0.3) == 1


def test_floor_maps_on_nodes():
    p = make_uniform(1.0, 8)
    for i in range(8):
        assert pi_index(p, p.nodes[i]) == i
        assert tau(p, p.nodes[i]) == p.nodes[i]


def test_horizon_maps_to_last_cell():
    p = make_uniform(1.0, 10)
    assert pi_index(p, 1.0) == 9
    assert tau(p, 1.0) == p.nodes[9]
    # the endpoint convention agrees with the limit from the left
    assert pi_index(p, 1.0 - 1e-12) == pi_index(p, 1.0)


@pytest.mark.parametrize("t", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_floor_maps_outside_domain(t):
    with pytest.raises(DomainError):
        pi_index(make_uniform(1.0, 10), t)


def test_vectorised_floor_map():
    p = make_uniform(1.0, 4)
    np.testing.assert_array_equal(pi_index(p, np.array([0.0, 0.3, 0.99, 1.0])), [0, 1, 3, 3])


def test_refinement_and_equality():
    assert make_uniform(1.0, 8).refines(make_uniform(1.0, 4))
    assert not make_uniform(1.0, 6).refines(make_uniform(1.0, 4))
    assert make_uniform(1.0, 4) == make_uniform(1.0, 4)
    assert hash(make_uniform(1.0, 4)) == hash(make_uniform(1.0, 4))


def test_nodes_are_read_only_and_reproducible():
    a, b = make_uniform(0.7, 33), make_uniform(0.7, 33)
    assert a.nodes.tobytes() == b.nodes.tobytes()
    with pytest.raises(ValueError):
        a.nodes[0] = 1.0


@given(T=st.floats(0.01, 20.0), N=st.integers(1, 400), u=st.floats(0.0, 1.0))
def test_floor_map_brackets_t(T, N, u):
    if T / N > 1:
        return
    p = make_uniform(T, N)
    t = u * T
    i = pi_index(p, t)
    assert 0 <= i <= N - 1
    if t < T:
        assert p.nodes[i] <= t < p.nodes[i] + p.delta * (1 + 1e-12)


@given(T=st.floats(0.01, 20.0), N=st.integers(1, 400))
def test_nodes_strictly_increasing_and_uniform(T, N):
    if T / N > 1:
        return
    p = make_uniform(T, N)
    assert p.nodes[0] == 0 and p.nodes[-1] == T
    d = np.diff(p.nodes)
    assert np.all(d > 0)
    np.testing.assert_allclose(d, p.delta, rtol=1e-9)


@given(T=st.floats(0.5, 5.0), N=st.integers(5, 200), a=st.floats(0, 1), b=st.floats(0, 1))
def test_floor_map_monotone(T, N, a, b):
    if T / N > 1:
        return
    p = make_uniform(T, N)
    lo, hi = sorted((a * T, b * T))
    assert pi_index(p, lo) <= pi_index(p, hi)
