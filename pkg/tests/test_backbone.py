import numpy as np
import pytest

from hgporec import autodiff as ad
from hgporec.backbone import (Propagator, aggregate_layers, build_stack, dense_normalized_adjacency,
                              export_embeddings, propagate_layer, score)
from hgporec.graph import InteractionGraph
from tests.conftest import check_grad, random_graph


def test_single_edge_copies_neighbour():
    g = InteractionGraph.from_edges([(0, 0)], 1, 1)
    zu, zi = np.array([[1.0, 2.0]]), np.array([[3.0, -1.0]])
    u1, i1 = propagate_layer(g, zu, zi)
    assert np.array_equal(u1.value, zi) and np.array_equal(i1.value, zu)


def test_two_leaf_items():
    g = InteractionGraph.from_edges([(0, 0), (0, 1)], 1, 2)
    zi = np.array([[1.0, 0.0], [0.0, 2.0]])
    u1, _ = propagate_layer(g, np.zeros((1, 2)), zi)
    assert np.allclose(u1.value, (zi[0] + zi[1]) / np.sqrt(2), atol=1e-15)


def test_isolated_user_zero_row():
    g = InteractionGraph.from_edges([(0, 0)], 2, 1)
    u1, _ = propagate_layer(g, np.ones((2, 3)), np.ones((1, 3)))
    assert np.array_equal(u1.value[1], np.zeros(3)) and np.all(np.isfinite(u1.value))


def _dense_stack(g, zu, zi, layers):
    a = dense_normalized_adjacency(g)
    x = np.vstack([zu, zi])
    out = [x]
    for _ in range(layers):
        out.append(a @ out[-1])
    return out


@pytest.mark.parametrize("seed", range(10))
def test_sparse_matches_dense_powers(seed):
    rng = np.random.default_rng(seed)
    nu, ni = int(rng.integers(2, 25)), int(rng.integers(2, 25))
    g = random_graph(rng, nu, ni, 0.25)
    zu, zi = rng.normal(size=(nu, 4)), rng.normal(size=(ni, 4))
    stack = build_stack(Propagator(g), zu, zi, 3)
    dense = _dense_stack(g, zu, zi, 3)
    for k in range(4):
        got = np.vstack([stack.users[k].value, stack.items[k].value])
        assert np.max(np.abs(got - dense[k])) <= 1e-12
    zu_f, zi_f = aggregate_layers(stack)
    assert np.max(np.abs(np.vstack([zu_f.value, zi_f.value]) - sum(dense) / 4)) <= 1e-12


def test_four_node_two_layers():
    g = InteractionGraph.from_edges([(0, 0), (0, 1), (1, 1)], 2, 2)
    rng = np.random.default_rng(0)
    zu, zi = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    a = dense_normalized_adjacency(g)
    x = np.vstack([zu, zi])
    expect = (x + a @ x + a @ a @ x) / 3
    u, i = aggregate_layers(build_stack(Propagator(g), zu, zi, 2))
    assert np.max(np.abs(np.vstack([u.value, i.value]) - expect)) <= 1e-12


def test_zero_layers_identity():
    g = InteractionGraph.from_edges([(0, 0)], 1, 1)
    zu, zi = np.array([[1.0]]), np.array([[2.0]])
    u, i = aggregate_layers(build_stack(Propagator(g), zu, zi, 0))
    assert np.array_equal(u.value, zu) and np.array_equal(i.value, zi)


def test_aggregate_convex_combination():
    m = np.arange(6.0).reshape(3, 2)
    from hgporec.backbone import LayerStack
    stack = LayerStack([ad.constant(m)] * 3, [ad.constant(m)] * 3, np.full(3, 1 / 3))
    u, _ = aggregate_layers(stack)
    assert np.allclose(u.value, m, atol=1e-15)


def test_propagation_linear():
    rng = np.random.default_rng(3)
    g = random_graph(rng, 10, 12)
    xu, xi, yu, yi = (rng.normal(size=s) for s in [(10, 3), (12, 3), (10, 3), (12, 3)])
    a, b = 1.7, -0.4
    lhs = propagate_layer(g, a * xu + b * yu, a * xi + b * yi)
    px, py = propagate_layer(g, xu, xi), propagate_layer(g, yu, yi)
    for k in range(2):
        assert np.max(np.abs(lhs[k].value - (a * px[k].value + b * py[k].value))) <= 1e-12


def test_aggregate_gradient():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 5, 6, 0.5)
    prop = Propagator(g)
    w_u, w_i = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))

    def f(eu, ei):
        u, i = aggregate_layers(build_stack(prop, eu, ei, 3))
        return ad.add(ad.sum_(ad.mul(ad.tanh(u), w_u)), ad.sum_(ad.mul(ad.square(i), w_i)))

    assert check_grad(f, {"eu": rng.normal(size=(5, 3)), "ei": rng.normal(size=(6, 3))}) < 1e-4


def test_score_cases():
    assert score([1.0, 0.0], [0.0, 1.0]) == 0.0
    e = np.ones(4) / 2
    assert abs(score(e, e) - 1.0) < 1e-15
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=64), rng.normal(size=64)
    assert abs(score(a, b) - sum(x * y for x, y in zip(a, b))) < 1e-12


def test_width_mismatch():
    g = InteractionGraph.from_edges([(0, 0)], 1, 1)
    with pytest.raises(ad.ShapeError):
        build_stack(Propagator(g), np.ones((1, 2)), np.ones((1, 3)), 1)


def test_export_csv(tmp_path):
    export_embeddings(tmp_path / "e.csv", np.array([[1 / 3, 2.0]]), np.array([[0.5, -1.0]]), ["a"], ["x"])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines == ["node_kind,node_id,v1,v2", "user,a,0.333333333,2", "item,x,0.5,-1"]
