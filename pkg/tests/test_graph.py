import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hgporec.graph import (DataError, InteractionGraph, PreparedData, apply_k_core, assign_degree_groups,
                           default_pool_size, ingest_interactions, prepare, sample_candidate_pool, split_edges)


def write(tmp_path, text, name="inter.tsv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ingest_counts(tmp_path):
    raw = ingest_interactions(write(tmp_path, "a\tx\na\ty\nb\tx\n"))
    assert (raw.num_users, raw.num_items, len(raw.edges)) == (2, 2, 3)


def test_ingest_duplicates_collapse(tmp_path):
    raw = ingest_interactions(write(tmp_path, "a\tx\na\tx\n"))
    assert len(raw.edges) == 1


def test_ingest_timestamp_column(tmp_path):
    raw = ingest_interactions(write(tmp_path, "a\tx\t17\n"))
    assert raw.edges == [(0, 0)]


def test_ingest_missing_item_names_line(tmp_path):
    with pytest.raises(DataError, match=":2:"):
        ingest_interactions(write(tmp_path, "a\tx\na\n"))


def test_ingest_empty_file(tmp_path):
    with pytest.raises(DataError):
        ingest_interactions(write(tmp_path, ""))


def test_k_core_identity_at_one():
    edges = [(0, 0), (0, 1), (1, 1)]
    assert apply_k_core(edges, 1) == edges


def test_k_core_star_eliminated():
    with pytest.raises(DataError, match="k-core eliminated all data"):
        apply_k_core([(0, i) for i in range(5)], 2)


def _peel_oracle(edges, k):
    edges = set(edges)
    changed = True
    while changed:
        changed = False
        for u, i in sorted(edges):
            du = sum(1 for a, _ in edges if a == u)
            di = sum(1 for _, b in edges if b == i)
            if du < k or di < k:
                edges.discard((u, i))
                changed = True
                break
    return edges


def test_k_core_cycle_with_pendant():
    cycle = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert set(apply_k_core(cycle, 2)) == set(cycle)
    out = apply_k_core(cycle + [(0, 2)], 2)
    assert set(out) == set(cycle) == _peel_oracle(cycle + [(0, 2)], 2)


@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=40), st.integers(1, 3))
def test_k_core_fixpoint_and_oracle(edges, k):
    expect = _peel_oracle(edges, k)
    if not expect:
        with pytest.raises(DataError):
            apply_k_core(edges, k)
        return
    out = apply_k_core(edges, k)
    assert set(out) == expect
    assert apply_k_core(out, k) == out


def test_split_exact_proportion():
    s = split_edges([(0, i) for i in range(10)], (0.8, 0.1, 0.1), seed=3)
    assert s.counts() == {"train": 8, "val": 1, "test": 1}


def test_split_small_user_all_train():
    s = split_edges([(0, 0), (0, 1)], seed=0)
    assert s.counts() == {"train": 2, "val": 0, "test": 0}


def test_split_deterministic():
    edges = [(u, i) for u in range(5) for i in range(7) if (u + i) % 2]
    assert split_edges(edges, seed=11) == split_edges(edges, seed=11)


@given(st.integers(0, 10_000), st.lists(st.tuples(st.integers(0, 8), st.integers(0, 20)), min_size=1, max_size=80))
def test_split_partition(seed, edges):
    s = split_edges(edges, seed=seed)
    parts = [set(s.train_edges), set(s.val_edges), set(s.test_edges)]
    assert set.union(*parts) == set(edges)
    assert sum(len(p) for p in parts) == len(set(edges))
    users_train = {u for u, _ in s.train_edges}
    assert {u for u, _ in s.test_edges + s.val_edges} <= users_train


def test_split_proportions_in_expectation():
    edges = [(u, i) for u in range(400) for i in range(7)]
    c = split_edges(edges, seed=5).counts()
    assert abs(c["test"] / len(edges) - 0.1) < 0.01 and abs(c["val"] / len(edges) - 0.1) < 0.01


def test_graph_invariants():
    g = InteractionGraph.from_edges([(0, 1), (1, 1), (1, 0), (1, 0)], 3, 2)
    assert len(g.edges) == 3
    assert g.user_degree.tolist() == [1, 2, 0]
    assert g.user_degree.sum() == g.item_degree.sum() == len(g.edges)
    assert [a.tolist() for a in g.user_adjacency] == [[1], [0, 1], []]
    with pytest.raises(DataError):
        InteractionGraph.from_edges([(0, 5)], 1, 2)


def test_groups_one_per_degree():
    g = assign_degree_groups([1, 2, 3, 4, 5], 5)
    assert g.assignment.tolist() == [0, 1, 2, 3, 4]


def test_groups_tie_break_by_index():
    g = assign_degree_groups([3, 3, 3, 3], 2)
    assert g.assignment.tolist() == [0, 0, 1, 1]


def test_groups_skewed_sizes():
    g = assign_degree_groups([1, 1, 1, 10, 10, 100], 3)
    assert np.bincount(g.assignment).tolist() == [2, 2, 2]
    assert g.assignment.tolist() == [0, 0, 1, 1, 2, 2]


def test_groups_too_few_nodes():
    with pytest.raises(DataError):
        assign_degree_groups([1, 2], 3)


@given(st.lists(st.integers(0, 50), min_size=5, max_size=60), st.integers(1, 5))
def test_groups_partition(degrees, k):
    g = assign_degree_groups(degrees, k)
    sizes = np.bincount(g.assignment, minlength=k)
    assert sizes.sum() == len(degrees) and sizes.max() - sizes.min() <= 1
    assert g.boundaries == sorted(g.boundaries)
    # higher group never holds a strictly smaller degree
    d = np.asarray(degrees)
    for a in range(k - 1):
        assert d[g.assignment == a].max() <= d[g.assignment == a + 1].min()


def test_pool_forced_single_item():
    g = InteractionGraph.from_edges([(0, i) for i in range(4)], 1, 5)
    assert sample_candidate_pool(g, 0, 3, 0).tolist() == [4]


def test_pool_clamped_to_available():
    g = InteractionGraph.from_edges([(0, 0), (0, 1)], 1, 6)
    assert sorted(sample_candidate_pool(g, 0, 10, 0).tolist()) == [2, 3, 4, 5]


@given(st.integers(0, 1000), st.integers(1, 40), st.sampled_from(["user", "item"]))
def test_pool_excludes_neighbours(seed, size, side):
    rng = np.random.default_rng(seed)
    edges = [(u, i) for u in range(6) for i in range(300) if rng.random() < 0.2]
    g = InteractionGraph.from_edges(edges, 6, 300)
    anchor = 0
    pool = sample_candidate_pool(g, anchor, size, seed, side=side)
    assert len(set(pool.tolist())) == len(pool)
    assert not set(pool.tolist()) & set(g.adjacency(side)[anchor].tolist())
    n_other = 300 if side == "user" else 6
    assert len(pool) == min(size, n_other - len(g.adjacency(side)[anchor]))


def test_pool_uniform():
    g = InteractionGraph.from_edges([(0, 0)], 1, 41)
    counts = np.zeros(41)
    rng = np.random.default_rng(0)
    for _ in range(4000):
        counts[sample_candidate_pool(g, 0, 5, rng)] += 1
    assert counts[0] == 0
    expected = 4000 * 5 / 40
    assert np.all(np.abs(counts[1:] - expected) < 4 * np.sqrt(expected))


def test_default_pool_size():
    assert default_pool_size(300) == 30 and default_pool_size(100_000) == 1024


def test_prepared_round_trip(tmp_path):
    lines = "".join(f"u{u}\ti{i}\n" for u in range(8) for i in range(8) if (u * 3 + i) % 4)
    data = prepare(write(tmp_path, lines), k_core=2, seed=1)
    data.save(tmp_path / "d")
    back = PreparedData.load(tmp_path / "d")
    assert back.user_ids == data.user_ids and back.item_ids == data.item_ids
    assert back.split == data.split
    assert back.train_graph.edges == data.train_graph.edges
