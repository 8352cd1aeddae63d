"""Interaction ingestion, k-core filtering, splitting, degree groups and candidate pools."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Interactions:
    """Deduplicated raw interactions with dense index maps (insertion order)."""

    edges: list[tuple[int, int]]
    user_ids: list[str]
    item_ids: list[str]

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)


def ingest_interactions(path) -> Interactions:
    """Parse ``user<TAB>item[<TAB>timestamp]`` lines; duplicates collapse to one edge."""
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected user<TAB>item[<TAB>timestamp], got {line!r}")
            u = user_index.setdefault(parts[0], len(user_index))
            i = item_index.setdefault(parts[1], len(item_index))
            if (u, i) not in seen:
                seen.add((u, i))
                edges.append((u, i))
    if not edges:
        raise DataError(f"{path}: no interactions")
    return Interactions(edges, list(user_index), list(item_index))


def apply_k_core(edges, k: int) -> list[tuple[int, int]]:
    """Peel users and items with degree < k until every survivor has degree >= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    alive = list(dict.fromkeys(map(tuple, edges)))
    while True:
        du, di = defaultdict(int), defaultdict(int)
        for u, i in alive:
            du[u] += 1
            di[i] += 1
        kept = [(u, i) for u, i in alive if du[u] >= k and di[i] >= k]
        if len(kept) == len(alive):
            break
        alive = kept
    if not alive:
        raise DataError("k-core eliminated all data")
    return alive


def reindex(edges, user_ids, item_ids):
    """Compact indices after filtering; returns (edges, user_ids, item_ids)."""
    users = sorted({u for u, _ in edges})
    items = sorted({i for _, i in edges})
    umap = {u: n for n, u in enumerate(users)}
    imap = {i: n for n, i in enumerate(items)}
    return ([(umap[u], imap[i]) for u, i in edges], [user_ids[u] for u in users], [item_ids[i] for i in items])


@dataclass
class InteractionGraph:
    num_users: int
    num_items: int
    edges: list[tuple[int, int]]
    user_adjacency: list[np.ndarray] = field(repr=False)
    item_adjacency: list[np.ndarray] = field(repr=False)
    user_degree: np.ndarray = field(repr=False)
    item_degree: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, edges, num_users, num_items) -> InteractionGraph:
        edges = sorted(set(map(tuple, edges)))
        for u, i in edges:
            if not (0 <= u < num_users and 0 <= i < num_items):
                raise DataError(f"edge ({u}, {i}) out of range")
        ua = [[] for _ in range(num_users)]
        ia = [[] for _ in range(num_items)]
        for u, i in edges:
            ua[u].append(i)
            ia[i].append(u)
        ua = [np.array(sorted(a), dtype=np.int64) for a in ua]
        ia = [np.array(sorted(a), dtype=np.int64) for a in ia]
        return cls(num_users, num_items, edges, ua, ia,
                   np.array([len(a) for a in ua], dtype=np.int64),
                   np.array([len(a) for a in ia], dtype=np.int64))

    def adjacency(self, side: str) -> list[np.ndarray]:
        return self.user_adjacency if side == "user" else self.item_adjacency

    def degree(self, side: str) -> np.ndarray:
        return self.user_degree if side == "user" else self.item_degree

    def normalized_biadjacency(self) -> sp.csr_matrix:
        """R / sqrt(d_u d_i) as a users x items sparse matrix; isolated nodes give empty rows."""
        if not self.edges:
            return sp.csr_matrix((self.num_users, self.num_items))
        e = np.asarray(self.edges, dtype=np.int64)
        w = 1.0 / np.sqrt(self.user_degree[e[:, 0]] * self.item_degree[e[:, 1]])
        return sp.csr_matrix((w, (e[:, 0], e[:, 1])), shape=(self.num_users, self.num_items))


@dataclass
class DatasetSplit:
    train_edges: list[tuple[int, int]]
    val_edges: list[tuple[int, int]]
    test_edges: list[tuple[int, int]]

    def counts(self):
        return {"train": len(self.train_edges), "val": len(self.val_edges), "test": len(self.test_edges)}


def split_edges(edges, ratios=(0.8, 0.1, 0.1), seed=0) -> DatasetSplit:
    """Per-user random split.

    Each user's validation/test counts are ``n * ratio`` stochastically rounded,
    so proportions are exact in expectation and exact when ``n * ratio`` is an
    integer.  Users with fewer than three edges keep everything in train.
    """
    if len(ratios) != 3 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9) or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_user = defaultdict(list)
    for u, i in sorted(set(map(tuple, edges))):
        by_user[u].append((u, i))
    train, val, test = [], [], []
    for u in sorted(by_user):
        mine = by_user[u]
        n = len(mine)
        order = rng.permutation(n)
        jitter = rng.random(2)
        if n < 3:
            train.extend(mine)
            continue
        n_val = int(math.floor(n * ratios[1] + jitter[0]))
        n_test = int(math.floor(n * ratios[2] + jitter[1]))
        while n_val + n_test > n - 1:
            if n_val >= n_test:
                n_val -= 1
            else:
                n_test -= 1
        shuffled = [mine[j] for j in order]
        test.extend(shuffled[:n_test])
        val.extend(shuffled[n_test:n_test + n_val])
        train.extend(shuffled[n_test + n_val:])
    return DatasetSplit(sorted(train), sorted(val), sorted(test))


@dataclass
class DegreeGroups:
    group_count: int
    assignment: np.ndarray
    boundaries: list[float]

    def members(self, g):
        return np.flatnonzero(self.assignment == g)


def assign_degree_groups(degrees, K: int) -> DegreeGroups:
    """Equal-frequency grouping: sort by (degree, index) and cut into K near-equal slices."""
    degrees = np.asarray(degrees)
    n = len(degrees)
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K:
        raise DataError(f"cannot form {K} degree groups from {n} nodes")
    order = np.lexsort((np.arange(n), degrees))
    assignment = np.empty(n, dtype=np.int64)
    for g, chunk in enumerate(np.array_split(order, K)):
        assignment[chunk] = g
    boundaries = [float(degrees[chunk[0]]) for chunk in np.array_split(order, K)[1:]]
    return DegreeGroups(K, assignment, boundaries)


def sample_candidate_pool(graph: InteractionGraph, anchor: int, pool_size: int, rng, side: str = "user") -> np.ndarray:
    """Uniformly sample ``pool_size`` opposite-side nodes the anchor has no train edge with.

    For a user anchor the pool holds items; for an item anchor it holds users.
    ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    rng = np.random.default_rng(rng)
    n_other = graph.num_items if side == "user" else graph.num_users
    taken = graph.adjacency(side)[anchor]
    free = n_other - len(taken)
    if free <= pool_size:
        mask = np.ones(n_other, dtype=bool)
        mask[taken] = False
        return np.flatnonzero(mask)
    if free > 4 * pool_size:
        # rejection sampling is cheap when the neighbourhood is a small fraction
        picked: dict[int, None] = {}
        while len(picked) < pool_size:
            draw = rng.integers(0, n_other, size=2 * pool_size)
            ok = draw[~np.isin(draw, taken)]
            for x in ok:
                picked.setdefault(int(x))
                if len(picked) == pool_size:
                    break
        return np.fromiter(picked, dtype=np.int64, count=pool_size)
    mask = np.ones(n_other, dtype=bool)
    mask[taken] = False
    return rng.choice(np.flatnonzero(mask), size=pool_size, replace=False)


def default_pool_size(num_candidates: int) -> int:
    return int(min(1024, math.ceil(0.10 * num_candidates)))


# ---------------------------------------------------------------- exports

def write_id_map(path, ids):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["raw_id", "dense_index"])
        for n, raw in enumerate(ids):
            w.writerow([raw, n])


def read_id_map(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    ids = [None] * len(rows)
    for raw, n in rows:
        ids[int(n)] = raw
    return ids


def write_edges(path, edges):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_index", "item_index"])
        w.writerows(edges)


def read_edges(path) -> list[tuple[int, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(int(u), int(i)) for u, i in rows]


@dataclass
class PreparedData:
    """Everything downstream needs: filtered ids, the split and the train graph."""

    user_ids: list[str]
    item_ids: list[str]
    split: DatasetSplit
    train_graph: InteractionGraph

    @property
    def num_users(self):
        return len(self.user_ids)

    @property
    def num_items(self):
        return len(self.item_ids)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_id_map(d / "user_ids.csv", self.user_ids)
        write_id_map(d / "item_ids.csv", self.item_ids)
        write_edges(d / "train.csv", self.split.train_edges)
        write_edges(d / "val.csv", self.split.val_edges)
        write_edges(d / "test.csv", self.split.test_edges)

    @classmethod
    def load(cls, directory) -> PreparedData:
        d = Path(directory)
        users, items = read_id_map(d / "user_ids.csv"), read_id_map(d / "item_ids.csv")
        split = DatasetSplit(read_edges(d / "train.csv"), read_edges(d / "val.csv"), read_edges(d / "test.csv"))
        return cls(users, items, split, InteractionGraph.from_edges(split.train_edges, len(users), len(items)))


def prepare(path, k_core=5, ratios=(0.8, 0.1, 0.1), seed=0) -> PreparedData:
    raw = ingest_interactions(path)
    edges = apply_k_core(raw.edges, k_core)
    edges, users, items = reindex(edges, raw.user_ids, raw.item_ids)
    split = split_edges(edges, ratios, seed)
    log.info("prepared %d users, %d items, split %s", len(users), len(items), split.counts())
    return PreparedData(users, items, split, InteractionGraph.from_edges(split.train_edges, len(users), len(items)))
