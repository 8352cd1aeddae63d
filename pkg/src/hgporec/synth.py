"""Synthetic interaction data with power-law item popularity and clustered user taste."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fusion import synth_semantic_ids, write_semantic_file


def synth_interactions(num_users, num_items, skew=1.0, clusters=4, seed=0, min_degree=5, max_degree=60,
                       taste=0.8):
    """(user, item) index pairs.

    Item popularity follows ``rank^-skew`` over a random ranking.  Items are
    assigned to clusters round-robin (the same rule as the semantic stand-in);
    each user has a favourite cluster that supplies roughly ``taste`` of their
    interactions.  User degrees are heavy-tailed from ``min_degree`` up.
    """
    if num_users < 1 or num_items <= min_degree or clusters < 1:
        raise ValueError("need users >= 1, items > min_degree and clusters >= 1")
    rng = np.random.default_rng(seed)
    rank = rng.permutation(num_items)
    weight = (rank + 1.0) ** (-skew)
    cluster = np.arange(num_items) % clusters
    favourite = rng.integers(clusters, size=num_users)
    degrees = np.minimum(min_degree + np.floor(rng.pareto(1.5, size=num_users) * min_degree), max_degree)
    degrees = np.minimum(degrees, num_items - 1).astype(int)

    edges = []
    for u in range(num_users):
        own = weight * (cluster == favourite[u])
        p = taste * own / own.sum() + (1.0 - taste) * weight / weight.sum()
        items = rng.choice(num_items, size=degrees[u], replace=False, p=p)
        edges.extend((u, int(i)) for i in sorted(items))
    return edges


def write_synthetic_dataset(out, num_users, num_items, skew=1.0, clusters=4, seed=0, dim=32):
    """Write ``interactions.tsv`` and a matching ``semantic.txt`` into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    edges = synth_interactions(num_users, num_items, skew, clusters, seed)
    item_ids = [f"i{n}" for n in range(num_items)]
    with open(out / "interactions.tsv", "w", encoding="utf-8") as fh:
        for u, i in edges:
            fh.write(f"u{u}\t{item_ids[i]}\n")
    table = synth_semantic_ids(num_items, dim, seed, clusters)
    write_semantic_file(out / "semantic.txt", table, item_ids)
    return out / "interactions.tsv", out / "semantic.txt"
