"""LightGCN-style propagation, layer aggregation and dot-product scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graph import InteractionGraph


class Propagator:
    """Holds the symmetric-normalized biadjacency of a train graph and its transpose."""

    def __init__(self, graph: InteractionGraph):
        self.graph = graph
        self.r_norm: sp.csr_matrix = graph.normalized_biadjacency()
        self.r_norm_t: sp.csr_matrix = self.r_norm.T.tocsr()

    def step(self, z_user: ad.Tensor, z_item: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        return ad.sparse_matmul(self.r_norm, z_item), ad.sparse_matmul(self.r_norm_t, z_user)


def propagate_layer(graph_or_prop, z_user, z_item):
    """One propagation hop; nodes without train edges get zero rows."""
    prop = graph_or_prop if isinstance(graph_or_prop, Propagator) else Propagator(graph_or_prop)
    return prop.step(ad.constant(z_user), ad.constant(z_item))


@dataclass
class LayerStack:
    users: list[ad.Tensor]
    items: list[ad.Tensor]
    weights: np.ndarray

    @property
    def depth(self):
        return len(self.users) - 1

    def layer(self, side: str, k: int) -> ad.Tensor:
        return (self.users if side == "user" else self.items)[k]


def build_stack(prop: Propagator, e_user, e_item, num_layers: int = 3, weights=None) -> LayerStack:
    users, items = [ad.constant(e_user)], [ad.constant(e_item)]
    if users[0].shape[1] != items[0].shape[1]:
        raise ad.ShapeError(f"build_stack: width mismatch {users[0].shape} vs {items[0].shape}")
    for _ in range(num_layers):
        u, i = prop.step(users[-1], items[-1])
        users.append(u)
        items.append(i)
    if weights is None:
        weights = np.full(num_layers + 1, 1.0 / (num_layers + 1))
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (num_layers + 1,):
        raise ValueError(f"need {num_layers + 1} layer weights, got {weights.shape}")
    return LayerStack(users, items, weights)


def aggregate_layers(stack: LayerStack) -> tuple[ad.Tensor, ad.Tensor]:
    def combine(layers):
        out = ad.scale(layers[0], stack.weights[0])
        for w, z in zip(stack.weights[1:], layers[1:]):
            out = ad.add(out, ad.scale(z, w))
        return out

    return combine(stack.users), combine(stack.items)


def score(z_u, z_i):
    return float(np.dot(np.asarray(z_u, dtype=np.float64), np.asarray(z_i, dtype=np.float64)))


def dense_normalized_adjacency(graph: InteractionGraph) -> np.ndarray:
    """(U+I)x(U+I) D^-1/2 A D^-1/2 with zero rows for isolated nodes."""
    n = graph.num_users + graph.num_items
    a = np.zeros((n, n))
    for u, i in graph.edges:
        a[u, graph.num_users + i] = a[graph.num_users + i, u] = 1.0
    d = a.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return inv[:, None] * a * inv[None, :]


def export_embeddings(path, z_user: np.ndarray, z_item: np.ndarray, user_ids, item_ids):
    """CSV ``node_kind,node_id,v1..vd`` at 9 significant digits."""
    d = z_user.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_kind", "node_id"] + [f"v{j + 1}" for j in range(d)])
        for kind, ids, mat in (("user", user_ids, z_user), ("item", item_ids, z_item)):
            for raw, row in zip(ids, mat):
                w.writerow([kind, raw] + [f"{v:.9g}" for v in row])
