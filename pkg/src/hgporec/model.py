"""Trainable recommender: ID embeddings, optional semantic fusion, LightGCN stack."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .backbone import LayerStack, Propagator, aggregate_layers, build_stack
from .config import RunConfig
from .fusion import ConcatFusion, SemanticTable, WeightedSumFusion
from .graph import InteractionGraph


class RecModel:
    def __init__(self, graph: InteractionGraph, table: SemanticTable | None, cfg: RunConfig, rng):
        b = cfg.backbone
        rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.graph = graph
        self.prop = Propagator(graph)
        self.table = None if cfg.ablation.no_semantic else table
        d_id = b.d_id if self.table is not None else b.d
        self.user_emb = ad.parameter(rng.normal(0.0, b.init_std, (graph.num_users, b.d)), name="user_emb")
        self.item_emb = ad.parameter(rng.normal(0.0, b.init_std, (graph.num_items, d_id)), name="item_emb")
        self.fusion = None
        if self.table is not None:
            kind = WeightedSumFusion if cfg.ablation.weighted_sum_fusion else ConcatFusion
            self.fusion = kind(d_id, self.table.dim, b.d, rng)

    def parameters(self) -> dict[str, ad.Tensor]:
        out = {"user_emb": self.user_emb, "item_emb": self.item_emb}
        if self.fusion is not None:
            out.update(self.fusion.parameters())
        return out

    def snapshot(self):
        return {k: p.value.copy() for k, p in self.parameters().items()}

    def load(self, values):
        params = self.parameters()
        for k, v in values.items():
            params[k].value = np.array(v, dtype=np.float64)

    def initial(self) -> tuple[ad.Tensor, ad.Tensor]:
        if self.fusion is None:
            return self.user_emb, self.item_emb
        return self.user_emb, self.fusion(self.item_emb, self.table)

    def forward(self) -> LayerStack:
        e_u, e_i = self.initial()
        return build_stack(self.prop, e_u, e_i, self.cfg.backbone.layers)

    def final_embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        z_u, z_i = aggregate_layers(self.forward())
        return z_u.value, z_i.value
