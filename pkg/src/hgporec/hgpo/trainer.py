"""Interleaved training: one HGPO policy step and one recommender step per batch."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..backbone import aggregate_layers
from ..config import RunConfig
from ..evaluation import Diagnostics, EvalReport, full_rank_eval
from ..fusion import SemanticTable
from ..graph import DegreeGroups, InteractionGraph, PreparedData, assign_degree_groups, sample_candidate_pool
from ..model import RecModel
from ..objectives import bpr_loss, cosine_rows, info_nce_batch
from .objective import Transitions, hgpo_loss
from .policy import ActionBatch, PolicyNetwork, StateBatch, degree_feature, sample_actions
from .rewards import compute_rewards

log = logging.getLogger(__name__)
SIDES = ("user", "item")


class TrainingAborted(RuntimeError):
    def __init__(self, message, dump):
        super().__init__(message)
        self.dump = dump


class Streams:
    """Named, independent RNG substreams derived from one master seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._rngs = {}

    def __getitem__(self, name) -> np.random.Generator:
        if name not in self._rngs:
            self._rngs[name] = np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(name.encode())]))
        return self._rngs[name]


def sample_pools(graph: InteractionGraph, anchors, side, pool_size, rng):
    """Padded (A, C) candidate ids and validity mask."""
    pools = [sample_candidate_pool(graph, int(a), pool_size, rng, side=side) for a in anchors]
    width = max(len(p) for p in pools)
    ids = np.zeros((len(pools), width), dtype=np.int64)
    mask = np.zeros((len(pools), width), dtype=bool)
    for r, p in enumerate(pools):
        ids[r, :len(p)] = p
        mask[r, :len(p)] = True
    return ids, mask


def sample_bpr_negatives(graph: InteractionGraph, users, rng):
    """One uniformly drawn non-interacted item per user (rejection sampling)."""
    users = np.asarray(users, dtype=np.int64)
    out = rng.integers(graph.num_items, size=len(users))
    todo = np.arange(len(users))
    while len(todo):
        bad = [n for n in todo if _has_edge(graph.user_adjacency[users[n]], out[n])]
        if bad:
            out[bad] = rng.integers(graph.num_items, size=len(bad))
        todo = np.array(bad, dtype=np.int64)
    return out


def _has_edge(sorted_nbrs, j):
    pos = np.searchsorted(sorted_nbrs, j)
    return pos < len(sorted_nbrs) and sorted_nbrs[pos] == j


@dataclass
class AnchorBlock:
    """Anchors of one side with their pools and (after acting) their actions."""

    side: str
    anchors: np.ndarray
    pool_ids: np.ndarray
    pool_mask: np.ndarray
    states: StateBatch
    degrees: np.ndarray
    groups: list


class Trainer:
    def __init__(self, data: PreparedData, table: SemanticTable | None, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        self.data = data
        self.graph = data.train_graph
        self.streams = Streams(cfg.seed)
        self.model = RecModel(self.graph, table, cfg, self.streams["init.model"])
        self.opt_model = ad.Adam(self.model.parameters(), lr=cfg.optimizer.lr)
        h = cfg.hgpo
        self.use_policy = not cfg.ablation.no_hgpo
        self.select = "random" if (cfg.ablation.random_neg or cfg.ablation.no_hgpo) else "policy"
        self.tau_mode = "fixed" if (cfg.ablation.fixed_tau or cfg.ablation.no_hgpo) else "policy"
        self.policy = PolicyNetwork(cfg.backbone.d, h, self.streams["init.policy"])
        self.opt_policy = ad.Adam(self.policy.parameters(), lr=h.policy_lr)
        self.groups: dict[str, DegreeGroups] = {
            "user": assign_degree_groups(self.graph.user_degree, h.num_groups),
            "item": assign_degree_groups(self.graph.item_degree, h.num_groups),
        }
        self.pool_size = {
            "user": h.pool_size_for(self.graph.num_items),
            "item": h.pool_size_for(self.graph.num_users),
        }
        self.iteration = 0
        self.best_state = None
        self.epoch = 0

    # ------------------------------------------------------------ states
    def build_block(self, stack, side, anchors, rng) -> AnchorBlock:
        other = "item" if side == "user" else "user"
        k = self.cfg.backbone.k_positive
        ids, mask = sample_pools(self.graph, anchors, side, self.pool_size[side], rng)
        z0 = stack.layer(side, 0).value[anchors]
        zk = stack.layer(side, k).value[anchors]
        pool = stack.layer(other, k).value[ids]
        deg = self.graph.degree(side)[anchors]
        feat = degree_feature(deg, self.graph.degree(side).max())
        states = StateBatch(z0, zk, pool, mask, feat)
        groups = [f"{side}:{g}" for g in self.groups[side].assignment[anchors]]
        return AnchorBlock(side, np.asarray(anchors), ids, mask, states, deg, groups)

    def act(self, block: AnchorBlock, rng):
        h = self.cfg.hgpo
        logits, mu, log_sigma = self.policy.forward(block.states)
        m = min(h.num_negatives, block.pool_ids.shape[1])
        return sample_actions(logits.value, mu.value, log_sigma.value, m, rng, (h.tau_min, h.tau_max),
                              select=self.select, tau_mode=self.tau_mode, tau_fixed=self.cfg.contrastive.tau_fixed)

    def block_rewards(self, block: AnchorBlock, actions):
        st = block.states
        rows = np.arange(len(block.anchors))[:, None]
        negs = st.pool[rows, actions.selected]
        s0 = cosine_rows(st.anchor[:, None, :], negs)
        sk = cosine_rows(st.positive[:, None, :], negs)
        rb = compute_rewards(s0, sk, actions.tau, block.degrees, self.cfg.hgpo, mask=actions.sel_mask,
                             use_negatives=self.select == "policy", use_tau=self.tau_mode == "policy")
        return rb, s0

    # ------------------------------------------------------------ one step
    def train_iteration(self, batch_edges: np.ndarray) -> list[dict]:
        cfg, h = self.cfg, self.cfg.hgpo
        rng_pool, rng_act, rng_bpr = self.streams["pools"], self.streams["actions"], self.streams["bpr"]
        users, pos = batch_edges[:, 0], batch_edges[:, 1]

        stack = self.model.forward()
        z_u, z_i = aggregate_layers(stack)

        blocks, acts = [], []
        for side, anchors in (("user", np.unique(users)), ("item", np.unique(pos))):
            block = self.build_block(stack, side, anchors, rng_pool)
            blocks.append(block)
            acts.append(self.act(block, rng_act))

        records = []
        if self.use_policy:
            records.append(self.policy_step(blocks, acts))

        # recommender step
        k = cfg.backbone.k_positive
        struct_terms = []
        for block, actions in zip(blocks, acts):
            other = "item" if block.side == "user" else "user"
            A, M = actions.selected.shape
            neg_ids = block.pool_ids[np.arange(A)[:, None], actions.selected]
            negs = ad.reshape(ad.gather_rows(stack.layer(other, k), neg_ids.ravel()), (A, M, -1))
            anchor = ad.gather_rows(stack.layer(block.side, 0), block.anchors)
            positive = ad.gather_rows(stack.layer(block.side, k), block.anchors)
            per_anchor = info_nce_batch(anchor, positive, negs, actions.tau, actions.sel_mask)
            struct_terms.append(ad.sum_(per_anchor) if cfg.contrastive.reduction == "sum" else ad.mean(per_anchor))
        l_struct = ad.add(struct_terms[0], struct_terms[1])

        neg = sample_bpr_negatives(self.graph, users, rng_bpr)
        l_bpr = bpr_loss(ad.gather_rows(z_u, users), ad.gather_rows(z_i, pos), ad.gather_rows(z_i, neg))
        reg = ad.add(ad.sum_(ad.square(ad.gather_rows(self.model.user_emb, users))),
                     ad.sum_(ad.square(ad.gather_rows(self.model.item_emb, np.concatenate([pos, neg])))))
        reg = ad.scale(reg, cfg.optimizer.lambda_reg / len(users))
        total = ad.add(ad.add(l_bpr, ad.scale(l_struct, cfg.contrastive.lambda_cl)), reg)
        if not np.isfinite(total.value):
            raise TrainingAborted("non-finite recommender loss", {
                "iter": self.iteration, "L_bpr": l_bpr.item(), "L_struct": l_struct.item(), "reg": reg.item()})
        grads = ad.gradients(total, self.model.parameters())
        self.opt_model.step(grads)

        records.insert(0, {"type": "train", "iter": self.iteration, "epoch": self.epoch,
                           "L_bpr": l_bpr.item(), "L_struct": l_struct.item(), "L_total": total.item()})
        self.iteration += 1
        return records

    def transitions(self, blocks, acts) -> Transitions:
        states = _stack_states([b.states for b in blocks])
        actions = _stack_actions(acts, states.pool_mask.shape[1])
        rewards, groups = [], []
        for block, a in zip(blocks, acts):
            rb, _ = self.block_rewards(block, a)
            rewards.append(rb.total)
            groups.extend(block.groups)
        return Transitions(states, actions, np.concatenate(rewards), groups, actions.log_prob.copy(),
                           select=self.select, tau_mode=self.tau_mode)

    def policy_step(self, blocks, acts) -> dict:
        batch = self.transitions(blocks, acts)
        loss, stats = hgpo_loss(self.policy, batch, self.cfg.hgpo)
        if not np.isfinite(loss.value):
            raise TrainingAborted("non-finite HGPO loss", {"iter": self.iteration, **stats.components})
        grads = ad.gradients(loss, self.policy.parameters())
        self.opt_policy.step(grads)
        return self._policy_record(blocks, acts, batch, stats)

    def _policy_record(self, blocks, acts, batch, stats) -> dict:
        hard = false = easy = n_sel = 0
        hist, pool_hist = np.zeros(4), np.zeros(4)
        mean_tau, sizes = {}, {}
        for block, a in zip(blocks, acts):
            rb, s0 = self.block_rewards(block, a)
            m = a.sel_mask
            hard += int((rb.hard[m] > 0).sum())
            false += int((rb.false[m] < 0).sum())
            easy += int((rb.easy[m] < 0).sum())
            n_sel += int(m.sum())
            hist += np.bincount(np.digitize(s0[m], (0.2, 0.5, 0.8)), minlength=4)
            st = block.states
            s_pool = cosine_rows(st.anchor[:, None, :], st.pool)
            pool_hist += np.bincount(np.digitize(s_pool[st.pool_mask], (0.2, 0.5, 0.8)), minlength=4)
            for g in sorted(set(block.groups)):
                rows = [r for r, x in enumerate(block.groups) if x == g]
                mean_tau[g] = float(a.tau[rows].mean())
                sizes[g] = len(rows)
        return {"type": "policy", "iter": self.iteration, "epoch": self.epoch, **stats.components,
                "R_bar": {g: stats.group_means[g] for g in sorted(stats.group_means)},
                "group_reward_variance": stats.group_variance,
                "mean_tau": mean_tau, "group_sizes": sizes,
                "frac_hard": hard / n_sel, "frac_false": false / n_sel, "frac_easy": easy / n_sel,
                "sim_hist_counts": hist.astype(int).tolist(), "pool_hist_counts": pool_hist.astype(int).tolist()}

    # ------------------------------------------------------------ loops
    def batches(self):
        edges = np.asarray(self.graph.edges, dtype=np.int64)
        order = self.streams["shuffle"].permutation(len(edges))
        bs = self.cfg.optimizer.batch_size
        for lo in range(0, len(edges), bs):
            yield edges[order[lo:lo + bs]]

    def evaluate(self, edges, with_buckets=False) -> EvalReport:
        z_u, z_i = self.model.final_embeddings()
        kw = {"user_groups": self.groups["user"], "item_groups": self.groups["item"]} if with_buckets else {}
        return full_rank_eval(z_u, z_i, self.graph, edges, self.cfg.eval_ks, **kw)

    def fit(self, sink=None, epochs=None, restore_best=True) -> dict:
        """Train with early stopping on validation ``early_stopping.metric``.

        The best-scoring state is kept in ``self.best_state``; it is loaded back
        unless ``restore_best`` is False (call ``restore_best_state`` later).
        """
        es = self.cfg.early_stopping
        epochs = self.cfg.optimizer.epochs if epochs is None else epochs
        best, bad = -np.inf, 0
        self.best_state = None
        have_val = len(self.data.split.val_edges) > 0
        for epoch in range(epochs):
            self.epoch = epoch
            for batch in self.batches():
                for rec in self.train_iteration(batch):
                    if sink is not None:
                        sink(rec)
            if not have_val:
                continue
            score = self.evaluate(self.data.split.val_edges).metrics[es.metric]
            if sink is not None:
                sink({"type": "epoch", "epoch": epoch, "iter": self.iteration, f"val_{es.metric}": score})
            if score > best:
                best, bad = score, 0
                self.best_state = (self.model.snapshot(), self.policy.snapshot(), epoch)
            else:
                bad += 1
                if bad >= es.patience:
                    log.info("early stop at epoch %d (best %.5f)", epoch, best)
                    break
        if restore_best:
            self.restore_best_state()
        return {"best_val": None if self.best_state is None else float(best),
                "best_epoch": None if self.best_state is None else self.best_state[2], "epochs_run": self.epoch + 1}

    def restore_best_state(self):
        if self.best_state is not None:
            self.model.load(self.best_state[0])
            self.policy.load(self.best_state[1])

    # ------------------------------------------------------------ diagnostics
    def diagnostics(self, seed_name="diagnostics") -> Diagnostics:
        """Act on every node of both sides at the current state; compare with uniform selection."""
        rng = self.streams[seed_name]
        stack = self.model.forward()
        tau_by_bucket = {}
        pol_hist, rnd_hist = np.zeros(4), np.zeros(4)
        for side in SIDES:
            n = self.graph.num_users if side == "user" else self.graph.num_items
            anchors = np.flatnonzero(self.graph.degree(side) > 0)
            if len(anchors) == 0 or n == 0:
                continue
            block = self.build_block(stack, side, anchors, rng)
            acts = self.act(block, rng)
            _, s0 = self.block_rewards(block, acts)
            pol_hist += np.bincount(np.digitize(s0[acts.sel_mask], (0.2, 0.5, 0.8)), minlength=4)
            uni = sample_actions(np.where(block.pool_mask, 0.0, -1e30), acts.mu, acts.log_sigma,
                                 acts.selected.shape[1], rng, (0.0, 1.0), select="random", tau_mode="fixed")
            _, s0r = self.block_rewards(block, uni)
            rnd_hist += np.bincount(np.digitize(s0r[uni.sel_mask], (0.2, 0.5, 0.8)), minlength=4)
            assign = self.groups[side].assignment[anchors]
            tau_by_bucket[side] = {str(g): float(acts.tau[assign == g].mean())
                                   for g in range(self.groups[side].group_count) if np.any(assign == g)}
        return Diagnostics(tau_by_bucket, pol_hist / pol_hist.sum(), rnd_hist / rnd_hist.sum())


def _stack_states(parts: list[StateBatch]) -> StateBatch:
    width = max(p.pool.shape[1] for p in parts)

    def pad(x, fill=0):
        extra = width - x.shape[1]
        if extra == 0:
            return x
        shape = (x.shape[0], extra) + x.shape[2:]
        return np.concatenate([x, np.full(shape, fill, dtype=x.dtype)], axis=1)

    return StateBatch(np.concatenate([p.anchor for p in parts]), np.concatenate([p.positive for p in parts]),
                      np.concatenate([pad(p.pool) for p in parts]),
                      np.concatenate([pad(p.pool_mask, False) for p in parts]),
                      np.concatenate([p.degree_feature for p in parts]))


def _stack_actions(parts, width):

    m = max(p.selected.shape[1] for p in parts)

    def pad(x, fill):
        extra = m - x.shape[1]
        if extra == 0:
            return x
        return np.concatenate([x, np.full((x.shape[0], extra), fill, dtype=x.dtype)], axis=1)

    return ActionBatch(
        np.concatenate([pad(p.selected, 0) for p in parts]),
        np.concatenate([pad(p.sel_mask, False) for p in parts]),
        np.concatenate([pad(p.step_log_probs, 0.0) for p in parts]),
        *(np.concatenate([getattr(p, f) for p in parts]) for f in ("tau", "tau_raw", "mu", "log_sigma", "log_prob")),
    )
