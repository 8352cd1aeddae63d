"""All-ranking Top-K evaluation, degree-bucket breakdowns and policy diagnostics."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .graph import DegreeGroups, InteractionGraph

SIM_BINS = (0.2, 0.5, 0.8)
SIM_BIN_LABELS = ("<0.2", "0.2-0.5", "0.5-0.8", ">=0.8")


def recall_at_k(ranked, relevant, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(relevant)
    return len(relevant.intersection(list(ranked)[:k])) / len(relevant)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    dcg = sum(1.0 / math.log2(r + 2) for r, item in enumerate(list(ranked)[:k]) if item in relevant)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(len(relevant), k)))
    return dcg / idcg if idcg > 0 else 0.0


def rank_items(z_user: np.ndarray, z_item: np.ndarray, users, exclude: list[np.ndarray], topn: int) -> np.ndarray:
    """Top-``topn`` item indices per user by score; ties go to the lower item index."""
    scores = z_user[users] @ z_item.T
    for row, u in enumerate(users):
        scores[row, exclude[u]] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :topn]


def _relevant_by_user(edges):
    rel = defaultdict(set)
    for u, i in edges:
        rel[u].add(i)
    return rel


@dataclass
class EvalReport:
    metrics: dict
    user_bucket_ndcg: dict = field(default_factory=dict)
    item_bucket_ndcg: dict = field(default_factory=dict)
    bucket_variance: dict = field(default_factory=dict)
    num_users: int = 0

    def to_dict(self):
        return {"metrics": self.metrics, "user_bucket_ndcg@20": self.user_bucket_ndcg,
                "item_bucket_ndcg@20": self.item_bucket_ndcg, "bucket_variance": self.bucket_variance,
                "num_users": self.num_users}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'metric':<14}{'value':>12}"]
        for k in sorted(self.metrics):
            lines.append(f"{k:<14}{self.metrics[k]:>12.6f}")
        for title, table in (("user bucket", self.user_bucket_ndcg), ("item bucket", self.item_bucket_ndcg)):
            for b in sorted(table, key=int):
                lines.append(f"{title + ' ' + str(b):<14}{table[b]:>12.6f}")
        return "\n".join(lines) + "\n"


def per_user_metrics(z_user, z_item, train: InteractionGraph, eval_edges, ks=(10, 20)):
    """{user: {metric: value}} for users with at least one held-out item."""
    rel = _relevant_by_user(eval_edges)
    users = np.array(sorted(rel), dtype=np.int64)
    if len(users) == 0:
        raise ValueError("no evaluation users")
    top = rank_items(z_user, z_item, users, train.user_adjacency, max(ks))
    out = {}
    for row, u in enumerate(users):
        ranked = top[row].tolist()
        out[int(u)] = {f"{m}@{k}": f(ranked, rel[u], k)
                       for k in ks for m, f in (("recall", recall_at_k), ("ndcg", ndcg_at_k))}
    return out, top, users


def full_rank_eval(z_user, z_item, train: InteractionGraph, eval_edges, ks=(10, 20),
                   user_groups: DegreeGroups | None = None, item_groups: DegreeGroups | None = None) -> EvalReport:
    z_user = np.asarray(z_user, dtype=np.float64)
    z_item = np.asarray(z_item, dtype=np.float64)
    per_user, top, users = per_user_metrics(z_user, z_item, train, eval_edges, ks)
    names = sorted(next(iter(per_user.values())))
    metrics = {n: float(np.mean([per_user[u][n] for u in sorted(per_user)])) for n in names}
    report = EvalReport(metrics, num_users=len(per_user))
    if user_groups is not None and "ndcg@20" in names:
        vals = {u: m["ndcg@20"] for u, m in per_user.items()}
        report.user_bucket_ndcg = degree_bucket_report(vals, user_groups)
        report.bucket_variance["user"] = population_variance_of(report.user_bucket_ndcg)
    if item_groups is not None and 20 in ks:
        report.item_bucket_ndcg = item_bucket_ndcg(top, users, eval_edges, item_groups)
        report.bucket_variance["item"] = population_variance_of(report.item_bucket_ndcg)
    return report


def item_bucket_ndcg(top, users, eval_edges, item_groups: DegreeGroups, k=20) -> dict:
    """Per item bucket: mean user ndcg@k with relevance restricted to that bucket's items."""
    rel = _relevant_by_user(eval_edges)
    out = {}
    for g in range(item_groups.group_count):
        vals = []
        for row, u in enumerate(users):
            mine = {i for i in rel[u] if item_groups.assignment[i] == g}
            if mine:
                vals.append(ndcg_at_k(top[row].tolist(), mine, k))
        if vals:
            out[str(g)] = float(np.mean(vals))
    return out


def degree_bucket_report(values: dict, groups: DegreeGroups) -> dict:
    """Mean of per-node values within each populated degree bucket."""
    acc = defaultdict(list)
    for node in sorted(values):
        acc[int(groups.assignment[node])].append(values[node])
    return {str(g): float(np.mean(v)) for g, v in sorted(acc.items())}


def population_variance_of(table: dict) -> float:
    vals = np.array(list(table.values()), dtype=np.float64)
    return float(vals.var()) if vals.size else 0.0


def popularity_scores(train: InteractionGraph):
    """(user, item) embeddings whose dot product ranks items by train degree."""
    return np.ones((train.num_users, 1)), train.item_degree.astype(np.float64)[:, None]


# ---------------------------------------------------------------- diagnostics

def similarity_histogram(sims, mask=None) -> np.ndarray:
    """Fractions of similarities in [<0.2, 0.2-0.5, 0.5-0.8, >=0.8]."""
    s = np.asarray(sims, dtype=np.float64)
    if mask is not None:
        s = s[np.asarray(mask, dtype=bool)]
    s = s.ravel()
    if s.size == 0:
        return np.zeros(4)
    counts = np.bincount(np.digitize(s, SIM_BINS), minlength=4).astype(np.float64)
    return counts / counts.sum()


@dataclass
class Diagnostics:
    tau_by_bucket: dict  # side -> {bucket: mean selected tau}
    policy_histogram: np.ndarray
    random_histogram: np.ndarray
    reward_variance_trace: list = field(default_factory=list)

    def to_dict(self):
        return {"tau_by_bucket": self.tau_by_bucket,
                "policy_histogram": dict(zip(SIM_BIN_LABELS, map(float, self.policy_histogram))),
                "random_histogram": dict(zip(SIM_BIN_LABELS, map(float, self.random_histogram))),
                "reward_variance_trace": self.reward_variance_trace}

    def write_csv(self, directory):
        with open(f"{directory}/tau_by_degree.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["side", "bucket", "mean_tau"])
            for side, table in sorted(self.tau_by_bucket.items()):
                for b, v in sorted(table.items(), key=lambda kv: int(kv[0])):
                    w.writerow([side, b, f"{v:.9g}"])
        with open(f"{directory}/similarity_histogram.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "policy", "random"])
            for label, p, r in zip(SIM_BIN_LABELS, self.policy_histogram, self.random_histogram):
                w.writerow([label, f"{p:.9g}", f"{r:.9g}"])


def diagnostics_report(records: list[dict]) -> dict:
    """Summaries from a stats stream: mean tau per group and selection histogram over the run."""
    tau_sum, tau_n = defaultdict(float), defaultdict(int)
    hist = np.zeros(4)
    variances = []
    for rec in records:
        if rec.get("type") != "policy":
            continue
        for g, v in rec["mean_tau"].items():
            tau_sum[g] += v * rec["group_sizes"][g]
            tau_n[g] += rec["group_sizes"][g]
        hist += np.array(rec["sim_hist_counts"], dtype=np.float64)
        variances.append(rec["group_reward_variance"])
    total = hist.sum()
    return {
        "mean_tau_by_group": {g: tau_sum[g] / tau_n[g] for g in sorted(tau_sum)},
        "selection_histogram": dict(zip(SIM_BIN_LABELS, (hist / total if total else hist).tolist())),
        "mean_group_reward_variance": float(np.mean(variances)) if variances else 0.0,
    }
