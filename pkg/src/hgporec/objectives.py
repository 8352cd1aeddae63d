"""Structural InfoNCE with per-anchor temperature and selected negatives, plus BPR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backbone import LayerStack

_MASKED = -1e30


def positive_view(stack: LayerStack, k: int = 1, side: str = "user") -> ad.Tensor:
    if not 1 <= k <= stack.depth:
        raise ValueError(f"positive view layer k={k} outside [1, {stack.depth}]")
    return stack.layer(side, k)


def cosine(a, b) -> float:
    """Cosine similarity with the zero-norm convention sim = 0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine along the last axis with broadcasting; zero vectors give 0."""
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    a = np.divide(a, na, out=np.zeros_like(a), where=na > 0)
    b = np.divide(b, nb, out=np.zeros_like(b), where=nb > 0)
    return (a * b).sum(axis=-1)


def info_nce_from_sims(s_pos: float, s_neg, tau: float) -> float:
    """-ln[e^{s+/t} / (e^{s+/t} + sum_n e^{s_n/t})] evaluated in log space."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = np.concatenate([[s_pos], np.asarray(s_neg, dtype=np.float64).ravel()]) / tau
    return float(np.logaddexp.reduce(logits) - logits[0])


@dataclass
class ContrastivePair:
    anchor: np.ndarray | ad.Tensor  # (d,) layer-0 view
    positive: np.ndarray | ad.Tensor  # (d,) layer-k view
    negatives: np.ndarray | ad.Tensor  # (M, d)
    tau: float


def info_nce(pair: ContrastivePair) -> ad.Tensor:
    """Single-anchor loss; a thin wrapper over :func:`info_nce_batch`."""
    a = ad.reshape(ad.constant(pair.anchor), (1, -1))
    p = ad.reshape(ad.constant(pair.positive), (1, -1))
    negs = ad.constant(pair.negatives)
    negs = ad.reshape(negs, (1, negs.shape[0], a.shape[1])) if negs.value.size else None
    return ad.sum_(info_nce_batch(a, p, negs, np.array([pair.tau])))


def info_nce_batch(anchor: ad.Tensor, positive: ad.Tensor, negatives: ad.Tensor | None, tau,
                   neg_mask: np.ndarray | None = None) -> ad.Tensor:
    """Per-anchor InfoNCE losses, shape (A,).

    anchor, positive: (A, d); negatives: (A, M, d) or None; tau: (A,) constant
    temperatures; neg_mask: (A, M) bool, False marks padding slots.
    """
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise ValueError("temperature must be positive")
    a = ad.l2_normalize_rows(anchor)
    s_pos = ad.dot(a, ad.l2_normalize_rows(positive))
    if negatives is None or negatives.shape[1] == 0:
        return ad.scale(s_pos, 0.0)
    if negatives.value.ndim != 3 or negatives.shape[0] != anchor.shape[0]:
        raise ad.ShapeError(f"info_nce_batch: negatives {negatives.shape} vs anchors {anchor.shape}")
    n = ad.l2_normalize_rows(negatives)
    s_neg = ad.sum_(ad.mul(ad.expand_dims(a, 1), n), axis=-1)
    logits = ad.div(ad.concat([ad.expand_dims(s_pos, 1), s_neg], axis=1), tau[:, None])
    if neg_mask is not None:
        pad = np.concatenate([np.zeros((len(tau), 1)), np.where(neg_mask, 0.0, _MASKED)], axis=1)
        logits = ad.add(logits, pad)
    first = ad.take_last(logits, np.zeros((len(tau), 1), dtype=np.int64))
    return ad.sub(ad.logsumexp(logits, axis=1), ad.reshape(first, (len(tau),)))


def bpr_loss(z_u: ad.Tensor, z_pos: ad.Tensor, z_neg: ad.Tensor) -> ad.Tensor:
    """mean(-ln sigmoid(<u, i+> - <u, i->))."""
    diff = ad.sub(ad.dot(z_u, z_pos), ad.dot(z_u, z_neg))
    return ad.scale(ad.mean(ad.log_sigmoid(diff)), -1.0)
