"""Semantic item vectors: loading, synthetic stand-ins, and fusion into initial item rows."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import DataError

log = logging.getLogger(__name__)


@dataclass
class SemanticTable:
    dim: int
    vectors: np.ndarray  # (num_items, dim); zero rows where uncovered
    mask: np.ndarray  # bool, True where a vector was supplied

    @property
    def coverage(self) -> float:
        return float(self.mask.mean()) if len(self.mask) else 0.0

    def vector(self, item: int) -> np.ndarray | None:
        return self.vectors[item] if self.mask[item] else None


def load_semantic_table(path, item_ids) -> SemanticTable:
    """Read ``dim=<d>`` header then ``raw_item_id<TAB>f1,...,fd`` rows.

    ``item_ids`` is the dense-index-ordered list of raw ids (or a raw->index
    mapping).  Unknown ids are logged and skipped.
    """
    index = item_ids if isinstance(item_ids, dict) else {raw: n for n, raw in enumerate(item_ids)}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise DataError(f"{path}:1: expected 'dim=<d>' header, got {header!r}")
        try:
            dim = int(header[4:])
        except ValueError:
            raise DataError(f"{path}:1: bad dimension {header[4:]!r}") from None
        vectors = np.zeros((len(index), dim))
        mask = np.zeros(len(index), dtype=bool)
        skipped = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            raw, sep, body = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected raw_item_id<TAB>values")
            try:
                vals = np.array([float(x) for x in body.split(",")])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if vals.shape != (dim,):
                raise DataError(f"{path}:{lineno}: expected {dim} values, got {vals.size}")
            if not np.all(np.isfinite(vals)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            n = index.get(raw)
            if n is None:
                skipped += 1
                continue
            vectors[n] = vals
            mask[n] = True
    if skipped:
        log.warning("skipped %d semantic rows for unknown items", skipped)
    table = SemanticTable(dim, vectors, mask)
    log.info("semantic coverage %.4f (%d/%d)", table.coverage, mask.sum(), len(mask))
    return table


def write_semantic_file(path, table: SemanticTable, item_ids):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={table.dim}\n")
        for n, raw in enumerate(item_ids):
            if table.mask[n]:
                fh.write(raw + "\t" + ",".join(f"{v:.17g}" for v in table.vectors[n]) + "\n")


def synth_semantic_ids(num_items, dim, seed, cluster_count, noise=0.1) -> SemanticTable:
    """Round-robin clustered unit vectors: normalized (unit centroid + N(0, noise^2))."""
    if cluster_count < 1:
        raise ValueError("cluster_count must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = rng.standard_normal((cluster_count, dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    cluster = np.arange(num_items) % cluster_count
    v = centroids[cluster] + noise * rng.standard_normal((num_items, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return SemanticTable(dim, v, np.ones(num_items, dtype=bool))


def _xavier(rng, n_in, n_out):
    return rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))


class ConcatFusion:
    """e_i = [e_ID || e_sem] W + b."""

    def __init__(self, d_id, d_sem, d, rng):
        self.weight = ad.parameter(_xavier(rng, d_id + d_sem, d), name="fusion.weight")
        self.bias = ad.parameter(np.zeros(d), name="fusion.bias")

    def parameters(self):
        return {"fusion.weight": self.weight, "fusion.bias": self.bias}

    def __call__(self, e_id: ad.Tensor, table: SemanticTable) -> ad.Tensor:
        return fuse_item_initial(e_id, table, self)


class WeightedSumFusion:
    """e_i = a e_ID + (1 - a)(e_sem P + c); requires d_id == d."""

    def __init__(self, d_id, d_sem, d, rng, id_weight=0.5):
        if d_id != d:
            raise ValueError("weighted-sum fusion needs d_id == d")
        self.id_weight = id_weight
        self.proj = ad.parameter(_xavier(rng, d_sem, d), name="fusion.proj")
        self.bias = ad.parameter(np.zeros(d), name="fusion.bias")

    def parameters(self):
        return {"fusion.proj": self.proj, "fusion.bias": self.bias}

    def __call__(self, e_id: ad.Tensor, table: SemanticTable) -> ad.Tensor:
        sem = ad.add(ad.matmul(ad.constant(table.vectors), self.proj), self.bias)
        return ad.add(ad.scale(e_id, self.id_weight), ad.scale(sem, 1.0 - self.id_weight))


def fuse_item_initial(e_id: ad.Tensor, table: SemanticTable, fusion: ConcatFusion) -> ad.Tensor:
    if e_id.shape[0] != table.vectors.shape[0]:
        raise ad.ShapeError(f"fuse_item_initial: {e_id.shape[0]} id rows vs {table.vectors.shape[0]} semantic rows")
    # uncovered rows of table.vectors are already zero
    x = ad.concat([e_id, ad.constant(table.vectors)], axis=1)
    return ad.add(ad.matmul(x, fusion.weight), fusion.bias)
