"""Policy network over the hybrid action (negative subset + temperature) and its sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .config import HgpoConfig

_MASKED = -1e30


@dataclass
class PolicyState:
    anchor: np.ndarray  # (d,) layer-0 view of the anchor
    positive: np.ndarray  # (d,) positive view
    pool: np.ndarray  # (C, d) candidate views
    degree_feature: float  # ln(1 + d) / ln(1 + d_max)


def degree_feature(degree, max_degree):
    return np.log1p(np.asarray(degree, dtype=np.float64)) / math.log1p(max(int(max_degree), 1))


@dataclass
class StateBatch:
    """A padded batch of states; ``pool_mask`` is False on padding slots."""

    anchor: np.ndarray  # (A, d)
    positive: np.ndarray  # (A, d)
    pool: np.ndarray  # (A, C, d)
    pool_mask: np.ndarray  # (A, C) bool
    degree_feature: np.ndarray  # (A,)

    def __post_init__(self):
        for name in ("anchor", "positive", "pool", "degree_feature"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in state field {name!r}")
        if np.any(self.pool_mask.sum(axis=1) < 1):
            raise ValueError("every state needs a non-empty candidate pool")

    @classmethod
    def from_states(cls, states: list[PolicyState]) -> StateBatch:
        c = max(len(s.pool) for s in states)
        d = len(states[0].anchor)
        pool = np.zeros((len(states), c, d))
        mask = np.zeros((len(states), c), dtype=bool)
        for a, s in enumerate(states):
            pool[a, :len(s.pool)] = s.pool
            mask[a, :len(s.pool)] = True
        return cls(np.stack([s.anchor for s in states]), np.stack([s.positive for s in states]),
                   pool, mask, np.array([s.degree_feature for s in states], dtype=np.float64))

    def __len__(self):
        return len(self.anchor)

    def subset(self, rows) -> StateBatch:
        return StateBatch(self.anchor[rows], self.positive[rows], self.pool[rows],
                          self.pool_mask[rows], self.degree_feature[rows])


def _unit(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def state_features(batch: StateBatch) -> tuple[np.ndarray, np.ndarray]:
    """Scoring-head rows (A*C, 3d+3) and temperature-head rows (A, 3d+1).

    Views enter unit-normalized.  Each candidate row also carries its cosine to
    the anchor and to the positive, the quantities the reward thresholds act on.
    """
    a, p, n = _unit(batch.anchor), _unit(batch.positive), _unit(batch.pool)
    A, C, d = n.shape
    s0 = (a[:, None, :] * n).sum(-1)
    sk = (p[:, None, :] * n).sum(-1)
    deg = np.broadcast_to(batch.degree_feature[:, None, None], (A, C, 1))
    x_score = np.concatenate([np.broadcast_to(a[:, None, :], (A, C, d)), np.broadcast_to(p[:, None, :], (A, C, d)),
                              n, deg, s0[..., None], sk[..., None]], axis=-1).reshape(A * C, 3 * d + 3)
    m = batch.pool_mask[..., None]
    pooled = (n * m).sum(1) / np.maximum(m.sum(1), 1)
    x_temp = np.concatenate([a, p, pooled, batch.degree_feature[:, None]], axis=1)
    return x_score, x_temp


def _mlp_params(rng, prefix, n_in, hidden, n_out, out_std):
    def init(a, b):
        return rng.normal(0.0, math.sqrt(1.0 / a), size=(a, b))

    return {
        f"{prefix}.w1": init(n_in, hidden), f"{prefix}.b1": np.zeros(hidden),
        f"{prefix}.w2": init(hidden, hidden), f"{prefix}.b2": np.zeros(hidden),
        f"{prefix}.w3": rng.normal(0.0, out_std, size=(hidden, n_out)), f"{prefix}.b3": np.zeros(n_out),
    }


class PolicyNetwork:
    """Two tanh MLP heads (width ``hidden``, two hidden layers each).

    The scoring head is shared across candidates, so the logits are
    permutation-equivariant in the pool.  The temperature head emits a squashed
    mean in [tau_min, tau_max] and a squashed log-std in [ln sigma_min, ln sigma_max].
    """

    def __init__(self, dim: int, cfg: HgpoConfig, rng):
        self.cfg = cfg
        rng = np.random.default_rng(rng)
        values = {}
        values.update(_mlp_params(rng, "score", 3 * dim + 3, cfg.hidden, 1, 0.01))
        values.update(_mlp_params(rng, "temp", 3 * dim + 1, cfg.hidden, 2, 0.0))
        lo, hi = math.log(cfg.sigma_min), math.log(cfg.sigma_max)
        frac = (math.log(cfg.sigma_init) - lo) / (hi - lo)
        values["temp.b3"][1] = math.log(frac / (1.0 - frac))
        self.params = {k: ad.parameter(v, name=k) for k, v in values.items()}

    def parameters(self) -> dict[str, ad.Tensor]:
        return self.params

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            self.params[k].value = np.array(v, dtype=np.float64)

    def _head(self, prefix, x, values=None):
        get = (lambda k: ad.constant(values[k])) if values is not None else (lambda k: self.params[k])
        h = ad.tanh(ad.add(ad.matmul(x, get(f"{prefix}.w1")), get(f"{prefix}.b1")))
        h = ad.tanh(ad.add(ad.matmul(h, get(f"{prefix}.w2")), get(f"{prefix}.b2")))
        return ad.add(ad.matmul(h, get(f"{prefix}.w3")), get(f"{prefix}.b3"))

    def forward(self, batch: StateBatch, values=None):
        """(masked logits (A, C), mu (A,), log_sigma (A,)) as tape tensors.

        ``values`` evaluates a frozen parameter snapshot instead of the live
        parameters (nothing is recorded for backward).
        """
        x_score, x_temp = state_features(batch)
        A, C = batch.pool_mask.shape
        logits = ad.reshape(self._head("score", ad.constant(x_score), values), (A, C))
        logits = ad.add(logits, np.where(batch.pool_mask, 0.0, _MASKED))
        out = self._head("temp", ad.constant(x_temp), values)
        cfg = self.cfg
        mu_raw = ad.reshape(ad.take_last(out, np.zeros((A, 1), dtype=np.int64)), (A,))
        ls_raw = ad.reshape(ad.take_last(out, np.ones((A, 1), dtype=np.int64)), (A,))
        mu = ad.add(ad.scale(ad.sigmoid(mu_raw), cfg.tau_max - cfg.tau_min), cfg.tau_min)
        lo, hi = math.log(cfg.sigma_min), math.log(cfg.sigma_max)
        log_sigma = ad.add(ad.scale(ad.sigmoid(ls_raw), hi - lo), lo)
        return logits, mu, log_sigma


def policy_forward(policy: PolicyNetwork, state: PolicyState | StateBatch):
    batch = state if isinstance(state, StateBatch) else StateBatch.from_states([state])
    logits, mu, log_sigma = policy.forward(batch)
    return logits.value, mu.value, log_sigma.value


# ---------------------------------------------------------------- sampling

@dataclass
class PolicyAction:
    selected: np.ndarray  # (M,) pool positions in selection order
    step_log_probs: np.ndarray  # (M,)
    tau: float  # clamped temperature used by the loss
    tau_raw: float  # unclamped Gaussian draw
    mu: float
    log_sigma: float
    log_prob: float  # selection + unclamped Gaussian density


@dataclass
class ActionBatch:
    selected: np.ndarray  # (A, M) int, 0 on padding
    sel_mask: np.ndarray  # (A, M) bool
    step_log_probs: np.ndarray  # (A, M)
    tau: np.ndarray
    tau_raw: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray
    log_prob: np.ndarray  # (A,) total over the policy-controlled parts

    def row(self, a) -> PolicyAction:
        m = self.sel_mask[a]
        return PolicyAction(self.selected[a][m], self.step_log_probs[a][m], float(self.tau[a]),
                            float(self.tau_raw[a]), float(self.mu[a]), float(self.log_sigma[a]),
                            float(self.log_prob[a]))


def _log_softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return x - (np.log(np.exp(x - m).sum(axis=axis, keepdims=True)) + m)


def sample_actions(logits, mu, log_sigma, num_negatives, rng, tau_range, *,
                   select="policy", tau_mode="policy", tau_fixed=0.2) -> ActionBatch:
    """Sample M distinct candidates sequentially (Gumbel top-k) and a temperature.

    Gumbel top-k over the logits has exactly the law of drawing one candidate
    at a time from the softmax renormalized over those not yet taken.  With
    ``select="random"`` the logits are ignored and the choice is uniform; with
    ``tau_mode="fixed"`` the temperature is ``tau_fixed``.  Only the parts the
    policy controls enter ``log_prob``.
    """
    rng = np.random.default_rng(rng)
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    A, C = logits.shape
    valid = logits > _MASKED / 2
    counts = valid.sum(axis=1)
    if num_negatives > C:
        raise ValueError(f"cannot select {num_negatives} negatives from a pool of {C}")
    m = num_negatives
    base = logits if select == "policy" else np.where(valid, 0.0, _MASKED)
    keys = np.where(valid, base + rng.gumbel(size=(A, C)), -np.inf)
    order = np.argsort(-keys, axis=1, kind="stable")[:, :m]
    sel_mask = np.arange(m)[None, :] < np.minimum(counts, m)[:, None]
    selected = np.where(sel_mask, order, 0)

    step_lp = np.zeros((A, m))
    avail = valid.copy()
    rows = np.arange(A)
    for j in range(m):
        with np.errstate(invalid="ignore"):
            lsm = _log_softmax(np.where(avail, base, -np.inf))
        pick = selected[:, j]
        step_lp[:, j] = np.where(sel_mask[:, j], lsm[rows, pick], 0.0)
        avail[rows[sel_mask[:, j]], pick[sel_mask[:, j]]] = False

    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    log_sigma = np.atleast_1d(np.asarray(log_sigma, dtype=np.float64))
    lo, hi = tau_range
    if tau_mode == "policy":
        sigma = np.exp(log_sigma)
        tau_raw = mu + sigma * rng.standard_normal(A)
        tau = np.clip(tau_raw, lo, hi)
        gauss = -0.5 * ((tau_raw - mu) / sigma) ** 2 - log_sigma - 0.5 * math.log(2 * math.pi)
    else:
        tau_raw = np.full(A, float(tau_fixed))
        tau = tau_raw.copy()
        gauss = np.zeros(A)
    sel_lp = step_lp.sum(axis=1) if select == "policy" else np.zeros(A)
    return ActionBatch(selected, sel_mask, step_lp, tau, tau_raw, mu, log_sigma, sel_lp + gauss)


def sample_action(logits, mu, log_sigma, num_negatives, seed, tau_range=(0.05, 1.0)) -> PolicyAction:
    logits = np.asarray(logits, dtype=np.float64).ravel()
    if num_negatives > len(logits):
        raise ValueError(f"cannot select {num_negatives} negatives from a pool of {len(logits)}")
    batch = sample_actions(logits[None, :], [mu], [log_sigma], num_negatives, seed, tau_range)
    return batch.row(0)


# ---------------------------------------------------------------- differentiable log-probs

def availability_masks(pool_mask: np.ndarray, selected: np.ndarray, sel_mask: np.ndarray) -> np.ndarray:
    """(A, M, C): candidates still available at each selection step."""
    A, M = selected.shape
    avail = np.repeat(pool_mask[:, None, :], M, axis=1)
    rows = np.arange(A)
    for j in range(1, M):
        prev = selected[:, j - 1]
        live = sel_mask[:, j - 1]
        avail[rows[live], j:, prev[live]] = False
    return avail


def selection_log_prob(logits: ad.Tensor, selected, sel_mask, avail) -> ad.Tensor:
    """Sum over steps of log softmax(remaining logits)[chosen]; shape (A,)."""
    A, M, C = avail.shape
    stacked = ad.add(ad.expand_dims(logits, 1), np.where(avail, 0.0, _MASKED))
    lse = ad.logsumexp(stacked, axis=2)
    chosen = ad.take_last(logits, selected)
    steps = ad.mul(ad.sub(chosen, lse), sel_mask.astype(np.float64))
    return ad.sum_(steps, axis=1)


def action_log_prob(logits, mu, log_sigma, actions: ActionBatch, avail, *, select="policy", tau_mode="policy"):
    parts = []
    if select == "policy":
        parts.append(selection_log_prob(logits, actions.selected, actions.sel_mask, avail))
    if tau_mode == "policy":
        parts.append(ad.gaussian_log_density(actions.tau_raw, mu, log_sigma))
    if not parts:
        return ad.constant(np.zeros(len(actions.tau)))
    out = parts[0]
    for p in parts[1:]:
        out = ad.add(out, p)
    return out
