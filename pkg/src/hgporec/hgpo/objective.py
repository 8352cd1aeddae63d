"""Group-relative advantages, clipped surrogate, entropy, coordination loss and the HGPO objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .config import HgpoConfig
from .policy import ActionBatch, PolicyNetwork, StateBatch, action_log_prob, availability_masks


def group_mean_rewards(rewards, groups) -> dict:
    """Arithmetic mean of r_t per group present in the batch."""
    rewards = np.asarray(rewards, dtype=np.float64)
    groups = list(groups)
    out = {}
    for g in dict.fromkeys(groups):
        idx = [t for t, h in enumerate(groups) if h == g]
        out[g] = float(rewards[idx].mean())
    return out


def relative_advantage(rewards, group_means: dict, groups=None):
    """r_t - mean reward of the transition's group; scalars or aligned sequences."""
    if groups is None:
        return float(rewards) - float(group_means)
    return np.asarray(rewards, dtype=np.float64) - np.array([group_means[g] for g in groups])


def population_variance(values) -> float:
    v = np.asarray(list(values), dtype=np.float64)
    return float(v.var()) if v.size else 0.0


def harm_loss(group_means: dict, lambda_harm: float) -> float:
    return lambda_harm * population_variance(group_means.values())


def policy_loss(new_log_prob, old_log_prob, advantages, epsilon):
    """mean_t min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t), rho_t = exp(new - old)."""
    new = ad.constant(new_log_prob)
    old = np.asarray(old_log_prob, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    with np.errstate(over="ignore"):
        ratio = ad.exp(ad.sub(new, old))
    if not np.all(np.isfinite(ratio.value)):
        raise FloatingPointError("non-finite importance ratio")
    unclipped = ad.mul(ratio, adv)
    clipped = ad.mul(ad.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon), adv)
    return ad.mean(ad.minimum(unclipped, clipped))


def h_neg(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def h_temp(sigma) -> float:
    return 0.5 * math.log(2.0 * math.pi * math.e * float(sigma) ** 2)


def entropy_terms(logits: ad.Tensor | None, log_sigma: ad.Tensor | None) -> ad.Tensor:
    """Batch mean of H_neg (first-step softmax over the pool) + H_temp (Gaussian)."""
    parts = []
    if logits is not None:
        logp = ad.sub(logits, ad.expand_dims(ad.logsumexp(logits, axis=1), 1))
        parts.append(ad.scale(ad.sum_(ad.mul(ad.exp(logp), logp), axis=1), -1.0))
    if log_sigma is not None:
        parts.append(ad.add(log_sigma, 0.5 * math.log(2.0 * math.pi * math.e)))
    if not parts:
        return ad.constant(0.0)
    h = parts[0]
    for p in parts[1:]:
        h = ad.add(h, p)
    return ad.mean(h)


def hgpo_objective(l_policy, entropy, l_harm, c1, mode="bonus"):
    """Quantity to minimize: -L_policy -/+ c1 S + L_harm ("bonus" subtracts, "literal" adds)."""
    sign = -1.0 if mode == "bonus" else 1.0
    if all(isinstance(x, (int, float)) for x in (l_policy, entropy, l_harm)):
        return -l_policy + sign * c1 * entropy + l_harm
    return ad.add(ad.add(ad.scale(ad.constant(l_policy), -1.0), ad.scale(ad.constant(entropy), sign * c1)),
                  ad.constant(l_harm))


@dataclass
class HgpoBatchStats:
    group_means: dict
    advantages: np.ndarray
    group_variance: float
    components: dict = field(default_factory=dict)


@dataclass
class Transitions:
    """A frozen batch of (state, action, reward) with behaviour log-probs and group tags."""

    states: StateBatch
    actions: ActionBatch
    rewards: np.ndarray
    groups: list
    old_log_prob: np.ndarray
    select: str = "policy"
    tau_mode: str = "policy"

    def __post_init__(self):
        self.avail = availability_masks(self.states.pool_mask, self.actions.selected, self.actions.sel_mask)
        self.group_means = group_mean_rewards(self.rewards, self.groups)
        self.advantages = relative_advantage(self.rewards, self.group_means, self.groups)
        keys = list(self.group_means)
        self._codes = np.array([keys.index(g) for g in self.groups])
        self._keys = keys


def hgpo_loss(policy: PolicyNetwork, batch: Transitions, cfg: HgpoConfig):
    """Build L_HGPO on the tape for the current policy parameters.

    The coordination term needs R_g to depend on the policy.  Each group mean is
    expressed as the importance-weighted estimate R_g + mean_{t in g} rho_t A_t,
    which equals the batch mean at rho = 1 and carries the score-function
    gradient of the group's expected reward.
    """
    logits, mu, log_sigma = policy.forward(batch.states)
    new_lp = action_log_prob(logits, mu, log_sigma, batch.actions, batch.avail,
                             select=batch.select, tau_mode=batch.tau_mode)
    l_policy = policy_loss(new_lp, batch.old_log_prob, batch.advantages, cfg.epsilon)
    entropy = entropy_terms(logits if batch.select == "policy" else None,
                            log_sigma if batch.tau_mode == "policy" else None)

    ratio = ad.exp(ad.sub(new_lp, batch.old_log_prob))
    weighted = ad.mul(ratio, batch.advantages)
    G = len(batch._keys)
    counts = np.bincount(batch._codes, minlength=G).astype(np.float64)
    member = np.zeros((G, len(batch.rewards)))
    member[batch._codes, np.arange(len(batch.rewards))] = 1.0 / counts[batch._codes]
    base = np.array([batch.group_means[k] for k in batch._keys])
    means = ad.add(ad.matmul(member, ad.reshape(weighted, (-1, 1))), base[:, None])
    centred = ad.sub(means, ad.mean(means))
    l_harm = ad.scale(ad.mean(ad.square(centred)), cfg.lambda_harm)

    total = hgpo_objective(l_policy, entropy, l_harm, cfg.c1, cfg.entropy_mode)
    stats = HgpoBatchStats(
        dict(batch.group_means), batch.advantages, population_variance(batch.group_means.values()),
        {"L_policy": l_policy.item(), "S": entropy.item(), "L_harm": l_harm.item(), "L_hgpo": total.item()},
    )
    return total, stats
