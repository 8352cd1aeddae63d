"""Rule-based rewards for selected negatives and the degree-adaptive temperature reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import HgpoConfig


@dataclass
class RewardBreakdown:
    """Per-negative components (shape (..., M)) and per-transition totals (shape (...))."""

    hard: np.ndarray
    false: np.ndarray
    easy: np.ndarray
    r_neg: np.ndarray
    r_tau: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.r_neg + self.r_tau


def reward_negatives(sim_anchor, sim_positive, cfg: HgpoConfig, mask=None):
    """Return (R_hard, R_false, R_easy) elementwise over negatives.

    ``sim_anchor`` is sim(z^(0), n), ``sim_positive`` is sim(z^(k), n).  The
    false-negative rule is first-match: the anchor branch is tested before the
    positive branch.  ``mask`` zeroes padded slots.
    """
    s0 = np.asarray(sim_anchor, dtype=np.float64)
    sk = np.asarray(sim_positive, dtype=np.float64)
    hard = np.where((s0 > cfg.theta_easy) & (s0 < cfg.theta_fn) & (sk < cfg.theta_fp), cfg.w1, 0.0)
    false = np.where(s0 >= cfg.theta_fn, -cfg.w2, np.where(sk >= cfg.theta_fp, -cfg.w3, 0.0))
    easy = np.where(s0 <= cfg.theta_easy_low, -cfg.w4, 0.0)
    if mask is not None:
        hard, false, easy = hard * mask, false * mask, easy * mask
    return hard, false, easy


def t_ideal(degree):
    """1 / (1 + ln(1 + d))."""
    return 1.0 / (1.0 + np.log1p(np.asarray(degree, dtype=np.float64)))


def reward_temperature(tau, degree, w5):
    return -w5 * np.abs(np.asarray(tau, dtype=np.float64) - t_ideal(degree))


def compute_rewards(sim_anchor, sim_positive, tau, degree, cfg: HgpoConfig, mask=None,
                    use_negatives=True, use_tau=True) -> RewardBreakdown:
    """Per-transition reward r_t = sum_n (R_hard + R_false + R_easy) + R_tau.

    ``use_negatives`` / ``use_tau`` drop a component from r_t when the policy
    does not control that part of the action (ablations); the per-negative
    components are still reported.
    """
    hard, false, easy = reward_negatives(sim_anchor, sim_positive, cfg, mask)
    r_neg = (hard + false + easy).sum(axis=-1)
    r_tau = reward_temperature(tau, degree, cfg.w5)
    if not use_negatives:
        r_neg = np.zeros_like(r_neg)
    if not use_tau:
        r_tau = np.zeros_like(r_tau)
    return RewardBreakdown(hard, false, easy, r_neg, r_tau)


def reward_bounds(cfg: HgpoConfig, num_negatives: int | None = None) -> tuple[float, float]:
    """(R_min, R_max) over every reachable similarity cell and temperature."""
    m = cfg.num_negatives if num_negatives is None else num_negatives
    # reachable per-negative cells: hard, anchor-false, positive-false (+easy), easy, neutral
    per_min = min(0.0, -cfg.w2, -cfg.w3 - cfg.w4, -cfg.w4)
    per_max = max(0.0, cfg.w1)
    # T_ideal ranges over (0, 1]
    worst_tau = max(cfg.tau_max, 1.0 - cfg.tau_min)
    return m * per_min - cfg.w5 * worst_tau, m * per_max
