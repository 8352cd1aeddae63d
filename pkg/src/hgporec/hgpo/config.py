from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass
class HgpoConfig:
    # reward thresholds and weights
    theta_fn: float = 0.8
    theta_easy: float = 0.5
    theta_fp: float = 0.8
    theta_easy_low: float = 0.2
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 0.5
    w5: float = 1.2
    # objective
    epsilon: float = 0.2
    c1: float = 0.01
    lambda_harm: float = 0.5
    entropy_mode: str = "bonus"  # "bonus": -c1*S ; "literal": +c1*S
    # action space
    num_negatives: int = 10
    pool_size: int | None = None  # None -> min(1024, ceil(0.1 * candidates))
    num_groups: int = 5
    tau_min: float = 0.05
    tau_max: float = 1.0
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    sigma_init: float = 0.15
    # network / optimizer
    hidden: int = 128
    policy_lr: float = 1e-4

    def validate(self):
        if not 0 <= self.theta_easy_low < self.theta_easy < self.theta_fn <= 1:
            raise ValueError("need 0 <= theta_easy_low < theta_easy < theta_fn <= 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        for name in ("w1", "w2", "w3", "w4", "w5", "c1", "lambda_harm", "policy_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.tau_min < self.tau_max:
            raise ValueError("need 0 < tau_min < tau_max")
        if not 0 < self.sigma_min < self.sigma_init < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_init < sigma_max")
        if self.entropy_mode not in ("bonus", "literal"):
            raise ValueError("entropy_mode must be 'bonus' or 'literal'")
        if self.num_negatives < 1 or self.num_groups < 1:
            raise ValueError("num_negatives and num_groups must be >= 1")
        return self

    def pool_size_for(self, num_candidates: int) -> int:
        if self.pool_size is not None:
            return self.pool_size
        return int(min(1024, math.ceil(0.10 * num_candidates)))
