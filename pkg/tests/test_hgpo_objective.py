import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hgporec import autodiff as ad
from hgporec.hgpo.config import HgpoConfig
from hgporec.hgpo.objective import (Transitions, entropy_terms, group_mean_rewards, h_neg, h_temp, harm_loss,
                                    hgpo_loss, hgpo_objective, policy_loss, population_variance,
                                    relative_advantage)
from hgporec.hgpo.policy import PolicyNetwork, StateBatch, sample_actions
from hgporec.hgpo.rewards import reward_bounds
from tests.conftest import numeric_grad, rel_err


def test_group_mean_examples(oracles):
    m = group_mean_rewards([1.0, -1.0, 0.5], ["g"] * 3)
    assert abs(m["g"] - oracles["group_mean_1_m1_05"]) < 1e-15
    single = group_mean_rewards([0.7], ["h"])
    assert single == {"h": 0.7} and relative_advantage(0.7, single["h"]) == 0.0
    assert group_mean_rewards([], []) == {}


def test_advantage_examples(oracles):
    assert abs(relative_advantage(1.0, 1 / 6) - oracles["adv_1_minus_sixth"]) < 1e-15
    assert relative_advantage(0.3, 0.3) == 0.0


@given(st.lists(st.tuples(st.floats(-20, 20), st.sampled_from("abcd")), min_size=1, max_size=50))
def test_advantages_centred_per_group(items):
    r = [x for x, _ in items]
    g = [k for _, k in items]
    adv = relative_advantage(r, group_mean_rewards(r, g), g)
    for k in set(g):
        assert abs(sum(a for a, h in zip(adv, g) if h == k)) < 1e-9


def test_clipped_surrogate_cases(oracles):
    def term(ratio, adv):
        return float(policy_loss(np.array([math.log(ratio)]), np.array([0.0]), np.array([adv]), 0.2).value)

    assert abs(term(1.0, 0.37) - 0.37) < 1e-15
    assert abs(term(1.5, 5 / 6) - 1.0) < 1e-9
    assert abs(term(1.5, 0.83333) - oracles["clip_ratio15_adv083333"]) < 1e-9
    assert abs(term(0.5, -0.5) - oracles["clip_ratio05_advm05"]) < 1e-9


def test_non_finite_ratio():
    with pytest.raises(FloatingPointError):
        policy_loss(np.array([1e4]), np.array([0.0]), np.array([1.0]), 0.2)


@given(st.lists(st.floats(-0.18, 0.18), min_size=1, max_size=20), st.integers(0, 1000))
def test_clip_inactive_inside_range(log_ratios, seed):
    ratios = np.exp(np.array(log_ratios))
    ratios = np.clip(ratios, 0.8, 1.2)
    adv = np.random.default_rng(seed).normal(size=len(ratios))
    clipped = float(policy_loss(np.log(ratios), np.zeros(len(ratios)), adv, 0.2).value)
    assert abs(clipped - float(np.mean(ratios * adv))) < 1e-12


def test_entropy_values(oracles):
    assert abs(h_neg(np.full(4, 0.25)) - oracles["h_neg_uniform4"]) < 1e-12
    assert h_neg([0, 1, 0]) == 0.0
    assert abs(h_temp(math.sqrt(1 / (2 * math.pi * math.e)))) < 1e-12
    assert abs(h_temp(1.0) - oracles["h_temp_sigma1"]) < 1e-12
    s = entropy_terms(ad.constant(np.zeros((1, 4))), ad.constant(np.zeros(1)))
    assert abs(float(s.value) - (math.log(4) + oracles["h_temp_sigma1"])) < 1e-12


@given(st.integers(0, 10_000))
def test_entropy_ranges(seed):
    rng = np.random.default_rng(seed)
    C = int(rng.integers(1, 12))
    logits = rng.normal(size=(3, C)) * rng.uniform(0, 10)
    hn = float(entropy_terms(ad.constant(logits), None).value)
    assert -1e-12 <= hn <= math.log(C) + 1e-12
    cfg = HgpoConfig()
    ls = rng.uniform(math.log(cfg.sigma_min), math.log(cfg.sigma_max), size=3)
    ht = float(entropy_terms(None, ad.constant(ls)).value)
    assert ht >= 0.5 * math.log(2 * math.pi * math.e * cfg.sigma_min**2) - 1e-12


def test_harm_examples(oracles):
    assert harm_loss({"a": 0.3, "b": 0.3}, 0.5) == 0.0
    assert abs(harm_loss({"a": 0.0, "b": 1.0}, 0.5) - oracles["harm_means_0_1_lambda05"]) < 1e-15
    assert harm_loss({"a": 2.0}, 0.5) == 0.0


def test_objective_examples(oracles):
    assert hgpo_objective(0.7, 3.0, 0.0, 0.0) == -0.7
    assert abs(hgpo_objective(1.0, 2.0, 0.125, 0.5) - oracles["objective_bonus"]) < 1e-15
    assert abs(hgpo_objective(1.0, 2.0, 0.125, 0.5, mode="literal") - oracles["objective_literal"]) < 1e-15


def make_transitions(seed, A=4, C=5, d=3, hidden=6, cfg=None, select="policy", tau_mode="policy"):
    cfg = cfg or HgpoConfig(hidden=hidden)
    rng = np.random.default_rng(seed)
    states = StateBatch(rng.normal(size=(A, d)), rng.normal(size=(A, d)), rng.normal(size=(A, C, d)),
                        np.ones((A, C), bool), rng.random(A))
    pol = PolicyNetwork(d, cfg, rng)
    for p in pol.params.values():  # move away from the near-uniform init
        p.value += 0.3 * rng.normal(size=p.value.shape)
    lg, mu, ls = pol.forward(states)
    acts = sample_actions(lg.value, mu.value, ls.value, 2, rng, (cfg.tau_min, cfg.tau_max),
                          select=select, tau_mode=tau_mode)
    rewards = rng.normal(size=A)
    groups = ["user:0", "user:1", "user:0", "item:2"][:A]
    return pol, Transitions(states, acts, rewards, groups, acts.log_prob.copy(), select, tau_mode), cfg


@pytest.mark.parametrize("mode", ["bonus", "literal"])
def test_hgpo_gradient_matches_finite_differences(mode):
    worst = 0.0
    for seed in range(20):
        cfg = HgpoConfig(hidden=6, c1=0.3, lambda_harm=0.5, entropy_mode=mode)
        pol, batch, cfg = make_transitions(seed, cfg=cfg)
        # evaluate at perturbed parameters so ratios differ from one (inside the clip range)
        rng = np.random.default_rng(100 + seed)
        for p in pol.params.values():
            p.value += 0.01 * rng.normal(size=p.value.shape)
        loss, _ = hgpo_loss(pol, batch, cfg)
        grads = ad.gradients(loss, pol.parameters())
        for name in ("score.w3", "score.b1", "temp.w3", "temp.b3"):
            p = pol.params[name]

            def f(x, p=p):
                old = p.value
                p.value = x
                val = float(hgpo_loss(pol, batch, cfg)[0].value)
                p.value = old
                return val

            worst = max(worst, rel_err(grads[name], numeric_grad(f, p.value.copy())))
    assert worst < 1e-3


def test_loss_components_at_behaviour_policy():
    pol, batch, cfg = make_transitions(3)
    loss, st_ = hgpo_loss(pol, batch, cfg)
    # at rho = 1 the surrogate equals mean advantage (zero) and the harm term uses the plain group means
    assert abs(st_.components["L_policy"]) < 1e-12
    assert abs(st_.components["L_harm"] - harm_loss(batch.group_means, cfg.lambda_harm)) < 1e-12
    assert abs(float(loss.value) - (-cfg.c1 * st_.components["S"] + st_.components["L_harm"])) < 1e-12


def test_harm_gradient_vanishes_without_lambda():
    cfg = HgpoConfig(hidden=6, lambda_harm=0.0, c1=0.0)
    pol, batch, cfg = make_transitions(4, cfg=cfg)
    loss, st_ = hgpo_loss(pol, batch, cfg)
    assert st_.components["L_harm"] == 0.0
    # pure clipped surrogate: gradient equals that of -mean(rho A)
    g = ad.gradients(loss, pol.parameters())
    lg, mu, ls = pol.forward(batch.states)
    from hgporec.hgpo.policy import action_log_prob
    lp = action_log_prob(lg, mu, ls, batch.actions, batch.avail)
    ref = ad.scale(ad.mean(ad.mul(ad.exp(ad.sub(lp, batch.old_log_prob)), batch.advantages)), -1.0)
    g2 = ad.gradients(ref, pol.parameters())
    assert all(np.allclose(g[k], g2[k], atol=1e-12) for k in g)


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_group_variance_bound(seed, groups):
    cfg = HgpoConfig()
    lo, hi = reward_bounds(cfg, cfg.num_negatives)
    rng = np.random.default_rng(seed)
    r = rng.uniform(lo, hi, size=30)
    r[: groups] = rng.choice([lo, hi], size=groups)
    g = [n % groups for n in range(30)]
    assert population_variance(group_mean_rewards(r, g).values()) <= (hi - lo) ** 2 / 4 + 1e-9


def test_ablation_modes_drop_terms():
    pol, batch, cfg = make_transitions(5, select="random", tau_mode="fixed")
    loss, st_ = hgpo_loss(pol, batch, cfg)
    assert st_.components["S"] == 0.0
    g = ad.gradients(loss, pol.parameters())
    assert all(np.all(v == 0) for v in g.values())
