import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hgporec.hgpo.config import HgpoConfig
from hgporec.hgpo.rewards import compute_rewards, reward_bounds, reward_negatives, reward_temperature, t_ideal

CFG = HgpoConfig()


def piecewise_oracle(s0, sk, c=CFG):
    """Directly coded reward rules, one negative at a time."""
    hard = c.w1 if (c.theta_easy < s0 < c.theta_fn and sk < c.theta_fp) else 0.0
    if s0 >= c.theta_fn:
        false = -c.w2
    elif sk >= c.theta_fp:
        false = -c.w3
    else:
        false = 0.0
    easy = -c.w4 if s0 <= c.theta_easy_low else 0.0
    return hard, false, easy


GRID = [round(0.1 * n, 1) for n in range(11)]


def test_truth_table_exact():
    for s0, sk in itertools.product(GRID, GRID):
        got = tuple(float(x) for x in reward_negatives(s0, sk, CFG))
        assert got == piecewise_oracle(s0, sk), (s0, sk)


def test_examples():
    assert [float(x) for x in reward_negatives(0.6, 0.3, CFG)] == [1.0, 0.0, 0.0]
    assert [float(x) for x in reward_negatives(0.85, 0.1, CFG)] == [0.0, -1.0, 0.0]
    assert [float(x) for x in reward_negatives(0.1, 0.1, CFG)] == [0.0, 0.0, -0.5]
    assert [float(x) for x in reward_negatives(0.6, 0.9, CFG)] == [0.0, -1.0, 0.0]


def test_first_match_precedence():
    cfg = HgpoConfig(w2=2.0, w3=3.0)
    assert float(reward_negatives(0.9, 0.9, cfg)[1]) == -2.0


def test_t_ideal_values(oracles):
    assert t_ideal(0) == 1.0
    assert abs(t_ideal(math.e - 1) - 0.5) < 1e-12
    assert abs(t_ideal(99) - oracles["t_ideal_d99"]) < 1e-12
    assert float(reward_temperature(1.0, 0, 1.2)) == 0.0
    r = float(reward_temperature(0.5, 99, 1.2))
    assert abs(r - oracles["r_tau_d99_tau05_w12"]) < 1e-12
    # rounded reference values
    assert abs(t_ideal(99) - 0.17843) < 1e-4 and abs(r + 0.38588) < 1e-4


def test_total_is_sum_over_negatives():
    s0 = np.array([[0.6, 0.1, 0.9]])
    sk = np.array([[0.3, 0.1, 0.1]])
    rb = compute_rewards(s0, sk, np.array([0.3]), np.array([4]), CFG)
    assert rb.r_neg.tolist() == [1.0 - 0.5 - 1.0]
    assert rb.total[0] == pytest.approx(-0.5 - 1.2 * abs(0.3 - t_ideal(4)), abs=1e-15)


def test_mask_zeroes_padding():
    rb = compute_rewards(np.array([[0.6, 0.1]]), np.array([[0.3, 0.1]]), [0.3], [3], CFG,
                         mask=np.array([[True, False]]))
    assert rb.r_neg.tolist() == [1.0]


def test_ablation_switches():
    rb = compute_rewards(np.array([[0.6]]), np.array([[0.3]]), [0.9], [3], CFG, use_negatives=False)
    assert rb.r_neg[0] == 0 and rb.r_tau[0] < 0
    rb = compute_rewards(np.array([[0.6]]), np.array([[0.3]]), [0.9], [3], CFG, use_tau=False)
    assert rb.r_tau[0] == 0 and rb.r_neg[0] == 1.0


@given(st.lists(st.floats(-1, 1), min_size=10, max_size=10), st.lists(st.floats(-1, 1), min_size=10, max_size=10),
       st.floats(0.05, 1.0), st.integers(0, 10_000))
def test_bounded(s0, sk, tau, degree):
    lo, hi = reward_bounds(CFG, 10)
    rb = compute_rewards(np.array([s0]), np.array([sk]), [tau], [degree], CFG)
    assert lo <= rb.total[0] <= hi


def test_bound_attained_by_low_anchor_high_positive():
    # s0 <= theta_easy_low together with sk >= theta_fp costs w3 + w4 per negative
    rb = compute_rewards(np.full((1, 10), 0.1), np.full((1, 10), 0.9), [1.0], [0], CFG)
    assert rb.r_neg[0] == -10 * (CFG.w3 + CFG.w4)
    assert rb.r_neg[0] >= reward_bounds(CFG, 10)[0]
