import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hgporec import autodiff as ad
from hgporec.graph import InteractionGraph

settings.register_profile("repo", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

ORACLES = json.loads((Path(__file__).parent / "oracles.json").read_text())


@pytest.fixture
def oracles():
    return ORACLES


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def check_grad(build, inputs: dict, h=1e-5):
    """Max relative error between autodiff and central differences for every input.

    ``build(**tensors)`` returns a scalar Tensor; inputs are numpy arrays.
    """
    params = {k: ad.parameter(v.copy()) for k, v in inputs.items()}
    analytic = ad.gradients(build(**params), params)
    worst = 0.0
    for name, value in inputs.items():
        def f(x, name=name):
            vals = {k: ad.constant(x if k == name else v) for k, v in inputs.items()}
            return float(build(**vals).value)

        worst = max(worst, rel_err(analytic[name], numeric_grad(f, value, h)))
    return worst


def random_graph(rng, num_users, num_items, density=0.3):
    edges = [(u, i) for u in range(num_users) for i in range(num_items) if rng.random() < density]
    return InteractionGraph.from_edges(edges, num_users, num_items)


def pytest_terminal_summary(terminalreporter):
    from tests.test_acceptance import VERDICTS
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
