import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

from gckm.graph import Graph, Role  # noqa: E402


@st.composite
def graphs(draw, min_n=1, max_n=12, d=3, labelled=False):
    n = draw(st.integers(min_n, max_n))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=3 * n, unique=True)) if pairs else []
    feats = draw(
        st.lists(
            st.lists(st.floats(-5, 5, allow_nan=False, allow_infinity=False), min_size=d, max_size=d),
            min_size=n, max_size=n,
        )
    )
    labels = np.full(n, -1)
    roles = np.full(n, int(Role.UNLABELED))
    return Graph(np.array(feats), edges, labels, roles)


def random_graph(rng, n, p=0.3, d=3, classes=None):
    iu = np.triu_indices(n, 1)
    hit = rng.random(iu[0].size) < p
    edges = np.stack([iu[0][hit], iu[1][hit]], axis=1)
    X = rng.normal(size=(n, d))
    labels = np.arange(n) % classes if classes else np.full(n, -1)
    roles = np.full(n, int(Role.TEST if classes else Role.UNLABELED))
    return Graph(X, edges, labels, roles)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    order = sorted(results, key=lambda k: (not k.isdigit(), int(k) if k.isdigit() else 0, k))
    for key in order:
        ok, title, detail = results[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key:>6} {title}: {detail}")
