import sys

import numpy as np
import pytest

from gmpt import tensor as T
from gmpt.checks import random_graph, random_model
from gmpt.graph import undirected_graph


@pytest.fixture(autouse=True)
def clean_tape():
    T.active_tape().clear()
    yield
    T.active_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def path_graph(n=3, node_dim=2, edge_dim=1, attrs=None):
    x = attrs if attrs is not None else np.arange(n * node_dim, dtype=float).reshape(n, node_dim)
    return undirected_graph(x, [(i, i + 1) for i in range(n - 1)], edge_dim=edge_dim)


def star_graph(k, node_dim=2):
    return undirected_graph(np.ones((k + 1, node_dim)), [(0, i) for i in range(1, k + 1)])


__all__ = ["path_graph", "star_graph", "random_graph", "random_model"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
