"""Shared graph fixtures and helpers.

The three reference topologies used across the suite:

* example1: 7 agents; agent 1's 3-hop neighborhood is {3,4,5,6} with
  induced edges (3,5) and (4,6), giving the block matrices
  L = [[I2,-I2],[-I2,I2]], H = diag(I2, 0), M = [[2I2,-I2],[-I2,I2]].
* fig2: 6 agents, two clusters {1,2,6} and {3,4,5}; agent 2 depends on
  agent 3 without a communication link (distance 2).
* case16: the 16-agent case study;五 clusters and k = 3.
"""

import numpy as np
import pytest

from ppstl.graphs import CommGraph, TaskGraph

EXAMPLE1_EDGES = [(1, 2), (2, 3), (1, 7), (7, 4), (3, 5), (4, 6)]

FIG2_COMM = [(1, 2), (2, 6), (6, 3), (3, 4), (4, 5)]
FIG2_TASK = [(1, 2), (6, 2), (2, 3), (4, 3), (5, 4)]

CASE16_COMM = [
    (1, 2), (1, 3), (2, 3), (3, 4), (3, 5), (5, 6), (5, 9), (6, 7), (6, 9),
    (7, 8), (9, 10), (9, 12), (10, 11), (11, 12), (11, 13), (12, 13),
    (13, 14), (14, 15), (14, 16), (15, 16),
]
CASE16_TASK = [
    (1, 2), (1, 3), (2, 3), (2, 5), (2, 6), (4, 3), (5, 9), (6, 10), (7, 8),
    (8, 6), (9, 10), (10, 11), (10, 14), (11, 13), (12, 11), (12, 13),
    (13, 16), (14, 15), (15, 16),
]


@pytest.fixture
def example1_graph():
    return CommGraph(range(1, 8), EXAMPLE1_EDGES)


@pytest.fixture
def fig2_graphs():
    gc = CommGraph(range(1, 7), FIG2_COMM)
    gt = TaskGraph(range(1, 7), FIG2_TASK)
    return gc, gt


@pytest.fixture
def case16_graphs():
    gc = CommGraph(range(1, 17), CASE16_COMM)
    gt = TaskGraph(range(1, 17), CASE16_TASK)
    return gc, gt


def random_connected_graph(rng: np.random.Generator, n: int) -> CommGraph:
    """Random spanning tree plus extra edges; always connected."""
    order = rng.permutation(np.arange(1, n + 1))
    edges = [(int(order[i]), int(order[i + 1])) for i in range(n - 1)]
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if rng.random() < 0.25:
                edges.append((a, b))
    return CommGraph(range(1, n + 1), edges)


def all_pairs_bfs(g: CommGraph) -> dict:
    """Independent distance oracle: repeated BFS, dict of dicts."""
    return {i: g.bfs_distances(i) for i in g.agents}
