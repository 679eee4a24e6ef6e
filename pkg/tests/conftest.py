"""Shared fixtures: one small clustered dataset and prebuilt indexes.

Everything here is deliberately small (seconds, not minutes); the heavier
scenario setups live inside test_acceptance.py with their own session
fixtures.
"""

import numpy as np
import pytest
from hypothesis import settings

from givf.datasets import exact_ground_truth, synth_clustered
from givf.graph import build_graph
from givf.index import build_index
from givf.kmeans import train_kmeans
from givf.util import derive_seed

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")

# measured values recorded by the acceptance scenarios; shown after the run
# so they survive pytest's output capture
ACCEPTANCE_NOTES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_NOTES:
        terminalreporter.section("acceptance measurements")
        for line in ACCEPTANCE_NOTES:
            terminalreporter.write_line(line)

SEED = 11
DIM = 16
K = 48
L = 6
M = 4


@pytest.fixture(scope="session")
def small_data():
    """(base, learn, queries, gt) drawn jointly from 60 clusters."""
    data = synth_clustered(12_000, DIM, 60, spread=0.4, seed=SEED)
    base, learn, queries = data[:10_000], data[10_000:11_900], data[11_900:]
    gt = exact_ground_truth(base, queries, k=20)
    return base, learn, queries, gt


@pytest.fixture(scope="session")
def small_coarse(small_data):
    _, learn, _, _ = small_data
    return train_kmeans(learn, K, iters=8, seed=5)


@pytest.fixture(scope="session")
def small_graph(small_coarse):
    return build_graph(small_coarse, max_links=8, ef_construction=48,
                       seed=derive_seed(5, "graph"))


@pytest.fixture(scope="session")
def small_index(small_data, small_coarse, small_graph):
    base, learn, _, _ = small_data
    return build_index(base, small_coarse, small_graph, learn,
                       l=L, m=M, grouping=True, seed=5)


@pytest.fixture(scope="session")
def small_index_flat(small_data, small_coarse, small_graph):
    """Same inputs, grouping disabled."""
    base, learn, _, _ = small_data
    return build_index(base, small_coarse, small_graph, learn,
                       l=L, m=M, grouping=False, seed=5)


def stored_layout(index):
    """(region, group) of every stored slot, aligned with index.codes rows."""
    k, groups = index.k, index.groups_per_region
    region = np.repeat(np.arange(k), np.diff(index.region_offsets))
    grp = np.concatenate(
        [np.repeat(np.arange(groups), index.group_sizes[r]) for r in range(k)]
    ) if index.n else np.empty(0, dtype=np.int64)
    return region, grp


def reconstruct_stored(index):
    """Anchor-plus-decoded-displacement reconstruction of every stored point."""
    from givf.pq import pq_decode

    region, grp = stored_layout(index)
    c = index.coarse.centroids
    if index.params.grouping:
        a = index.alphas[region][:, None]
        s = c[index.neighbor_ids[region, grp]]
        t = c[region] + a * (s - c[region])
    else:
        t = c[region]
    return t + pq_decode(index.pq, index.codes), region, grp
