import numpy as np
import pytest

from cape.expert import ExpertParams
from cape.graphs import WeightedDag
from cape.posterior import ParticleSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dag_from_edges(d, edges, names=None):
    """edges: iterable of (i, j) or (i, j, weight); default weight 1.0."""
    w = np.zeros((d, d))
    for e in edges:
        if len(e) == 2:
            i, j = e
            weight = 1.0
        else:
            i, j, weight = e
        w[i, j] = weight
    return WeightedDag(w, names)


def pset_from_edge_lists(d, edge_lists, weights=None):
    dags = [dag_from_edges(d, edges) for edges in edge_lists]
    return ParticleSet.from_graphs(dags, weights)


def sharp_params(**kwargs):
    """Expert that answers exactly one-hot on unit-weight edges (float64-saturated)."""
    defaults = dict(beta_edge=1000.0, beta_dir=1000.0, gamma=0.1,
                    epsilon=1e-6, prob_floor=0.0)
    defaults.update(kwargs)
    return ExpertParams(**defaults)


def default_params(**kwargs):
    defaults = dict(beta_edge=10.0, beta_dir=10.0, gamma=0.1,
                    epsilon=1e-6, prob_floor=1e-9)
    defaults.update(kwargs)
    return ExpertParams(**defaults)


def random_dag(d, rng, edge_prob=0.4, weight_low=0.5, weight_high=1.5):
    order = rng.permutation(d)
    w = np.zeros((d, d))
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < edge_prob:
                w[order[a], order[b]] = rng.uniform(weight_low, weight_high)
    return WeightedDag(w)


def random_pset(d, s, rng, edge_prob=0.4):
    graphs = np.stack([random_dag(d, rng, edge_prob).weights for _ in range(s)])
    raw = rng.random(s) + 0.05
    return ParticleSet(graphs, raw / raw.sum())
