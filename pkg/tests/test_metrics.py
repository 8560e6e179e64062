import math

import numpy as np
import pytest

import battery
from cape.metrics import (auroc, avg_predictive_entropy, brier,
                          directed_auprc, etcp, orientation_f1,
                          orientation_marginals, predictive_all_pairs,
                          shd_posterior, skeleton_f1, topk_precision)
from cape.posterior import ParticleSet, edge_marginals

from conftest import (dag_from_edges, default_params, pset_from_edge_lists,
                      random_dag, random_pset)

METRIC_CHECKS = [c for c in battery.ALL_CHECKS
                 if c.__name__.startswith(("check_avg", "check_etcp",
                                           "check_brier", "check_shd",
                                           "check_f1", "check_ranking",
                                           "check_topk"))]


@pytest.mark.parametrize("check", METRIC_CHECKS, ids=lambda c: c.__name__)
def test_worked_examples(check):
    check()


def test_predictive_all_pairs_matches_per_pair(rng):
    from cape.acquisition import predictive
    pset = random_pset(5, 30, rng)
    params = default_params()
    table = predictive_all_pairs(pset, params, chunk=7)
    for i in range(5):
        for j in range(5):
            if i == j:
                continue
            np.testing.assert_allclose(table[i, j],
                                       predictive(pset, i, j, params).p,
                                       atol=1e-12)


def test_one_minus_etcp_nonnegative(rng):
    for _ in range(20):
        truth = random_dag(4, rng)
        pset = random_pset(4, 15, rng)
        assert 1.0 - etcp(pset, truth, default_params()) >= 0.0


def test_shd_is_convex_combination(rng):
    truth = random_dag(5, rng)
    pset = random_pset(5, 12, rng)
    per_particle = []
    a_star = truth.weights != 0
    for k in range(pset.s):
        a = pset.graphs[k] != 0
        per_particle.append(int(((a != a_star) & ~np.eye(5, dtype=bool)).sum()))
    val = shd_posterior(pset, truth)
    assert min(per_particle) - 1e-12 <= val <= max(per_particle) + 1e-12


def test_flip1_never_exceeds_formula(rng):
    for _ in range(20):
        truth = random_dag(4, rng)
        pset = random_pset(4, 10, rng)
        assert shd_posterior(pset, truth, "flip1") <= shd_posterior(pset, truth)


def test_ranking_invariant_under_monotone_transform(rng):
    truth = random_dag(5, rng, edge_prob=0.4)
    pset = random_pset(5, 20, rng)
    marg = edge_marginals(pset)
    a_star = (truth.weights != 0).astype(int)
    if a_star.sum() == 0 or a_star.sum() == 20:
        return
    transformed = 1.0 - np.exp(-3.0 * marg)  # strictly increasing
    assert directed_auprc(marg, a_star) == pytest.approx(
        directed_auprc(transformed, a_star), abs=1e-12)
    assert auroc(marg, a_star) == pytest.approx(
        auroc(transformed, a_star), abs=1e-12)


def test_metrics_deterministic(rng):
    truth = random_dag(4, rng)
    pset = random_pset(4, 15, rng)
    params = default_params()
    vals = [(etcp(pset, truth, params), brier(pset, truth, params),
             shd_posterior(pset, truth), skeleton_f1(pset, truth),
             orientation_f1(pset, truth)) for _ in range(2)]
    assert vals[0] == vals[1]


def test_empty_vs_empty_f1_is_one():
    truth = dag_from_edges(3, [])
    pset = pset_from_edge_lists(3, [[]])
    assert skeleton_f1(pset, truth) == 1.0
    assert orientation_f1(pset, truth) == 1.0


def test_empty_prediction_nonempty_truth_f1_zero():
    truth = dag_from_edges(3, [(0, 1)])
    pset = pset_from_edge_lists(3, [[]])
    assert skeleton_f1(pset, truth) == 0.0
    assert orientation_f1(pset, truth) == 0.0


def test_orientation_marginals():
    pset = pset_from_edge_lists(2, [[(0, 1)], [(1, 0)], []],
                                weights=[0.5, 0.25, 0.25])
    ori = orientation_marginals(pset)
    assert ori[0, 1] == pytest.approx(0.5 / 0.75)
    assert ori[1, 0] == pytest.approx(0.25 / 0.75)
    # no-edge-mass pairs report zero
    empty = pset_from_edge_lists(2, [[]])
    assert orientation_marginals(empty)[0, 1] == 0.0


def test_avg_entropy_requires_pairs():
    pset = pset_from_edge_lists(2, [[]])
    with pytest.raises(ValueError):
        avg_predictive_entropy(pset, [], default_params())
