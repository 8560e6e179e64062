"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the heavy policy-ordering criterion is last.
"""

import itertools
import json
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import battery
from cape import rng as rngmod
from cape.expert import ExpertParams
from cape.graphs import EditKind, is_acyclic, load_graph
from cape.metrics import etcp, orientation_f1, shd_posterior
from cape.oracles import SimulatedExpertOracle, answer, build_effect_graph
from cape.posterior import (History, ParticleSet, QueryRecord, SurrogatePrior,
                            UniformPrior, ess, pair_likelihoods,
                            particles_hash, rejuvenate, resample, reweight)
from cape.priors import bootstrap_linear_prior, erdos_renyi_dag, perturbed_prior
from cape.session import (SessionConfig, all_ordered_pairs, build_prior,
                          run_session)

from conftest import default_params, random_pset
from test_session import ScriptedOracle, enumerate_three_node_dags

DESK_CONFIG = SessionConfig(
    rounds=90, particles=2000, seed=0, policy="EIG", screen_k=200,
    ess_threshold=0.6, mh_steps=2,
    expert=ExpertParams(beta_edge=10.0, beta_dir=10.0, gamma=0.1, lam=0.0),
    oracle={"kind": "simulated"},
    prior={"kind": "perturbed_truth", "d": 10, "edge_prob": 0.25,
           "flip_prob": 0.10, "addremove_prob": 0.05,
           "weight_noise_sd": 0.20})

PAPER_CONFIG = replace(DESK_CONFIG, rounds=190, particles=10_000,
                       prior={"kind": "perturbed_truth", "d": 20,
                              "edge_prob": 0.25, "flip_prob": 0.10,
                              "addremove_prob": 0.05, "weight_noise_sd": 0.20})


def _report(name: str, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: PASS {detail}".rstrip())


def test_eig_identity_suite():
    """EIG equals expected-KL and mixture-KL forms, 1e-10, 1000 random sets."""
    start = time.time()
    worst = battery.check_eig_matches_expected_kl_battery(
        n_sets=1000, tol=1e-10, rng=np.random.default_rng(20240917))
    elapsed = time.time() - start
    assert elapsed < 30.0, f"identity suite took {elapsed:.1f}s"
    _report("eig-identities", f"(worst |diff| {worst:.2e}, {elapsed:.1f}s)")


def test_exact_bayes_oracle():
    """Weights after a scripted 10-answer history equal the factorized posterior."""
    graphs = np.stack(enumerate_three_node_dags())
    rng = np.random.default_rng(4)
    params = default_params()
    for trial in range(5):
        prior = ParticleSet(graphs)
        labels = [int(v) for v in rng.integers(0, 3, size=10)]
        cfg = replace(DESK_CONFIG, rounds=10, particles=25, policy="RND",
                      ess_threshold=1e-6, seed=trial, expert=params)
        truth = prior.particle(int(rng.integers(25)))
        result = run_session(cfg, prior_pset=prior, w_star=truth,
                             oracle=ScriptedOracle(labels))
        assert not any(row["resampled"] for row in result.rows)
        product = np.full(25, 1 / 25)
        for rec in result.history:
            product *= pair_likelihoods(prior, rec.i, rec.j, params)[:, rec.label]
        product /= product.sum()
        np.testing.assert_allclose(result.pset.weights, product, atol=1e-12)
    _report("exact-bayes-oracle", "(5 scripted histories, atol 1e-12)")


def test_rejuvenation_stationary_and_acyclic():
    """10^5 MH kernel steps: TV to the enumerated 3-state target <= 0.02."""
    params = default_params()
    rng = np.random.default_rng(77)
    particles, sweeps = 1000, 100  # 10^5 kernel applications
    graphs = np.zeros((particles, 2, 2))
    graphs[1::3, 0, 1] = 1.0
    graphs[2::3, 1, 0] = 1.0
    pset = ParticleSet(graphs)
    history = History([QueryRecord(1, 0, 1, 1)])
    for _ in range(sweeps):
        pset, _ = rejuvenate(pset, history, params, 1, rng,
                             prior=UniformPrior(),
                             kinds=(EditKind.ADD, EditKind.REMOVE, EditKind.FLIP),
                             add_weight_range=(1.0, 1.0))
        ParticleSet(pset.graphs, pset.weights)  # validates acyclicity
    freq = np.array([
        np.sum((pset.graphs[:, 0, 1] == 0) & (pset.graphs[:, 1, 0] == 0)),
        np.sum(pset.graphs[:, 0, 1] != 0),
        np.sum(pset.graphs[:, 1, 0] != 0)]) / particles
    from cape.expert import pair_class_probs
    liks = np.array([pair_class_probs(0.0, 0.0, params)[1],
                     pair_class_probs(1.0, 0.0, params)[1],
                     pair_class_probs(0.0, 1.0, params)[1]])
    target = liks / liks.sum()
    tv = 0.5 * float(np.abs(freq - target).sum())
    assert tv <= 0.02, f"TV {tv:.4f}"

    # separate long property run: 10^5 proposals on 8-node graphs, all acyclic
    rng = np.random.default_rng(78)
    pset8 = random_pset(8, 100, rng, edge_prob=0.4)
    history8 = History([QueryRecord(1, 0, 1, 1), QueryRecord(2, 3, 4, 2),
                        QueryRecord(3, 5, 2, 0)])
    surrogate = SurrogatePrior.fit(pset8)
    for _ in range(10):
        pset8, _ = rejuvenate(pset8, history8, params, 100, rng,
                              prior=surrogate)
        ParticleSet(pset8.graphs, pset8.weights)  # raises on any cycle
    _report("rejuvenation-correctness", f"(TV {tv:.4f}, 2x10^5 steps cycle-free)")


def test_posterior_contraction():
    """Round-robin querying for 200 rounds reaches ETCP >= 0.95 in >= 9/10 seeds."""
    start = time.time()
    params = ExpertParams(beta_edge=10.0, beta_dir=10.0, gamma=0.1)
    pairs = all_ordered_pairs(4)
    passes = 0
    values = []
    for seed in range(10):
        rng_prior = rngmod.stream(seed, "prior")
        rng_oracle = rngmod.stream(seed, "oracle")
        rng_resample = rngmod.stream(seed, "resample")
        rng_rejuv = rngmod.stream(seed, "rejuvenate")
        w_star = erdos_renyi_dag(4, 0.5, rng=rng_prior)
        pset = perturbed_prior(w_star, 0.10, 0.05, 0.20, 300, rng_prior)
        surrogate = SurrogatePrior.fit(pset)
        oracle = SimulatedExpertOracle(w_star, params)
        history = History()
        for t in range(1, 201):
            i, j = pairs[(t - 1) % len(pairs)]
            label = answer(oracle, i, j, rng_oracle)
            pset = reweight(pset, i, j, label, params)
            history.append(QueryRecord(t, i, j, label))
            if ess(pset.weights) < 0.5 * pset.s:
                pset = resample(pset, rng_resample)
                pset, _ = rejuvenate(pset, history, params, 2, rng_rejuv,
                                     prior=surrogate)
        val = etcp(pset, w_star, params)
        values.append(val)
        passes += val >= 0.95
    elapsed = time.time() - start
    assert passes >= 9, f"only {passes}/10 seeds reached ETCP 0.95: {values}"
    assert elapsed < 60.0, f"contraction run took {elapsed:.1f}s"
    _report("posterior-contraction",
            f"({passes}/10 seeds, min ETCP {min(values):.4f}, {elapsed:.1f}s)")


def test_effect_graph_oracle_statistics():
    """Null false-edge rate within alpha; planted one-sigma shifts recovered."""
    rng = np.random.default_rng(42)
    flagged = tested = 0
    for _ in range(100):
        controls = rng.normal(size=(200, 4))
        interventions = [(k, rng.normal(size=(200, 4))) for k in range(3)]
        a = build_effect_graph(controls, interventions, alpha=0.05,
                               min_effect=0.0)
        flagged += int(a.sum())
        tested += 9
    null_rate = flagged / tested
    assert null_rate <= 0.05 + 0.02, f"null false-edge rate {null_rate:.3f}"

    hits = trials = 0
    for _ in range(200):
        controls = rng.normal(size=(200, 2))
        shifted = rng.normal(size=(200, 2))
        shifted[:, 1] += 1.0
        a = build_effect_graph(controls, [(0, shifted)], alpha=0.05,
                               min_effect=0.3)
        hits += int(a[0, 1])
        trials += 1
    power = hits / trials
    assert power >= 0.99, f"power {power:.3f}"
    _report("effect-graph-statistics",
            f"(null rate {null_rate:.4f}, power {power:.3f})")


def test_metric_unit_battery():
    """Every worked example of the acquisition and metrics operations."""
    results = battery.run_all()
    failed = [(name, detail) for name, ok, detail in results if not ok]
    assert not failed, f"battery failures: {failed}"
    _report("metric-unit-battery", f"({len(results)} examples)")


def test_determinism():
    """Same seed, non-human oracle: byte-identical session logs."""
    cfg = replace(DESK_CONFIG, rounds=20, particles=300)
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        first = run_session(cfg, out_dir=tmp / "a")
        second = run_session(cfg, out_dir=tmp / "b")
        log_a = (tmp / "a" / "session.jsonl").read_bytes()
        log_b = (tmp / "b" / "session.jsonl").read_bytes()
        assert log_a == log_b
        assert particles_hash(first.pset) == particles_hash(second.pset)
    _report("determinism", f"({len(log_a)} log bytes compared)")


def _sachs_csv_path():
    env = os.environ.get("CAPE_SACHS_CSV")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[1] / "data" / "sachs.data.txt"


def _load_sachs_matrix(path, reference_names):
    import csv as csvmod
    text = Path(path).read_text().strip().splitlines()
    delimiter = "," if "," in text[0] else None
    header = text[0].replace('"', "").split(delimiter)
    rows = [[float(v) for v in line.replace('"', "").split(delimiter)]
            for line in text[1:] if line.strip()]
    x = np.array(rows)
    order = [header.index(name) for name in reference_names]
    return x[:, order]


def test_sachs_reproduction():
    """Protein-signaling benchmark: delta-SHD and delta-orientation-F1 at T=40."""
    path = _sachs_csv_path()
    if not path.exists():
        pytest.skip(f"observational dataset not present at {path} "
                    "(set CAPE_SACHS_CSV to run)")
    reference = load_graph(Path(__file__).resolve().parents[1]
                           / "data" / "sachs_reference.json")
    x = _load_sachs_matrix(path, reference.node_names)
    assert x.shape == (853, 11), f"unexpected data shape {x.shape}"
    params = ExpertParams(beta_edge=10.0, beta_dir=10.0, gamma=0.1, lam=0.0)
    cfg = SessionConfig(rounds=40, particles=500, policy="EIG", screen_k=200,
                        ess_threshold=0.5, mh_steps=2, expert=params,
                        oracle={"kind": "simulated"},
                        prior={"kind": "snapshot", "path": "unused"})
    delta_shd = []
    delta_f1 = []
    for seed in range(10):
        rng_prior = rngmod.stream(seed, "prior")
        prior = bootstrap_linear_prior(x, 500, max_parents=3, corr_k=6,
                                       ridge=1e-3, rng=rng_prior,
                                       node_names=reference.node_names)
        shd0 = shd_posterior(prior, reference)
        f1_0 = orientation_f1(prior, reference)
        result = run_session(replace(cfg, seed=seed), prior_pset=prior,
                             w_star=reference)
        shd1 = shd_posterior(result.pset, reference)
        f1_1 = orientation_f1(result.pset, reference)
        delta_shd.append(shd1 - shd0)
        delta_f1.append(f1_1 - f1_0)
    mean_dshd = float(np.mean(delta_shd))
    mean_df1 = float(np.mean(delta_f1))
    # gates are the reported means relaxed by 1.5 reported std in the
    # unfavorable direction (-13.69 + 1.5*2.79 ~ -10; 0.382 - 1.5*0.069 ~ 0.30);
    # improving on the reported numbers is a pass, not a failure
    assert mean_dshd <= -10.0, f"mean delta-SHD {mean_dshd:.2f}"
    assert mean_df1 >= 0.30, f"mean delta-F1 {mean_df1:.3f}"
    _report("sachs-reproduction",
            f"(dSHD {mean_dshd:.2f}, dF1 {mean_df1:.3f} over 10 seeds)")


def test_synthetic_policy_ordering():
    """EIG beats RND on final entropy, SHD and ETCP in >= 8/10 matched seeds."""
    start = time.time()
    finals = {"EIG": [], "RND": []}
    for seed in range(10):
        cfg_seed = replace(DESK_CONFIG, seed=seed)
        prior, w_star, _ = build_prior(cfg_seed, rngmod.stream(seed, "prior"))
        for policy in ("EIG", "RND"):
            result = run_session(replace(cfg_seed, policy=policy),
                                 prior_pset=prior, w_star=w_star)
            assert len(result.rows) == cfg_seed.rounds
            finals[policy].append(result.rows[-1]["metrics"])
    elapsed = time.time() - start
    assert elapsed < 600.0, f"desk-scale comparison took {elapsed:.1f}s"
    wins = {"entropy": 0, "shd": 0, "etcp": 0}
    for eig_m, rnd_m in zip(finals["EIG"], finals["RND"]):
        wins["entropy"] += eig_m["entropy"] < rnd_m["entropy"]
        wins["shd"] += eig_m["shd"] < rnd_m["shd"]
        wins["etcp"] += eig_m["etcp"] > rnd_m["etcp"]
    mean_shd = {p: float(np.mean([m["shd"] for m in finals[p]]))
                for p in ("EIG", "RND")}
    assert wins["entropy"] >= 8, f"entropy wins {wins['entropy']}/10"
    assert wins["shd"] >= 8, f"SHD wins {wins['shd']}/10"
    assert wins["etcp"] >= 8, f"ETCP wins {wins['etcp']}/10"
    assert mean_shd["EIG"] < mean_shd["RND"]
    _report("synthetic-policy-ordering",
            f"(wins {wins}, mean final SHD EIG {mean_shd['EIG']:.3f} "
            f"vs RND {mean_shd['RND']:.3f}, {elapsed:.0f}s)")


def test_paper_scale_completion():
    """The full-size synthetic configuration runs to completion; the policy
    ordering at this scale is reported but not gated."""
    start = time.time()
    prior, w_star, _ = build_prior(PAPER_CONFIG, rngmod.stream(0, "prior"))
    finals = {}
    for policy in ("EIG", "RND"):
        result = run_session(replace(PAPER_CONFIG, policy=policy),
                             prior_pset=prior, w_star=w_star)
        assert len(result.rows) == PAPER_CONFIG.rounds
        finals[policy] = result.rows[-1]["metrics"]
    elapsed = time.time() - start
    assert elapsed < 900.0, f"paper-scale runs took {elapsed:.0f}s"
    ordering = {
        "entropy": finals["EIG"]["entropy"] < finals["RND"]["entropy"],
        "shd": finals["EIG"]["shd"] < finals["RND"]["shd"],
        "etcp": finals["EIG"]["etcp"] > finals["RND"]["etcp"],
    }
    _report("paper-scale-completion",
            f"(2x190 rounds, S=10000, D=20 in {elapsed:.0f}s; "
            f"EIG-beats-RND checks (not gated): {ordering})")
