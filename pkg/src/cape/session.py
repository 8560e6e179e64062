"""The elicitation main loop: screen candidates, select a query, obtain the
expert's answer, update the particle posterior, and record metrics.

A session is fully described by a SessionConfig (JSON-serializable); running
one produces a JSONL log with one record per round, a metrics CSV, a final
particle snapshot, and periodic checkpoints.  With a fixed seed and any
non-human oracle the whole run is bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .acquisition import (ExhaustionError, eig, predictive, screen,
                          select_query, static_eig_ranking)
from .expert import ConfigurationError, ExpertParams, feature_offsets_for_pair
from .graphs import WeightedDag, graph_from_dict, load_graph
from .metrics import (all_pairs_tables, auroc, avg_predictive_entropy, brier,
                      directed_auprc, etcp, orientation_f1, shd_posterior,
                      skeleton_f1, topk_precision)
from .oracles import (DeterministicOracle, EffectGraphOracle, HumanOracle,
                      PendingTimeout, SimulatedExpertOracle, answer,
                      effect_graph_from_dict)
from .posterior import (History, ParticleSet, QueryRecord, SurrogatePrior,
                        edge_marginals, ess, load_particles, particles_hash,
                        particles_from_dict, particles_to_dict, rejuvenate,
                        resample, reweight, save_particles)
from .priors import (bootstrap_linear_prior, erdos_renyi_dag,
                     load_observational_csv, perturbed_prior,
                     top_variance_columns)

__all__ = [
    "SessionConfig",
    "SessionState",
    "SessionResult",
    "run_round",
    "run_session",
    "replay_session",
    "build_prior",
    "all_ordered_pairs",
    "load_config",
]

log = logging.getLogger("cape.session")

METRIC_COLUMNS = ("entropy", "etcp", "brier", "shd", "skel_f1", "orient_f1",
                  "auprc", "auroc", "topk")


@dataclass
class SessionConfig:
    """Everything needed to reproduce a session (JSON-schema mirror).

    `oracle`, `prior`, and `truth` are open sub-dicts documented in the
    README; output paths are deliberately excluded from log echoes so
    repeated runs of one config are byte-identical.
    """

    rounds: int
    particles: int
    seed: int = 0
    policy: str = "EIG"
    screen_k: int = 200
    ess_threshold: float = 0.5
    mh_steps: int = 2
    rejuvenation: bool = True
    allow_requery: bool = True
    pair_mode: str = "ordered"
    metric_pairs: str = "candidates"
    shd_mode: str = "formula"
    topk: Optional[int] = None
    checkpoint_every: int = 25
    expert: ExpertParams = field(default_factory=ExpertParams)
    oracle: dict = field(default_factory=lambda: {"kind": "simulated"})
    prior: dict = field(default_factory=dict)
    truth: Optional[dict] = None

    def __post_init__(self):
        if self.rounds < 1 or self.particles < 1 or self.screen_k < 1:
            raise ConfigurationError("rounds, particles and screen_k must be >= 1")
        if not 0 < self.ess_threshold < 1:
            raise ConfigurationError("ess_threshold must lie in (0, 1)")
        if self.policy not in ("EIG", "UNC", "RND", "STE"):
            raise ConfigurationError(f"unknown policy {self.policy!r}")

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "rounds": self.rounds,
            "particles": self.particles,
            "policy": self.policy,
            "screen_k": self.screen_k,
            "ess_threshold": self.ess_threshold,
            "mh_steps": self.mh_steps,
            "rejuvenation": self.rejuvenation,
            "allow_requery": self.allow_requery,
            "pair_mode": self.pair_mode,
            "metric_pairs": self.metric_pairs,
            "shd_mode": self.shd_mode,
            "topk": self.topk,
            "checkpoint_every": self.checkpoint_every,
            "expert": self.expert.to_dict(),
            "oracle": self.oracle,
            "prior": self.prior,
            "truth": self.truth,
        }
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SessionConfig":
        obj = dict(obj)
        expert = ExpertParams.from_dict(obj.get("expert", {}))
        known = {f for f in cls.__dataclass_fields__} - {"expert"}
        kwargs = {k: v for k, v in obj.items() if k in known}
        return cls(expert=expert, **kwargs)


def load_config(path) -> SessionConfig:
    with open(path) as fh:
        return SessionConfig.from_dict(json.load(fh))


def all_ordered_pairs(d: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(d) for j in range(d) if i != j]


# -- input resolution -----------------------------------------------------------

def build_prior(config: SessionConfig, rng_prior: np.random.Generator
                ) -> tuple[ParticleSet, Optional[WeightedDag], Optional[np.ndarray]]:
    """Build (prior particles, DAG ground truth, effect-graph truth) per config."""
    spec = dict(config.prior)
    kind = spec.get("kind")
    w_star = None
    a_star = None
    if config.truth:
        if "graph" in config.truth:
            w_star = load_graph(config.truth["graph"])
        if "graph_dict" in config.truth:
            w_star = graph_from_dict(config.truth["graph_dict"])
        if "effect_graph" in config.truth:
            with open(config.truth["effect_graph"]) as fh:
                a_star, _names = effect_graph_from_dict(json.load(fh))

    if kind == "perturbed_truth":
        if w_star is None:
            w_star = erdos_renyi_dag(
                int(spec["d"]), float(spec.get("edge_prob", 0.25)),
                float(spec.get("weight_low", 0.5)),
                float(spec.get("weight_high", 1.5)), rng_prior)
        pset = perturbed_prior(
            w_star, float(spec.get("flip_prob", 0.1)),
            float(spec.get("addremove_prob", 0.05)),
            float(spec.get("weight_noise_sd", 0.2)),
            config.particles, rng_prior)
    elif kind == "bootstrap":
        names, x = load_observational_csv(spec["data_csv"])
        if spec.get("top_variance"):
            keep = top_variance_columns(x, int(spec["top_variance"]))
            x = x[:, keep]
            names = [names[k] for k in keep]
        pset = bootstrap_linear_prior(
            x, config.particles, int(spec.get("max_parents", 3)),
            int(spec.get("corr_k", 6)), float(spec.get("ridge", 1e-3)),
            float(spec.get("coef_threshold", 1e-3)), rng_prior, names)
    elif kind == "snapshot":
        pset = load_particles(spec["path"])
    else:
        raise ConfigurationError(f"unknown prior kind {kind!r}")
    return pset, w_star, a_star


def build_oracle(config: SessionConfig, w_star: Optional[WeightedDag],
                 a_star: Optional[np.ndarray], human_channel=None):
    spec = dict(config.oracle)
    kind = spec.get("kind", "simulated")
    if kind == "simulated":
        if w_star is None:
            raise ConfigurationError("simulated oracle needs a ground-truth graph")
        theta = (ExpertParams.from_dict(spec["params"]) if spec.get("params")
                 else config.expert)
        return SimulatedExpertOracle(w_star, theta, sticky=bool(spec.get("sticky", False)))
    if kind == "deterministic":
        if w_star is None:
            raise ConfigurationError("deterministic oracle needs a ground-truth graph")
        return DeterministicOracle(w_star)
    if kind == "effect_graph":
        if a_star is None:
            raise ConfigurationError("effect-graph oracle needs an effect graph")
        return EffectGraphOracle(a_star)
    if kind == "human":
        if human_channel is None:
            raise ConfigurationError("human oracle requires a live answer channel")
        return HumanOracle(human_channel, spec.get("timeout"))
    raise ConfigurationError(f"unknown oracle kind {kind!r}")


# -- state ------------------------------------------------------------------------

@dataclass
class SessionState:
    """Mutable loop state: the single-writer view of a running session."""

    config: SessionConfig
    pset: ParticleSet
    history: History
    rngs: dict
    surrogate: SurrogatePrior
    oracle: object
    w_star: Optional[WeightedDag] = None
    a_star: Optional[np.ndarray] = None
    t: int = 0
    static_ranking: Optional[tuple] = None
    rows: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    pending: Optional[dict] = None  # set while waiting on a human answer

    @property
    def done(self) -> bool:
        return self.stop_reason is not None or self.t >= self.config.rounds


@dataclass
class SessionResult:
    pset: ParticleSet
    history: History
    rows: list
    config: SessionConfig
    stop_reason: Optional[str]
    prior_hash: str
    out_dir: Optional[Path] = None
    log_path: Optional[Path] = None


def _round_metrics(state: SessionState, candidate_pairs) -> dict:
    cfg = state.config
    pairs = (candidate_pairs if cfg.metric_pairs == "candidates"
             else all_ordered_pairs(state.pset.d))
    pred, _cond = all_pairs_tables(state.pset, cfg.expert)
    metrics = {"entropy": avg_predictive_entropy(state.pset, pairs, cfg.expert,
                                                 pred=pred)}
    if state.w_star is not None:
        metrics["etcp"] = etcp(state.pset, state.w_star, cfg.expert, pred=pred)
        metrics["brier"] = brier(state.pset, state.w_star, cfg.expert, pred=pred)
        metrics["shd"] = shd_posterior(state.pset, state.w_star, cfg.shd_mode)
        metrics["skel_f1"] = skeleton_f1(state.pset, state.w_star)
        metrics["orient_f1"] = orientation_f1(state.pset, state.w_star)
    if state.a_star is not None:
        marg = edge_marginals(state.pset)
        metrics["auprc"] = directed_auprc(marg, state.a_star)
        metrics["auroc"] = auroc(marg, state.a_star)
        metrics["topk"] = topk_precision(marg, state.a_star, cfg.topk)
    return metrics


def _pair_uncertainty(pset: ParticleSet, i: int, j: int, pair_mode: str) -> float:
    marg = edge_marginals(pset)
    p = marg[i, j] + marg[j, i] if pair_mode == "unordered" else marg[i, j]
    return float(p * (1.0 - p))


def run_round(state: SessionState, replay_label: Optional[int] = None,
              replay_pair: Optional[tuple[int, int]] = None) -> Optional[dict]:
    """Execute one full round; returns the log row, or None on early stop.

    In replay mode the recorded pair and label are used verbatim and both the
    policy and oracle streams stay untouched, so the posterior trajectory is
    reproduced exactly.
    """
    cfg = state.config
    if state.t >= cfg.rounds:
        raise RuntimeError("session already finished")
    t = state.t + 1
    exclude = None if cfg.allow_requery else state.history.queried_pairs()
    candidates = screen(state.pset, cfg.screen_k, exclude=exclude,
                        pair_mode=cfg.pair_mode)

    if replay_pair is not None:
        pair = replay_pair
    else:
        try:
            pair = select_query(candidates, cfg.policy, state.pset, cfg.expert,
                                state.rngs["policy"],
                                static_ranking=state.static_ranking,
                                queried=state.history.queried_pairs())
        except ExhaustionError as exc:
            state.stop_reason = str(exc)
            return None
    i, j = pair

    offsets = (feature_offsets_for_pair(state.pset, i, j, cfg.expert)
               if cfg.expert.uses_features else None)
    pred = predictive(state.pset, i, j, cfg.expert, offsets)
    eig_val = eig(state.pset, i, j, cfg.expert, offsets)
    u_val = _pair_uncertainty(state.pset, i, j, cfg.pair_mode)

    if replay_label is not None:
        label = replay_label
    else:
        if isinstance(state.oracle, HumanOracle):
            state.pending = {"round": t, "pair": [i, j],
                             "predictive": [float(v) for v in pred.p]}
        try:
            label = answer(state.oracle, i, j, state.rngs["oracle"])
        except PendingTimeout:
            return None  # paused: no state mutated, the round can be retried
        finally:
            state.pending = None

    pset = reweight(state.pset, i, j, label, cfg.expert, offsets)
    state.history.append(QueryRecord(t, i, j, label, cfg.policy,
                                     float(eig_val), offsets))
    ess_before = ess(pset.weights)
    resampled = False
    rejuv_rate = None
    if ess_before < cfg.ess_threshold * pset.s:
        pset = resample(pset, state.rngs["resample"])
        resampled = True
        if cfg.rejuvenation:
            pset, stats = rejuvenate(pset, state.history, cfg.expert,
                                     cfg.mh_steps, state.rngs["rejuvenate"],
                                     prior=state.surrogate)
            rejuv_rate = stats["accept_rate"]
    state.pset = pset
    state.t = t

    row = {
        "round": t,
        "pair": [i, j],
        "label": int(label),
        "policy": cfg.policy,
        "eig": float(eig_val),
        "u": u_val,
        "predictive": [float(v) for v in pred.p],
        "ess_before": float(ess_before),
        "resampled": resampled,
        "rejuvenation_accept_rate": rejuv_rate,
        "metrics": _round_metrics(state, candidates.pairs),
    }
    state.rows.append(row)
    return row


def _sanitize(value):
    """NaN/inf are not valid JSON; map them to null recursively."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    return value


def _write_checkpoint(state: SessionState, out_dir: Path) -> None:
    payload = {
        "round": state.t,
        "particles": particles_to_dict(state.pset),
        "history": [
            {"round": r.round, "i": r.i, "j": r.j, "label": r.label,
             "policy": r.policy, "eig": r.eig_value,
             "feature_offsets": list(r.feature_offsets) if r.feature_offsets else None}
            for r in state.history
        ],
        "static_ranking": ([list(p) for p in state.static_ranking]
                           if state.static_ranking else None),
        "rng": {name: rngmod.generator_state(gen)
                for name, gen in state.rngs.items()},
    }
    tmp = out_dir / "checkpoint.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(_sanitize(payload), fh)
    tmp.replace(out_dir / "checkpoint.json")


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    payload["particles"] = particles_from_dict(payload["particles"])
    payload["rng"] = {name: rngmod.restore_generator(state)
                      for name, state in payload["rng"].items()}
    return payload


def _init_state(config: SessionConfig, prior_pset=None, w_star=None,
                a_star=None, oracle=None, human_channel=None) -> SessionState:
    rngs = rngmod.session_streams(config.seed)
    if prior_pset is None:
        prior_pset, built_w, built_a = build_prior(config, rngs["prior"])
        w_star = w_star if w_star is not None else built_w
        a_star = a_star if a_star is not None else built_a
    if oracle is None:
        oracle = build_oracle(config, w_star, a_star, human_channel)
    surrogate = SurrogatePrior.fit(prior_pset)
    log_prior = surrogate.log_prob_many(prior_pset.graphs)
    pset = ParticleSet(prior_pset.graphs, prior_pset.weights, log_prior,
                       prior_pset.node_names, _validate=False)
    state = SessionState(config=config, pset=pset, history=History(),
                         rngs=rngs, surrogate=surrogate, oracle=oracle,
                         w_star=w_star, a_star=a_star)
    if config.policy == "STE":
        state.static_ranking = static_eig_ranking(pset, config.expert)
    return state


def run_session(config: SessionConfig, out_dir=None, prior_pset=None,
                w_star=None, a_star=None, oracle=None, human_channel=None,
                on_state=None) -> SessionResult:
    """Run a full session, writing the JSONL log, metrics CSV, and snapshot.

    `prior_pset` / `w_star` / `oracle` injection supports matched-seed policy
    comparisons (shared prior and truth, fresh per-policy streams) and tests.
    `on_state` is called with the state after init and after every round
    (used by the HTTP server to publish snapshots).
    """
    state = _init_state(config, prior_pset, w_star, a_star, oracle, human_channel)
    prior_hash = particles_hash(state.pset)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "session.jsonl"
        log_fh = open(log_path, "w")
        header = {"header": {"config": config.to_dict(),
                             "rng_scheme": rngmod.RNG_SCHEME,
                             "prior_hash": prior_hash}}
        log_fh.write(json.dumps(_sanitize(header)) + "\n")
    if on_state is not None:
        on_state(state)
    try:
        while not state.done:
            row = run_round(state)
            if row is None:
                if state.stop_reason is None:
                    continue  # human-oracle pause: retry the round
                log.info("session stopped early: %s", state.stop_reason)
                if log_fh:
                    log_fh.write(json.dumps(
                        {"early_stop": state.stop_reason, "round": state.t}) + "\n")
                break
            if log_fh:
                log_fh.write(json.dumps(_sanitize(row)) + "\n")
                log_fh.flush()
            if out is not None and (row["resampled"]
                                    or state.t % config.checkpoint_every == 0):
                _write_checkpoint(state, out)
            if on_state is not None:
                on_state(state)
    finally:
        if log_fh:
            log_fh.close()
    if out is not None:
        save_particles(out / "particles_final.json", state.pset)
        _write_metrics_csv(out / "metrics.csv", state.rows)
    return SessionResult(pset=state.pset, history=state.history,
                         rows=state.rows, config=config,
                         stop_reason=state.stop_reason, prior_hash=prior_hash,
                         out_dir=out, log_path=log_path)


def replay_session(config: SessionConfig, history: History, prior_pset=None,
                   w_star=None, a_star=None) -> SessionResult:
    """Re-run the posterior updates of a recorded session.

    Selection and oracle calls are skipped (pairs and labels come from the
    history) while the resample and rejuvenation streams replay identically,
    so the final weights match the original run exactly.
    """
    state = _init_state(config, prior_pset, w_star, a_star,
                        oracle=DeterministicOracle(WeightedDag.empty(1)))
    prior_hash = particles_hash(state.pset)
    for rec in history:
        run_round(state, replay_label=rec.label, replay_pair=(rec.i, rec.j))
    return SessionResult(pset=state.pset, history=state.history,
                         rows=state.rows, config=config, stop_reason=None,
                         prior_hash=prior_hash)


def _write_metrics_csv(path, rows) -> None:
    present = [c for c in METRIC_COLUMNS
               if any(c in row["metrics"] for row in rows)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", *present])
        for row in rows:
            writer.writerow([row["round"],
                             *[row["metrics"].get(c, "") for c in present]])
