"""Particle representation of the DAG posterior and its update machinery.

The posterior after t expert answers is approximated by S weighted particles
(weighted DAGs).  Each answer multiplies particle weights by the expert
likelihood of the observed label; when the effective sample size drops below
a threshold the set is resampled and diversity is restored by a
Metropolis-Hastings rejuvenation sweep over local graph edits, with the
initial posterior standing in for the (unavailable) prior density through a
smoothed product-Bernoulli surrogate fitted to the round-0 particles.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .expert import ExpertParams, log_label_prob, pair_class_probs
from .graphs import GraphError, WeightedDag, is_acyclic, reaches, EditKind

__all__ = [
    "DegeneratePosteriorError",
    "ParticleSet",
    "QueryRecord",
    "History",
    "reweight",
    "ess",
    "resample",
    "rejuvenate",
    "UniformPrior",
    "SurrogatePrior",
    "surrogate_log_prior",
    "edge_marginals",
    "particles_to_dict",
    "particles_from_dict",
    "save_particles",
    "load_particles",
    "particles_hash",
]

# Weight law for proposed new edges and for weight-perturbation noise; the
# add law matches the synthetic generator's Uniform[0.5, 1.5] edge weights.
ADD_WEIGHT_RANGE = (0.5, 1.5)
PERTURB_SD = 0.2

WEIGHT_SUM_TOL = 1e-10


class DegeneratePosteriorError(RuntimeError):
    """Raised when every particle weight collapses to zero."""


class ParticleSet:
    """S weighted DAGs stored as a stacked (S, d, d) weight array.

    The stacked layout keeps reweighting, marginals, and predictive
    computations vectorized over particles.  Instances are value-like: update
    operations return new sets and the arrays are marked read-only.
    """

    __slots__ = ("graphs", "weights", "log_prior", "node_names")

    def __init__(self, graphs, weights=None, log_prior=None,
                 node_names: Optional[Sequence[str]] = None,
                 _validate: bool = True):
        g = np.array(graphs, dtype=np.float64, copy=True)
        if g.ndim != 3 or g.shape[1] != g.shape[2]:
            raise ValueError(f"graphs must have shape (S, d, d), got {g.shape}")
        s = g.shape[0]
        if s < 1:
            raise ValueError("need at least one particle")
        if weights is None:
            w = np.full(s, 1.0 / s)
        else:
            w = np.array(weights, dtype=np.float64, copy=True)
        if w.shape != (s,):
            raise ValueError("weights length must match particle count")
        if _validate:
            if np.any(w < 0):
                raise ValueError("negative particle weight")
            if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError(f"weights sum to {w.sum()!r}, not 1")
            if np.any(g[:, np.arange(g.shape[1]), np.arange(g.shape[1])] != 0):
                raise GraphError("particle with nonzero diagonal")
            for k in range(s):
                if not is_acyclic(g[k] != 0):
                    raise GraphError(f"particle {k} contains a directed cycle")
        if log_prior is not None:
            log_prior = np.array(log_prior, dtype=np.float64, copy=True)
            if log_prior.shape != (s,):
                raise ValueError("log_prior length must match particle count")
            log_prior.setflags(write=False)
        if node_names is not None:
            node_names = tuple(str(n) for n in node_names)
        g.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "graphs", g)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "log_prior", log_prior)
        object.__setattr__(self, "node_names", node_names)

    def __setattr__(self, name, value):
        raise AttributeError("ParticleSet is immutable; build a new one")

    @property
    def s(self) -> int:
        return self.graphs.shape[0]

    @property
    def d(self) -> int:
        return self.graphs.shape[1]

    def adjacency(self) -> np.ndarray:
        return self.graphs != 0

    def particle(self, k: int) -> WeightedDag:
        return WeightedDag(self.graphs[k], self.node_names, _validate=False)

    @property
    def particles(self) -> list[WeightedDag]:
        return [self.particle(k) for k in range(self.s)]

    def with_weights(self, weights) -> "ParticleSet":
        return ParticleSet(self.graphs, weights, self.log_prior,
                           self.node_names, _validate=False)

    @classmethod
    def from_graphs(cls, dags: Iterable[WeightedDag], weights=None,
                    log_prior=None) -> "ParticleSet":
        dags = list(dags)
        if not dags:
            raise ValueError("need at least one particle")
        names = dags[0].node_names
        stack = np.stack([w.weights for w in dags])
        return cls(stack, weights, log_prior, names, _validate=True)

    def __repr__(self) -> str:
        return f"ParticleSet(s={self.s}, d={self.d})"


@dataclass(frozen=True)
class QueryRecord:
    """One answered query: the pair asked at a round and the label returned."""

    round: int
    i: int
    j: int
    label: int
    policy: str = ""
    eig_value: Optional[float] = None
    # feature offsets (phi_{i->j}, phi_{j->i}) frozen at query time; only
    # populated when the expert model uses structural features (lambda > 0)
    feature_offsets: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("query pair requires i != j")
        if self.label not in (0, 1, 2):
            raise ValueError(f"label must be 0, 1 or 2, got {self.label}")
        if self.round < 1:
            raise ValueError("rounds are numbered from 1")


class History:
    """Ordered record of all answered queries, rounds strictly increasing."""

    def __init__(self, records: Optional[Iterable[QueryRecord]] = None):
        self.records: list[QueryRecord] = []
        for rec in records or ():
            self.append(rec)

    def append(self, rec: QueryRecord) -> None:
        if self.records and rec.round <= self.records[-1].round:
            raise ValueError(
                f"round {rec.round} not after round {self.records[-1].round}")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_pair(self) -> dict[tuple[int, int], list[QueryRecord]]:
        """Group records by unordered pair (min, max)."""
        grouped: dict[tuple[int, int], list[QueryRecord]] = {}
        for rec in self.records:
            key = (rec.i, rec.j) if rec.i < rec.j else (rec.j, rec.i)
            grouped.setdefault(key, []).append(rec)
        return grouped

    def queried_pairs(self) -> set[tuple[int, int]]:
        return {(rec.i, rec.j) for rec in self.records}


# -- weight update -------------------------------------------------------------

def pair_likelihoods(pset: ParticleSet, i: int, j: int, params: ExpertParams,
                     feature_offsets: Optional[tuple[float, float]] = None
                     ) -> np.ndarray:
    """(S, 3) answer probabilities of the pair (i, j) for every particle."""
    if feature_offsets is None:
        if params.uses_features:
            from .expert import feature_offsets_for_pair
            feature_offsets = feature_offsets_for_pair(pset, i, j, params)
        else:
            feature_offsets = (0.0, 0.0)
    return pair_class_probs(pset.graphs[:, i, j], pset.graphs[:, j, i],
                            params, feature_offsets[0], feature_offsets[1])


def reweight(pset: ParticleSet, i: int, j: int, label: int,
             params: ExpertParams,
             feature_offsets: Optional[tuple[float, float]] = None
             ) -> ParticleSet:
    """Multiply weights by the likelihood of the observed label and renormalize."""
    if label not in (0, 1, 2):
        raise ValueError(f"label must be 0, 1 or 2, got {label}")
    lik = pair_likelihoods(pset, i, j, params, feature_offsets)[:, label]
    new_w = pset.weights * lik
    total = new_w.sum()
    if total <= 0.0:
        raise DegeneratePosteriorError(
            f"all particle weights vanished updating pair ({i},{j}) label {label}")
    return pset.with_weights(new_w / total)


def ess(weights) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights."""
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def resample(pset: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Multinomial resampling: draw S indices by weight, reset weights to 1/S."""
    idx = rng.choice(pset.s, size=pset.s, replace=True, p=pset.weights)
    log_prior = pset.log_prior[idx] if pset.log_prior is not None else None
    return ParticleSet(pset.graphs[idx], None, log_prior, pset.node_names,
                       _validate=False)


def edge_marginals(pset: ParticleSet) -> np.ndarray:
    """Posterior edge-existence probabilities p_ij = sum_s w_s 1[W_ij != 0]."""
    return np.einsum("s,sij->ij", pset.weights, (pset.graphs != 0).astype(np.float64))


# -- surrogate prior -----------------------------------------------------------

class UniformPrior:
    """Flat stand-in prior: every graph scores zero (used in tests/diagnostics)."""

    def log_prob(self, weights_matrix: np.ndarray) -> float:
        return 0.0

    def log_prob_many(self, graphs: np.ndarray) -> np.ndarray:
        return np.zeros(graphs.shape[0])

    def delta_add(self, i, j, w) -> float:
        return 0.0

    def delta_remove(self, i, j, w) -> float:
        return 0.0

    def delta_flip(self, i, j, w) -> float:
        return 0.0

    def delta_perturb(self, w_old, w_new) -> float:
        return 0.0


class SurrogatePrior:
    """Smoothed product-Bernoulli surrogate for the initial posterior density.

    Only samples of the initial posterior exist, but the rejuvenation
    acceptance ratio needs a prior density.  We fit edge marginals m_ij from
    the round-0 particles with add-one-style smoothing

        m_ij = (c_ij + a) / (1 + 2a),   a = smoothing,

    score structure as independent Bernoullis, and score present-edge weights
    under a single global Normal fitted to the initial nonzero weights.
    """

    def __init__(self, log_m: np.ndarray, log_1m: np.ndarray,
                 mu: float, sigma: float):
        self.log_m = log_m
        self.log_1m = log_1m
        self.mu = float(mu)
        self.sigma = float(sigma)
        self._log_norm = -0.5 * math.log(2.0 * math.pi) - math.log(self.sigma)

    @classmethod
    def fit(cls, initial_pset: ParticleSet, smoothing: float = 0.01) -> "SurrogatePrior":
        c = edge_marginals(initial_pset)
        m = (c + smoothing) / (1.0 + 2.0 * smoothing)
        np.fill_diagonal(m, 0.5)  # diagonal never scored; keep logs finite
        nz = initial_pset.graphs[initial_pset.graphs != 0]
        if nz.size == 0:
            mu, sigma = 0.0, 1.0
        else:
            mu = float(nz.mean())
            sigma = float(nz.std())
        sigma = max(sigma, 1e-3)  # degenerate weight pools must stay scorable
        return cls(np.log(m), np.log1p(-m), mu, sigma)

    def _weight_logpdf(self, w) -> np.ndarray:
        z = (np.asarray(w, dtype=np.float64) - self.mu) / self.sigma
        return self._log_norm - 0.5 * z * z

    def log_prob(self, weights_matrix: np.ndarray) -> float:
        a = weights_matrix != 0
        d = a.shape[0]
        off = ~np.eye(d, dtype=bool)
        structure = float(np.sum(np.where(a, self.log_m, self.log_1m)[off]))
        weight = float(np.sum(self._weight_logpdf(weights_matrix[a])))
        return structure + weight

    def log_prob_many(self, graphs: np.ndarray) -> np.ndarray:
        a = graphs != 0
        d = graphs.shape[1]
        off = ~np.eye(d, dtype=bool)
        per_entry = np.where(a, self.log_m, self.log_1m)
        structure = np.einsum("sij,ij->s", per_entry, off.astype(np.float64))
        weight = np.where(a, self._weight_logpdf(graphs), 0.0).sum(axis=(1, 2))
        return structure + weight

    # -- local edit deltas (everything an MH proposal needs) --

    def delta_add(self, i: int, j: int, w: float) -> float:
        return float(self.log_m[i, j] - self.log_1m[i, j]
                     + self._weight_logpdf(w))

    def delta_remove(self, i: int, j: int, w: float) -> float:
        return -self.delta_add(i, j, w)

    def delta_flip(self, i: int, j: int, w: float) -> float:
        # weight term cancels: the same value moves to the opposite slot
        return float((self.log_m[j, i] - self.log_1m[j, i])
                     - (self.log_m[i, j] - self.log_1m[i, j]))

    def delta_perturb(self, w_old: float, w_new: float) -> float:
        return float(self._weight_logpdf(w_new) - self._weight_logpdf(w_old))


def surrogate_log_prior(initial_pset: ParticleSet, w: WeightedDag,
                        smoothing: float = 0.01) -> float:
    """Surrogate log-density of one graph under the fitted initial posterior."""
    return SurrogatePrior.fit(initial_pset, smoothing).log_prob(w.weights)


# -- rejuvenation ---------------------------------------------------------------

ALL_EDIT_KINDS = (EditKind.ADD, EditKind.REMOVE, EditKind.FLIP, EditKind.PERTURB)
_KIND_RETRIES = 8


def _likelihood_delta(g: np.ndarray, i: int, j: int, new_ij: float, new_ji: float,
                      records, params: ExpertParams) -> float:
    """Replayed log-likelihood change for records on the touched pair only.

    The likelihood of a record (a, b, y) depends only on the entries (a, b)
    and (b, a), so an edit to pair {i, j} perturbs exactly the records asked
    about that pair.
    """
    delta = 0.0
    for rec in records:
        if rec.i == i and rec.j == j:
            w_fwd_old, w_rev_old, w_fwd_new, w_rev_new = g[i, j], g[j, i], new_ij, new_ji
        else:  # record stored as (j, i)
            w_fwd_old, w_rev_old, w_fwd_new, w_rev_new = g[j, i], g[i, j], new_ji, new_ij
        fwd, rev = rec.feature_offsets if rec.feature_offsets else (0.0, 0.0)
        delta += (log_label_prob(w_fwd_new, w_rev_new, rec.label, params, fwd, rev)
                  - log_label_prob(w_fwd_old, w_rev_old, rec.label, params, fwd, rev))
    return delta


def _propose(g: np.ndarray, kind: EditKind, rng: np.random.Generator,
             add_weight_range, perturb_sd):
    """Draw a uniformly random eligible edit of the given kind, or None."""
    d = g.shape[0]
    if kind is EditKind.ADD:
        empty = (g == 0)
        np.fill_diagonal(empty, False)
        slots = np.flatnonzero(empty)
        if slots.size == 0:
            return None
        flat = int(slots[rng.integers(slots.size)])
        i, j = divmod(flat, d)
        lo, hi = add_weight_range
        w = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
        if w == 0.0:
            w = (lo + hi) / 2.0 or 1.0
        return i, j, w
    slots = np.flatnonzero(g != 0)
    if slots.size == 0:
        return None
    flat = int(slots[rng.integers(slots.size)])
    i, j = divmod(flat, d)
    if kind is EditKind.PERTURB:
        w = float(g[i, j]) + float(rng.normal(0.0, perturb_sd))
        while w == 0.0:
            w = float(g[i, j]) + float(rng.normal(0.0, perturb_sd))
        return i, j, w
    return i, j, None


def rejuvenate(pset: ParticleSet, history: History, params: ExpertParams,
               mh_steps: int, rng: np.random.Generator,
               prior=None, kinds: Sequence[EditKind] = ALL_EDIT_KINDS,
               add_weight_range: tuple[float, float] = ADD_WEIGHT_RANGE,
               perturb_sd: float = PERTURB_SD,
               ) -> tuple[ParticleSet, dict]:
    """Metropolis-Hastings diversity sweep after resampling.

    Each particle receives `mh_steps` proposals: a uniformly drawn edit kind
    applied to a uniformly drawn eligible pair.  Cycle-creating proposals are
    rejected outright; the rest are accepted with probability
    min(1, exp(delta)) where delta is the surrogate-prior difference plus the
    replayed expert log-likelihood difference over history records touching
    the edited pair.  The edit kernel is treated as symmetric (no proposal
    ratio) by design.  Returns the new set and proposal statistics.
    """
    if prior is None:
        prior = UniformPrior()
    graphs = np.array(pset.graphs, copy=True)
    log_prior = (np.array(pset.log_prior, copy=True)
                 if pset.log_prior is not None else None)
    by_pair = history.by_pair() if history is not None else {}
    kinds = tuple(kinds)
    stats = {"proposals": 0, "accepted": 0, "cyclic": 0, "mh_rejected": 0,
             "skipped": 0}

    for s in range(pset.s):
        g = graphs[s]
        for _ in range(mh_steps):
            proposal = None
            kind = None
            for _ in range(_KIND_RETRIES):
                kind = kinds[int(rng.integers(len(kinds)))]
                proposal = _propose(g, kind, rng, add_weight_range, perturb_sd)
                if proposal is not None:
                    break
            if proposal is None:
                stats["skipped"] += 1
                continue
            stats["proposals"] += 1
            i, j, w_new = proposal
            a = g != 0

            if kind is EditKind.ADD:
                if reaches(a, j, i):
                    stats["cyclic"] += 1
                    continue
                new_ij, new_ji = w_new, g[j, i]
                prior_delta = prior.delta_add(i, j, w_new)
            elif kind is EditKind.REMOVE:
                new_ij, new_ji = 0.0, g[j, i]
                prior_delta = prior.delta_remove(i, j, float(g[i, j]))
            elif kind is EditKind.FLIP:
                a[i, j] = False
                if reaches(a, i, j):
                    stats["cyclic"] += 1
                    continue
                new_ij, new_ji = 0.0, float(g[i, j])
                prior_delta = prior.delta_flip(i, j, float(g[i, j]))
            else:  # PERTURB
                new_ij, new_ji = w_new, g[j, i]
                prior_delta = prior.delta_perturb(float(g[i, j]), w_new)

            key = (i, j) if i < j else (j, i)
            lik_delta = _likelihood_delta(g, i, j, new_ij, new_ji,
                                          by_pair.get(key, ()), params)
            delta = prior_delta + lik_delta
            if math.isnan(delta):
                stats["mh_rejected"] += 1
                continue
            if delta < 0 and rng.random() >= math.exp(delta):
                stats["mh_rejected"] += 1
                continue

            g[i, j] = new_ij
            g[j, i] = new_ji
            if log_prior is not None:
                log_prior[s] += prior_delta
            stats["accepted"] += 1

    stats["accept_rate"] = (stats["accepted"] / stats["proposals"]
                            if stats["proposals"] else 0.0)
    new_set = ParticleSet(graphs, pset.weights, log_prior, pset.node_names,
                          _validate=False)
    return new_set, stats


# -- snapshots -------------------------------------------------------------------

def particles_to_dict(pset: ParticleSet) -> dict:
    return {
        "format": "cape-particles-v1",
        "d": pset.d,
        "names": list(pset.node_names) if pset.node_names else None,
        "weights": pset.weights.tolist(),
        "log_prior": pset.log_prior.tolist() if pset.log_prior is not None else None,
        "graphs": [[[int(i), int(j), float(w)]
                    for i, j, w in zip(*np.nonzero(g), g[np.nonzero(g)])]
                   for g in pset.graphs],
    }


def particles_from_dict(obj: dict) -> ParticleSet:
    d = int(obj["d"])
    graphs = np.zeros((len(obj["graphs"]), d, d))
    for k, edges in enumerate(obj["graphs"]):
        for i, j, w in edges:
            graphs[k, int(i), int(j)] = float(w)
    return ParticleSet(graphs, obj.get("weights"), obj.get("log_prior"),
                       obj.get("names"), _validate=True)


def save_particles(path, pset: ParticleSet) -> None:
    with open(path, "w") as fh:
        json.dump(particles_to_dict(pset), fh)


def load_particles(path) -> ParticleSet:
    with open(path) as fh:
        return particles_from_dict(json.load(fh))


def particles_hash(pset: ParticleSet) -> str:
    """Stable content hash of a particle set (used to verify matched priors)."""
    h = hashlib.sha256()
    h.update(pset.graphs.tobytes())
    h.update(pset.weights.tobytes())
    return h.hexdigest()
