"""Query scoring and selection: predictive answer distributions, expected
information gain, uncertainty screening, and the four acquisition policies.

The expected information gain of asking about a pair is the mutual
information between the graph and the answer, computed in its disagreement
form: entropy of the mixture predictive minus the posterior-weighted entropy
of the per-particle answer distributions.  Because the answer space has only
three labels, every entropy here is a 3-term sum regardless of graph size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .expert import CategoricalDist3, ExpertParams
from .posterior import ParticleSet, edge_marginals, pair_likelihoods

__all__ = [
    "POLICIES",
    "ExhaustionError",
    "CandidateSet",
    "predictive",
    "entropy3",
    "eig",
    "eig_via_expected_kl",
    "eig_for_pairs",
    "screen",
    "static_eig_ranking",
    "select_query",
]

POLICIES = ("EIG", "UNC", "RND", "STE")

# numerically-zero negatives from float cancellation are clamped to 0
_EIG_CLAMP = 1e-12


class ExhaustionError(RuntimeError):
    """No candidates left to query."""


@dataclass(frozen=True)
class CandidateSet:
    """Ordered pairs sorted by descending uncertainty score, ties (i, j)-lexicographic."""

    pairs: tuple[tuple[int, int], ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def score_of(self, pair: tuple[int, int]) -> Optional[float]:
        try:
            return self.scores[self.pairs.index(pair)]
        except ValueError:
            return None


def predictive(pset: ParticleSet, i: int, j: int, params: ExpertParams,
               feature_offsets: Optional[tuple[float, float]] = None
               ) -> CategoricalDist3:
    """Posterior predictive answer distribution: the likelihood mixture."""
    lik = pair_likelihoods(pset, i, j, params, feature_offsets)
    return CategoricalDist3(pset.weights @ lik, _validate=False)


def entropy3(dist) -> float:
    """Shannon entropy in nats of a 3-class distribution, with 0 log 0 = 0."""
    p = dist.p if isinstance(dist, CategoricalDist3) else np.asarray(dist, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Entropy along the last axis with 0 log 0 = 0."""
    logs = np.zeros_like(p)
    np.log(p, out=logs, where=p > 0)
    logs *= p
    return -logs.sum(axis=-1)


def eig(pset: ParticleSet, i: int, j: int, params: ExpertParams,
        feature_offsets: Optional[tuple[float, float]] = None) -> float:
    """Expected information gain of querying (i, j): H(mixture) - E[H(conditional)]."""
    lik = pair_likelihoods(pset, i, j, params, feature_offsets)
    mixture = pset.weights @ lik
    value = entropy3(mixture) - float(pset.weights @ _entropy_rows(lik))
    if -_EIG_CLAMP <= value < 0.0:
        return 0.0
    return value


def eig_via_expected_kl(pset: ParticleSet, i: int, j: int, params: ExpertParams,
                        feature_offsets: Optional[tuple[float, float]] = None
                        ) -> float:
    """EIG computed as the predictive-weighted KL contraction of the posterior.

    For each hypothetical label y, the updated particle weights are
    w_s p_s(y) / phat(y); the value is sum_y phat(y) KL(updated || current).
    Kept as an independently coded identity check for `eig`.
    """
    lik = pair_likelihoods(pset, i, j, params, feature_offsets)
    phat = pset.weights @ lik
    total = 0.0
    for y in range(3):
        if phat[y] <= 0.0:
            continue
        post = pset.weights * lik[:, y] / phat[y]
        mask = post > 0
        total += phat[y] * float(
            np.sum(post[mask] * np.log(post[mask] / pset.weights[mask])))
    if -_EIG_CLAMP <= total < 0.0:
        return 0.0
    return total


def eig_for_pairs(pset: ParticleSet, pairs: Sequence[tuple[int, int]],
                  params: ExpertParams, chunk: int = 1024) -> np.ndarray:
    """Vectorized EIG over a list of ordered pairs (no feature offsets)."""
    if params.uses_features:
        return np.array([eig(pset, i, j, params) for i, j in pairs])
    from .expert import pair_class_probs
    idx = np.asarray(pairs, dtype=np.int64)
    k = idx.shape[0]
    mixture = np.zeros((k, 3))
    cond = np.zeros(k)
    for start in range(0, pset.s, chunk):
        g = pset.graphs[start:start + chunk]
        w = pset.weights[start:start + chunk]
        lik = pair_class_probs(g[:, idx[:, 0], idx[:, 1]],
                               g[:, idx[:, 1], idx[:, 0]], params)
        mixture += np.einsum("s,sky->ky", w, lik)
        cond += np.einsum("s,sk->k", w, _entropy_rows(lik))
    values = _entropy_rows(mixture) - cond
    return np.where((values < 0) & (values >= -_EIG_CLAMP), 0.0, values)


def screen(pset: ParticleSet, k: int,
           exclude: Optional[Iterable[tuple[int, int]]] = None,
           pair_mode: str = "ordered") -> CandidateSet:
    """Top-k ordered pairs by Bernoulli variance of the edge-existence marginal.

    u_ij = p_ij (1 - p_ij) uses the ordered marginal only.  Ties break
    lexicographically on (i, j).  `exclude` removes already-queried pairs;
    `pair_mode="unordered"` collapses to canonical i < j pairs scored by the
    variance of the either-direction existence probability.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    marg = edge_marginals(pset)
    d = pset.d
    excluded = set(map(tuple, exclude)) if exclude else set()
    entries = []
    if pair_mode == "unordered":
        for i in range(d):
            for j in range(i + 1, d):
                if (i, j) in excluded or (j, i) in excluded:
                    continue
                p = marg[i, j] + marg[j, i]  # directions are mutually exclusive
                entries.append((-(p * (1 - p)), i, j))
    else:
        for i in range(d):
            for j in range(d):
                if i == j or (i, j) in excluded:
                    continue
                p = marg[i, j]
                entries.append((-(p * (1 - p)), i, j))
    entries.sort()
    top = entries[:k]
    return CandidateSet(pairs=tuple((i, j) for _, i, j in top),
                        scores=tuple(-negu for negu, _, _ in top))


def static_eig_ranking(pset: ParticleSet, params: ExpertParams) -> tuple[tuple[int, int], ...]:
    """All ordered pairs ranked by initial-posterior EIG (ties lexicographic)."""
    from .metrics import all_pairs_tables
    d = pset.d
    pred, cond_ent = all_pairs_tables(pset, params)
    table = _entropy_rows(pred) - cond_ent
    pairs = [(i, j) for i in range(d) for j in range(d) if i != j]
    values = [max(table[i, j], 0.0) if table[i, j] > -_EIG_CLAMP else table[i, j]
              for i, j in pairs]
    order = sorted(range(len(pairs)), key=lambda n: (-values[n], pairs[n]))
    return tuple(pairs[n] for n in order)


def select_query(candidates: CandidateSet, policy: str, pset: ParticleSet,
                 params: ExpertParams, rng: np.random.Generator,
                 static_ranking: Optional[Sequence[tuple[int, int]]] = None,
                 queried: Optional[set[tuple[int, int]]] = None
                 ) -> tuple[int, int]:
    """Choose the next query pair under the given policy.

    EIG maximizes expected information gain over the candidates; UNC takes
    the top-uncertainty candidate; RND draws uniformly from the candidates;
    STE walks the precomputed round-0 EIG ranking, skipping queried pairs.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "STE":
        if static_ranking is None:
            raise ValueError("STE policy requires a static ranking")
        seen = queried or set()
        for pair in static_ranking:
            if pair not in seen:
                return pair
        raise ExhaustionError("static ranking exhausted: every pair queried")
    if len(candidates) == 0:
        raise ExhaustionError("no candidate pairs to query")
    if policy == "UNC":
        return candidates.pairs[0]
    if policy == "RND":
        return candidates.pairs[int(rng.integers(len(candidates)))]
    values = eig_for_pairs(pset, candidates.pairs, params)
    best = min(range(len(candidates)),
               key=lambda n: (-values[n], candidates.pairs[n]))
    return candidates.pairs[best]
