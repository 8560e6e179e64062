"""Posterior-quality metrics: predictive scoring rules against a ground-truth
DAG, posterior-averaged structural distances, and ranking scores against a
binary effect graph.

Probabilistic scores (entropy, expected true-class probability, Brier) read
the posterior predictive answer distribution per ordered pair; structural
scores (SHD, skeleton/orientation F1) are computed per particle and averaged
with posterior weights; ranking scores (AUPRC, AUROC, top-K precision) treat
the edge-existence marginals as scores for the oracle's directed edges.
"""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np

from .acquisition import _entropy_rows
from .expert import ExpertParams, pair_class_probs
from .graphs import WeightedDag
from .posterior import ParticleSet, edge_marginals

__all__ = [
    "avg_predictive_entropy",
    "all_pairs_tables",
    "predictive_all_pairs",
    "etcp",
    "brier",
    "true_label_matrix",
    "shd_posterior",
    "skeleton_f1",
    "orientation_f1",
    "directed_auprc",
    "auroc",
    "topk_precision",
    "orientation_marginals",
]


def _feature_offset_matrix(pset: ParticleSet, params: ExpertParams) -> Optional[np.ndarray]:
    if not params.uses_features:
        return None
    from .expert import feature_value
    d = pset.d
    feats = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            if i != j:
                feats[i, j] = feature_value(pset, i, j, params.feature)
    return feats


def all_pairs_tables(pset: ParticleSet, params: ExpertParams,
                     chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(predictive (d, d, 3), expected conditional entropy (d, d)) per pair.

    One pass over particle chunks feeds every probabilistic metric of a
    round plus the static ranking; peak memory stays O(chunk * d^2).  Only
    the upper triangle is computed: the (j, i) answer law is the (i, j) law
    with labels 0 and 1 swapped, and both the floor projection and the
    entropy commute with that relabeling.  Diagonal entries stay zero.
    """
    d = pset.d
    feats = _feature_offset_matrix(pset, params)
    iu, ju = np.triu_indices(d, 1)
    n_pairs = iu.size
    pred_flat = np.zeros((n_pairs, 3))
    cond_flat = np.zeros(n_pairs)
    for start in range(0, pset.s, chunk):
        g = pset.graphs[start:start + chunk]
        w = pset.weights[start:start + chunk]
        probs = pair_class_probs(
            g[:, iu, ju], g[:, ju, iu], params,
            feats[iu, ju] if feats is not None else 0.0,
            feats[ju, iu] if feats is not None else 0.0)
        pred_flat += np.einsum("s,spy->py", w, probs)
        cond_flat += np.einsum("s,sp->p", w, _entropy_rows(probs))
    pred = np.zeros((d, d, 3))
    cond_ent = np.zeros((d, d))
    pred[iu, ju] = pred_flat
    pred[ju, iu] = pred_flat[:, (1, 0, 2)]
    cond_ent[iu, ju] = cond_flat
    cond_ent[ju, iu] = cond_flat
    return pred, cond_ent


def predictive_all_pairs(pset: ParticleSet, params: ExpertParams,
                         chunk: int = 4096) -> np.ndarray:
    """Predictive answer probabilities for every ordered pair: (d, d, 3)."""
    return all_pairs_tables(pset, params, chunk)[0]


def avg_predictive_entropy(pset: ParticleSet, pairs: Sequence[tuple[int, int]],
                           params: ExpertParams,
                           pred: Optional[np.ndarray] = None) -> float:
    """Mean predictive entropy (nats) over the given ordered pairs.

    A precomputed predictive table (`all_pairs_tables`) avoids recomputing
    the likelihood mixture.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    idx = np.asarray(list(pairs), dtype=np.int64)
    if pred is not None:
        return float(_entropy_rows(pred[idx[:, 0], idx[:, 1]]).mean())
    if params.uses_features:
        from .acquisition import predictive, entropy3
        return float(np.mean([entropy3(predictive(pset, i, j, params))
                              for i, j in pairs]))
    wij = pset.graphs[:, idx[:, 0], idx[:, 1]]
    wji = pset.graphs[:, idx[:, 1], idx[:, 0]]
    lik = pair_class_probs(wij, wji, params)
    mixture = np.einsum("s,sky->ky", pset.weights, lik)
    return float(_entropy_rows(mixture).mean())


def true_label_matrix(w_star: WeightedDag) -> np.ndarray:
    """Ground-truth label per ordered pair: 1 fwd edge, 0 rev edge, 2 none."""
    a = w_star.weights != 0
    labels = np.full((w_star.d, w_star.d), 2, dtype=np.int64)
    labels[a] = 1
    labels[a.T] = 0
    np.fill_diagonal(labels, 2)
    return labels


def _offdiag_mask(d: int) -> np.ndarray:
    return ~np.eye(d, dtype=bool)


def etcp(pset: ParticleSet, w_star: WeightedDag, params: ExpertParams,
         pred: Optional[np.ndarray] = None) -> float:
    """Expected true-class probability: mean predictive mass on the true label."""
    if pred is None:
        pred = predictive_all_pairs(pset, params)
    labels = true_label_matrix(w_star)
    d = pset.d
    picked = np.take_along_axis(pred, labels[..., None], axis=2)[..., 0]
    return float(picked[_offdiag_mask(d)].mean())


def brier(pset: ParticleSet, w_star: WeightedDag, params: ExpertParams,
          pred: Optional[np.ndarray] = None) -> float:
    """Multiclass Brier score averaged over ordered pairs (0 best, 2 worst)."""
    if pred is None:
        pred = predictive_all_pairs(pset, params)
    labels = true_label_matrix(w_star)
    onehot = np.eye(3)[labels]
    per_pair = np.sum((pred - onehot) ** 2, axis=2)
    return float(per_pair[_offdiag_mask(pset.d)].mean())


def shd_posterior(pset: ParticleSet, w_star: WeightedDag,
                  mode: str = "formula") -> float:
    """Posterior-averaged structural Hamming distance.

    mode "formula" counts ordered-entry adjacency mismatches, so a reversed
    edge costs 2; mode "flip1" charges each reversed edge a single point.
    """
    a = pset.graphs != 0
    a_star = w_star.weights != 0
    mism = (a != a_star[None, :, :])
    np.logical_and(mism, _offdiag_mask(pset.d)[None, :, :], out=mism)
    counts = mism.sum(axis=(1, 2)).astype(np.float64)
    if mode == "flip1":
        reversed_edges = a & a_star.T[None, :, :] & ~a_star[None, :, :]
        counts -= reversed_edges.sum(axis=(1, 2))
    elif mode != "formula":
        raise ValueError(f"unknown SHD mode {mode!r}")
    return float(pset.weights @ counts)


def _f1_from_counts(tp: np.ndarray, n_pred: np.ndarray, n_true: int) -> np.ndarray:
    """Per-particle F1 with the empty-set conventions."""
    tp = tp.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 0.0)
        rec = np.where(n_true > 0, tp / max(n_true, 1), 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / np.maximum(prec + rec, 1e-300), 0.0)
    if n_true == 0:
        f1 = np.where(n_pred == 0, 1.0, f1)  # both empty: perfect agreement
    return f1


def skeleton_f1(pset: ParticleSet, w_star: WeightedDag) -> float:
    """Posterior-averaged F1 of the undirected skeleton."""
    d = pset.d
    iu = np.triu_indices(d, 1)
    a = pset.graphs != 0
    sk = (a | np.transpose(a, (0, 2, 1)))[:, iu[0], iu[1]]
    a_star = w_star.weights != 0
    sk_star = (a_star | a_star.T)[iu]
    tp = (sk & sk_star[None, :]).sum(axis=1)
    f1 = _f1_from_counts(tp, sk.sum(axis=1), int(sk_star.sum()))
    return float(pset.weights @ f1)


def orientation_f1(pset: ParticleSet, w_star: WeightedDag) -> float:
    """Posterior-averaged F1 of the directed edge set."""
    a = pset.graphs != 0
    a_star = w_star.weights != 0
    tp = (a & a_star[None, :, :]).sum(axis=(1, 2))
    f1 = _f1_from_counts(tp, a.sum(axis=(1, 2)), int(a_star.sum()))
    return float(pset.weights @ f1)


def _ranking_inputs(marginals: np.ndarray, a_star: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accepts d x d matrices (diagonal dropped) or already-flat score vectors."""
    marginals = np.asarray(marginals, dtype=np.float64)
    a_star = np.asarray(a_star) != 0
    if marginals.ndim == 1:
        idx = np.stack([np.arange(marginals.size),
                        np.zeros(marginals.size, dtype=np.int64)], axis=1)
        return marginals, a_star, idx
    d = marginals.shape[0]
    mask = _offdiag_mask(d)
    idx = np.argwhere(mask)
    return marginals[mask], a_star[mask], idx


def directed_auprc(marginals: np.ndarray, a_star: np.ndarray) -> float:
    """Area under the precision-recall curve by step integration over thresholds."""
    scores, labels, _ = _ranking_inputs(marginals, a_star)
    n_pos = int(labels.sum())
    if n_pos == 0:
        warnings.warn("no positive edges: AUPRC undefined")
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    # group ties: evaluate precision/recall only at distinct-score boundaries
    boundary = np.flatnonzero(np.diff(scores)) if scores.size > 1 else np.array([], dtype=int)
    cut = np.concatenate([boundary, [scores.size - 1]])
    tp = np.cumsum(labels)[cut].astype(np.float64)
    n_at = (cut + 1).astype(np.float64)
    precision = tp / n_at
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def auroc(marginals: np.ndarray, a_star: np.ndarray) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties at half credit)."""
    scores, labels, _ = _ranking_inputs(marginals, a_star)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        warnings.warn("need both positive and negative edges: AUROC undefined")
        return float("nan")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1)
    # midranks for tied scores
    sorted_scores = scores[order]
    start = 0
    for end in range(1, scores.size + 1):
        if end == scores.size or sorted_scores[end] != sorted_scores[start]:
            if end - start > 1:
                ranks[order[start:end]] = 0.5 * (start + 1 + end)
            start = end
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def topk_precision(marginals: np.ndarray, a_star: np.ndarray,
                   k: Optional[int] = None) -> float:
    """Fraction of true edges among the k highest-scoring ordered pairs.

    k defaults to the number of oracle edges; score ties break
    lexicographically on (i, j) for determinism.
    """
    scores, labels, idx = _ranking_inputs(marginals, a_star)
    n_pos = int(labels.sum())
    if k is None:
        k = n_pos
    if k == 0:
        warnings.warn("no positive edges: top-K precision undefined")
        return float("nan")
    order = sorted(range(scores.size),
                   key=lambda n: (-scores[n], idx[n, 0], idx[n, 1]))
    chosen = order[:k]
    return float(labels[chosen].sum() / k)


def orientation_marginals(pset: ParticleSet) -> np.ndarray:
    """Posterior orientation probability given an edge exists (0 where no mass)."""
    p = edge_marginals(pset)
    den = p + p.T  # directions are mutually exclusive within a particle
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, p / np.maximum(den, 1e-300), 0.0)
    np.fill_diagonal(out, 0.0)
    return out
