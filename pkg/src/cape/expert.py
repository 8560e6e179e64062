"""Three-way expert judgment model over weighted DAGs.

An expert asked about an ordered pair (i, j) answers with a label in
{0, 1, 2}: 1 means "i causes j directly", 0 means "j causes i directly",
2 means "no direct edge".  The answer distribution given a candidate graph W
is built from two local direction scores

    s_{i->j}(W) = log(epsilon + |W_ij| / gamma) + lambda * phi_{i->j}

combined into an edge-existence logit a = max(s_ij, s_ji) and an orientation
logit d = s_ij - s_ji, each squashed by its own sharpness:

    p_edge = sigmoid(beta_edge * a),   p_dir = sigmoid(beta_dir * d)
    p = (p_edge * (1 - p_dir), p_edge * p_dir, 1 - p_edge)

An optional probability floor keeps every class probability away from zero so
log-likelihood ratios stay bounded.  The optional structural feature phi is a
functional of the current particle posterior (orientation log-odds,
v-structure support, or cycle-risk asymmetry), constant across candidate
graphs for a fixed posterior snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, TYPE_CHECKING

import numpy as np

from .graphs import WeightedDag, reaches

if TYPE_CHECKING:  # pragma: no cover
    from .posterior import ParticleSet

__all__ = [
    "ConfigurationError",
    "FeatureSpec",
    "ExpertParams",
    "CategoricalDist3",
    "sigmoid",
    "direction_score",
    "pair_stats",
    "likelihood",
    "pair_class_probs",
    "feature_posterior_log_odds",
    "feature_v_structure",
    "feature_cycle_risk",
    "feature_offsets_for_pair",
]

FEATURE_KINDS = ("posterior_log_odds", "v_structure", "cycle_risk", "linear")


class ConfigurationError(ValueError):
    """Inconsistent expert configuration (e.g. feature context missing)."""


@dataclass(frozen=True)
class FeatureSpec:
    """Which structural feature enters the direction score.

    kind "linear" combines (posterior_log_odds, v_structure, cycle_risk)
    with fixed coefficients `alphas`; the coefficients are hyperparameters,
    never learned online.
    """

    kind: str
    alphas: Optional[tuple[float, float, float]] = None
    eps_odds: float = 1e-6

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigurationError(f"unknown feature kind {self.kind!r}")
        if self.kind == "linear":
            if self.alphas is None or len(self.alphas) != 3:
                raise ConfigurationError("linear feature needs 3 alpha coefficients")
            object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))


@dataclass(frozen=True)
class ExpertParams:
    """Expert hyperparameters plus implementation constants.

    beta_edge / beta_dir control how sharply the expert separates
    edge-vs-no-edge and the two orientations; gamma sets the weight magnitude
    that counts as real evidence; lam scales the optional structural feature;
    epsilon keeps the log link finite at zero weight; prob_floor is the
    minimum class probability after flooring.
    """

    beta_edge: float = 10.0
    beta_dir: float = 10.0
    lam: float = 0.0
    gamma: float = 0.1
    epsilon: float = 1e-6
    prob_floor: float = 1e-9
    feature: Optional[FeatureSpec] = None

    def __post_init__(self):
        if self.beta_edge < 0 or self.beta_dir < 0:
            raise ConfigurationError("beta_edge and beta_dir must be >= 0")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be > 0")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be > 0")
        if not (0 <= self.prob_floor < 1 / 3):
            raise ConfigurationError("prob_floor must lie in [0, 1/3)")
        if self.lam < 0:
            raise ConfigurationError("lambda must be >= 0")

    @property
    def uses_features(self) -> bool:
        return self.lam > 0 and self.feature is not None

    def to_dict(self) -> dict:
        out = {
            "beta_edge": self.beta_edge,
            "beta_dir": self.beta_dir,
            "lambda": self.lam,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "prob_floor": self.prob_floor,
        }
        if self.feature is not None:
            out["feature"] = {"kind": self.feature.kind,
                              "alphas": list(self.feature.alphas) if self.feature.alphas else None,
                              "eps_odds": self.feature.eps_odds}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ExpertParams":
        feat = obj.get("feature")
        spec = None
        if feat:
            spec = FeatureSpec(kind=feat["kind"],
                               alphas=tuple(feat["alphas"]) if feat.get("alphas") else None,
                               eps_odds=float(feat.get("eps_odds", 1e-6)))
        return cls(
            beta_edge=float(obj.get("beta_edge", 10.0)),
            beta_dir=float(obj.get("beta_dir", 10.0)),
            lam=float(obj.get("lambda", obj.get("lam", 0.0))),
            gamma=float(obj.get("gamma", 0.1)),
            epsilon=float(obj.get("epsilon", 1e-6)),
            prob_floor=float(obj.get("prob_floor", 1e-9)),
            feature=spec,
        )


class CategoricalDist3:
    """A probability vector over the three answer labels {0, 1, 2}."""

    __slots__ = ("p",)

    def __init__(self, p, _validate: bool = True):
        arr = np.asarray(p, dtype=np.float64)
        if _validate:
            if arr.shape != (3,):
                raise ValueError(f"need 3 probabilities, got shape {arr.shape}")
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError(f"probabilities outside [0, 1]: {arr}")
            if abs(arr.sum() - 1.0) > 1e-12:
                raise ValueError(f"probabilities sum to {arr.sum()!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "p", arr)

    def __setattr__(self, name, value):
        raise AttributeError("CategoricalDist3 is immutable")

    def __getitem__(self, y: int) -> float:
        return float(self.p[y])

    def __iter__(self):
        return iter(float(v) for v in self.p)

    def __repr__(self) -> str:
        return f"CategoricalDist3({self.p.tolist()})"


def sigmoid(x):
    """Numerically stable logistic sigmoid, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return np.float64(_sigmoid_scalar(float(x)))
    t = np.abs(x)
    np.negative(t, out=t)
    np.exp(t, out=t)
    t /= 1.0 + t
    return np.where(x >= 0, 1.0 - t, t)


def _floor_probs(p: np.ndarray, floor: float) -> np.ndarray:
    """Project probability vectors onto {p : p_y >= floor, sum p = 1}.

    Entries below the floor are pinned at it and the remaining mass is
    rescaled over the free entries; at most two passes are needed for three
    classes.  floor = 0 returns the input unchanged.
    """
    if floor <= 0:
        return p
    low = p < floor
    if not low.any():
        return p
    p = np.array(p, copy=True)
    for _ in range(2):
        np.copyto(p, 0.0, where=low)
        free_mass = p.sum(axis=-1, keepdims=True)
        n_low = low.sum(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(free_mass > 0, (1.0 - floor * n_low) / free_mass, 1.0)
        p *= scale
        np.copyto(p, floor, where=low)
        new_low = p < floor
        if not new_low.any():
            break
        low |= new_low
    return p


def pair_class_probs(wij, wji, params: ExpertParams,
                     feat_fwd=0.0, feat_rev=0.0) -> np.ndarray:
    """Answer probabilities for one ordered pair, vectorized over leading axes.

    `wij` / `wji` are the weights of the two directions (arrays broadcast
    together); the result has an extra trailing axis of size 3 ordered as
    (label 0, label 1, label 2).  `feat_fwd` / `feat_rev` are fixed feature
    offsets added to the respective direction scores when lambda > 0.
    """
    wij = np.asarray(wij, dtype=np.float64)
    wji = np.asarray(wji, dtype=np.float64)
    s_fwd = np.log(params.epsilon + np.abs(wij) / params.gamma)
    s_rev = np.log(params.epsilon + np.abs(wji) / params.gamma)
    if params.lam != 0.0:
        s_fwd = s_fwd + params.lam * np.asarray(feat_fwd)
        s_rev = s_rev + params.lam * np.asarray(feat_rev)
    return class_probs_from_scores(s_fwd, s_rev, params)


def class_probs_from_scores(s_fwd, s_rev, params: ExpertParams) -> np.ndarray:
    """Answer probabilities from precomputed direction scores (broadcasted)."""
    a = np.maximum(s_fwd, s_rev)
    d = s_fwd - s_rev
    p_edge = sigmoid(params.beta_edge * a)
    p_dir = sigmoid(params.beta_dir * d)
    p1 = p_edge * p_dir
    probs = np.empty(np.broadcast(p_edge, p1).shape + (3,))
    probs[..., 0] = p_edge - p1
    probs[..., 1] = p1
    probs[..., 2] = 1.0 - p_edge
    return _floor_probs(probs, params.prob_floor)


def _sigmoid_scalar(x: float) -> float:
    # same arithmetic as the vectorized sigmoid so both paths agree bitwise
    t = math.exp(-abs(x))
    t = t / (1.0 + t)
    return 1.0 - t if x >= 0 else t


def log_label_prob(wij: float, wji: float, label: int, params: ExpertParams,
                   feat_fwd: float = 0.0, feat_rev: float = 0.0) -> float:
    """log p(Y = label | weights): scalar fast path for MH acceptance sums.

    Mirrors `pair_class_probs` (including the probability floor) in plain
    Python floats; rejuvenation evaluates this once per touched history
    record per proposal, so it must avoid array overhead.
    """
    s_fwd = math.log(params.epsilon + abs(wij) / params.gamma)
    s_rev = math.log(params.epsilon + abs(wji) / params.gamma)
    if params.lam != 0.0:
        s_fwd += params.lam * feat_fwd
        s_rev += params.lam * feat_rev
    p_edge = _sigmoid_scalar(params.beta_edge * max(s_fwd, s_rev))
    p_dir = _sigmoid_scalar(params.beta_dir * (s_fwd - s_rev))
    p1 = p_edge * p_dir
    p = [p_edge - p1, p1, 1.0 - p_edge]
    floor = params.prob_floor
    if floor > 0.0 and min(p) < floor:
        low = [v < floor for v in p]
        for _ in range(2):
            free = sum(v for v, is_low in zip(p, low) if not is_low)
            scale = (1.0 - floor * sum(low)) / free if free > 0 else 1.0
            p = [floor if is_low else v * scale for v, is_low in zip(p, low)]
            new_low = [v < floor for v in p]
            if not any(a and not b for a, b in zip(new_low, low)):
                break
            low = [a or b for a, b in zip(new_low, low)]
    value = p[label]
    if value <= 0.0:
        return -math.inf
    return math.log(value)


def _require_ctx(params: ExpertParams, feature_ctx) -> None:
    if params.uses_features and feature_ctx is None:
        raise ConfigurationError(
            "lambda > 0 with a structural feature requires a particle-set context")


def direction_score(w: WeightedDag, i: int, j: int, params: ExpertParams,
                    feature_ctx: Optional["ParticleSet"] = None) -> float:
    """Local direction score s_{i->j}(W)."""
    if i == j:
        raise ValueError("direction_score requires i != j")
    _require_ctx(params, feature_ctx)
    s = float(np.log(params.epsilon + abs(w.weights[i, j]) / params.gamma))
    if params.uses_features:
        s += params.lam * feature_value(feature_ctx, i, j, params.feature)
    return s


def pair_stats(w: WeightedDag, i: int, j: int, params: ExpertParams,
               feature_ctx: Optional["ParticleSet"] = None) -> tuple[float, float]:
    """(a_ij, d_ij): absolute edge evidence and relative orientation evidence."""
    s_fwd = direction_score(w, i, j, params, feature_ctx)
    s_rev = direction_score(w, j, i, params, feature_ctx)
    return max(s_fwd, s_rev), s_fwd - s_rev


def likelihood(w: WeightedDag, i: int, j: int, params: ExpertParams,
               feature_ctx: Optional["ParticleSet"] = None) -> CategoricalDist3:
    """Answer distribution p(Y_ij | W) over labels {0, 1, 2}."""
    if i == j:
        raise ValueError("likelihood requires i != j")
    _require_ctx(params, feature_ctx)
    feat_fwd = feat_rev = 0.0
    if params.uses_features:
        feat_fwd, feat_rev = feature_offsets_for_pair(feature_ctx, i, j, params)
    p = pair_class_probs(w.weights[i, j], w.weights[j, i], params, feat_fwd, feat_rev)
    return CategoricalDist3(p, _validate=False)


# -- structural features ------------------------------------------------------
#
# All features are functionals of the posterior particle set, not of the
# candidate graph being scored, so for a fixed posterior snapshot each one is
# a constant per ordered pair.

def feature_posterior_log_odds(pset: "ParticleSet", i: int, j: int,
                               eps_odds: float = 1e-6) -> float:
    """Log odds of the posterior mass on i -> j versus j -> i."""
    g = pset.graphs
    p_fwd = float(np.dot(pset.weights, (g[:, i, j] != 0) & (g[:, j, i] == 0)))
    p_rev = float(np.dot(pset.weights, (g[:, j, i] != 0) & (g[:, i, j] == 0)))
    return float(np.log((p_fwd + eps_odds) / (p_rev + eps_odds)))


def feature_v_structure(pset: "ParticleSet", i: int, j: int) -> float:
    """Mean unshielded-collider support for i -> j <- k minus the reverse."""
    d = pset.d
    if d < 3:
        return 0.0
    a = pset.graphs != 0
    w = pset.weights
    others = np.array([k for k in range(d) if k not in (i, j)])
    linked = a[:, :, :] | np.transpose(a, (0, 2, 1))

    def collider_mass(tail: int, head: int) -> float:
        # colliders tail -> head <- k, with tail and k non-adjacent
        has = a[:, tail, head][:, None] & a[:, others, head] & ~linked[:, tail, others]
        return float(np.dot(w, has.mean(axis=1)))

    return collider_mass(i, j) - collider_mass(j, i)


def feature_cycle_risk(pset: "ParticleSet", i: int, j: int) -> float:
    """Posterior probability that adding j -> i cycles minus that for i -> j."""

    def cycles_if_added(src: int, dst: int) -> float:
        total = 0.0
        for s in range(pset.s):
            a = pset.graphs[s] != 0
            if a[src, dst]:
                continue  # already present: no new cycle
            if reaches(a, dst, src):
                total += float(pset.weights[s])
        return total

    return cycles_if_added(j, i) - cycles_if_added(i, j)


def feature_value(pset: "ParticleSet", i: int, j: int, spec: FeatureSpec) -> float:
    if spec.kind == "posterior_log_odds":
        return feature_posterior_log_odds(pset, i, j, spec.eps_odds)
    if spec.kind == "v_structure":
        return feature_v_structure(pset, i, j)
    if spec.kind == "cycle_risk":
        return feature_cycle_risk(pset, i, j)
    a0, a1, a2 = spec.alphas
    return (a0 * feature_posterior_log_odds(pset, i, j, spec.eps_odds)
            + a1 * feature_v_structure(pset, i, j)
            + a2 * feature_cycle_risk(pset, i, j))


def feature_offsets_for_pair(pset: "ParticleSet", i: int, j: int,
                             params: ExpertParams) -> tuple[float, float]:
    """Frozen (phi_{i->j}, phi_{j->i}) offsets for the current posterior."""
    if not params.uses_features:
        return 0.0, 0.0
    return (feature_value(pset, i, j, params.feature),
            feature_value(pset, j, i, params.feature))
