"""Constructors for the initial particle approximation of the graph posterior.

Three builders cover the experimental regimes: a random-order Erdos-Renyi
generator for synthetic ground truths, a noise-injected copy of a known graph
for controlled prior-quality studies, and a bootstrap linear-regression DAG
sampler for observational data (bootstrap resample, random variable order,
correlation-screened parents, ridge fit, thresholded coefficients).
"""

from __future__ import annotations

import csv
from typing import Optional, Sequence

import numpy as np

from .graphs import WeightedDag, reaches
from .posterior import ParticleSet

__all__ = [
    "erdos_renyi_dag",
    "perturbed_prior",
    "bootstrap_linear_prior",
    "load_observational_csv",
    "top_variance_columns",
]


def erdos_renyi_dag(d: int, edge_prob: float, weight_low: float = 0.5,
                    weight_high: float = 1.5, rng: np.random.Generator = None,
                    node_names: Optional[Sequence[str]] = None) -> WeightedDag:
    """Random weighted DAG: random node order, forward edges with prob `edge_prob`.

    Edge weights are Uniform[weight_low, weight_high].  Acyclic by
    construction since edges only point forward along the sampled order.
    """
    if not 0 <= edge_prob <= 1:
        raise ValueError("edge_prob must lie in [0, 1]")
    if weight_low >= weight_high:
        raise ValueError("weight_low must be < weight_high")
    rng = rng if rng is not None else np.random.default_rng()
    order = rng.permutation(d)
    w = np.zeros((d, d))
    mask = rng.random((d, d)) < edge_prob
    weights = rng.uniform(weight_low, weight_high, size=(d, d))
    for a in range(d):
        for b in range(a + 1, d):
            if mask[a, b]:
                w[order[a], order[b]] = weights[a, b]
    return WeightedDag(w, node_names, _validate=False)


def perturbed_prior(w_star: WeightedDag, flip_prob: float, addremove_prob: float,
                    weight_noise_sd: float, s: int, rng: np.random.Generator,
                    add_weight_range: tuple[float, float] = (0.5, 1.5)
                    ) -> ParticleSet:
    """Particles made by corrupting a ground-truth graph.

    Per particle, in fixed order for reproducibility: each existing edge is
    flipped with prob `flip_prob` (skipped if the flip would cycle), each
    ordered pair has an add-or-remove attempted with prob `addremove_prob`
    (cycling additions skipped), and Normal(0, weight_noise_sd) noise is added
    to every nonzero weight, re-drawing exact zeros.
    """
    if s < 1:
        raise ValueError("need at least one particle")
    d = w_star.d
    base = w_star.weights
    graphs = np.empty((s, d, d))
    lo, hi = add_weight_range
    for k in range(s):
        g = np.array(base, copy=True)
        if flip_prob > 0:
            for i, j in np.argwhere(g != 0):
                if rng.random() < flip_prob:
                    w = g[i, j]
                    g[i, j] = 0.0
                    if reaches(g != 0, i, j):
                        g[i, j] = w  # flip would cycle: keep the edge
                    else:
                        g[j, i] = w
        if addremove_prob > 0:
            for i in range(d):
                for j in range(d):
                    if i == j or rng.random() >= addremove_prob:
                        continue
                    if g[i, j] != 0:
                        g[i, j] = 0.0
                    elif not reaches(g != 0, j, i):
                        g[i, j] = rng.uniform(lo, hi) if hi > lo else lo
        if weight_noise_sd > 0:
            nz = g != 0
            n = int(nz.sum())
            if n:
                noisy = g[nz] + rng.normal(0.0, weight_noise_sd, size=n)
                for idx in np.flatnonzero(noisy == 0.0):
                    while noisy[idx] == 0.0:
                        noisy[idx] = g[nz][idx] + rng.normal(0.0, weight_noise_sd)
                g[nz] = noisy
        graphs[k] = g
    return ParticleSet(graphs, None, None, w_star.node_names, _validate=False)


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean unit-variance columns; constant columns become all-zero."""
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    z = (x - mean) / safe
    z[:, sd == 0] = 0.0
    return z, sd


def bootstrap_linear_prior(x: np.ndarray, s: int, max_parents: int,
                           corr_k: int, ridge: float, coef_threshold: float = 1e-3,
                           rng: np.random.Generator = None,
                           node_names: Optional[Sequence[str]] = None
                           ) -> ParticleSet:
    """Bootstrap linear DAG sampler over observational data.

    Each particle: resample N rows with replacement, draw a random variable
    order, and for each variable regress on parents chosen among earlier
    variables (screened to the `corr_k` largest absolute marginal
    correlations, then capped at the `max_parents` strongest).  Ridge
    regression runs on standardized columns and edges are installed for
    standardized coefficients exceeding `coef_threshold` in magnitude, with
    those standardized coefficients as the edge weights.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if max_parents < 1 or corr_k < max_parents:
        raise ValueError("need corr_k >= max_parents >= 1")
    if ridge <= 0:
        raise ValueError("ridge must be > 0")
    rng = rng if rng is not None else np.random.default_rng()
    graphs = np.zeros((s, d, d))
    eye_cache: dict[int, np.ndarray] = {}
    for k in range(s):
        sample = x[rng.integers(0, n, size=n)]
        z, _comment = _standardize(sample)
        # correlation of standardized columns is a single Gram matrix
        corr = (z.T @ z) / n
        order = rng.permutation(d)
        for pos in range(1, d):
            j = order[pos]
            earlier = order[:pos]
            strengths = np.abs(corr[j, earlier])
            if strengths.size > corr_k:
                screened = earlier[np.argsort(-strengths, kind="stable")[:corr_k]]
            else:
                screened = earlier
            strengths = np.abs(corr[j, screened])
            take = min(max_parents, screened.size)
            parents = screened[np.argsort(-strengths, kind="stable")[:take]]
            if parents.size == 0:
                continue
            p_mat = z[:, parents]
            gram = p_mat.T @ p_mat
            m = parents.size
            if m not in eye_cache:
                eye_cache[m] = np.eye(m)
            coefs = np.linalg.solve(gram + ridge * eye_cache[m], p_mat.T @ z[:, j])
            for parent, coef in zip(parents, coefs):
                if abs(coef) > coef_threshold:
                    graphs[k, parent, j] = coef
    return ParticleSet(graphs, None, None, node_names, _validate=False)


def load_observational_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a headered numeric table into (column_names, N x D matrix).

    Comma-separated by default; falls back to whitespace splitting when the
    header contains no comma (the common export format for the protein
    signaling benchmark).  Quotes around header names are stripped.
    """
    with open(path, newline="") as fh:
        first = fh.readline()
        if "," in first:
            reader = csv.reader([first] + fh.readlines())
            rows = [row for row in reader if row]
        else:
            rows = [line.split() for line in [first] + fh.readlines()
                    if line.strip()]
    header = [name.strip().strip('"') for name in rows[0]]
    data = [[float(v) for v in row] for row in rows[1:]]
    return header, np.array(data)


def top_variance_columns(x: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k columns with the highest marginal variance."""
    variances = np.asarray(x, dtype=np.float64).var(axis=0)
    order = np.argsort(-variances, kind="stable")
    return np.sort(order[:k])
