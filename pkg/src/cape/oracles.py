"""Sources of expert answers.

Four oracles share one interface, `answer(i, j, rng) -> label`:

* SimulatedExpertOracle draws labels from the three-way likelihood evaluated
  at a ground-truth graph (optionally with its own, possibly misspecified,
  hyperparameters).
* DeterministicOracle returns the true label outright.
* EffectGraphOracle answers from a binary directed effect graph built from
  perturbation data; pairs with effects in both directions are ambiguous and
  map to "no directed edge".
* HumanOracle blocks on a channel fed by the HTTP API.

The effect graph itself is built by two-sample Kolmogorov-Smirnov tests of
each perturbed gene's downstream marginals against non-targeting controls,
with Benjamini-Hochberg FDR control and an absolute mean-shift floor.
"""

from __future__ import annotations

import csv
import math
from typing import Optional, Sequence

import numpy as np

from .expert import ConfigurationError, ExpertParams
from .graphs import WeightedDag, true_label

__all__ = [
    "PendingTimeout",
    "DeterministicOracle",
    "SimulatedExpertOracle",
    "EffectGraphOracle",
    "HumanOracle",
    "answer",
    "ks_statistic",
    "kolmogorov_sf",
    "ks_2sample_pvalue",
    "bh_reject",
    "build_effect_graph",
    "load_interventional_csv",
    "effect_graph_to_dict",
    "effect_graph_from_dict",
]


class PendingTimeout(RuntimeError):
    """A human answer did not arrive in time; the session should pause."""


class DeterministicOracle:
    """Always returns the ground-truth label of the queried pair."""

    def __init__(self, w_star: WeightedDag):
        self.w_star = w_star

    def answer(self, i: int, j: int, rng=None) -> int:
        return true_label(self.w_star, i, j)


class SimulatedExpertOracle:
    """Stochastic expert: labels drawn from the likelihood at the true graph.

    `sticky=True` makes repeated queries of the same (unordered) pair return
    the first sampled judgment, with the label mirrored when the pair is
    asked in the opposite order; the default re-samples independently.
    """

    def __init__(self, w_star: WeightedDag, params: ExpertParams,
                 sticky: bool = False):
        self.w_star = w_star
        self.params = params
        self.sticky = sticky
        self._memory: dict[tuple[int, int], int] = {}

    def _sample(self, i: int, j: int, rng: np.random.Generator) -> int:
        from .expert import likelihood
        probs = likelihood(self.w_star, i, j, self.params).p
        return int(rng.choice(3, p=probs / probs.sum()))

    def answer(self, i: int, j: int, rng: np.random.Generator) -> int:
        if not self.sticky:
            return self._sample(i, j, rng)
        key, mirrored = ((i, j), False) if i < j else ((j, i), True)
        if key not in self._memory:
            label = self._sample(key[0], key[1], rng)
            self._memory[key] = label
        label = self._memory[key]
        if mirrored and label in (0, 1):
            label = 1 - label
        return label


class EffectGraphOracle:
    """Answers from a binary effect graph; bidirectional pairs are ambiguous."""

    def __init__(self, a_star: np.ndarray):
        a = np.asarray(a_star)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigurationError("effect graph must be square")
        if np.any(np.diagonal(a) != 0):
            raise ConfigurationError("effect graph has nonzero diagonal")
        self.a_star = a != 0
        both = self.a_star & self.a_star.T
        self.ambiguous_pairs = {(int(i), int(j))
                                for i, j in zip(*np.nonzero(np.triu(both, 1)))}

    def answer(self, i: int, j: int, rng=None) -> int:
        key = (i, j) if i < j else (j, i)
        if key in self.ambiguous_pairs:
            return 2
        if self.a_star[i, j]:
            return 1
        if self.a_star[j, i]:
            return 0
        return 2


class HumanOracle:
    """Bridges to a live UI: publish the pending query, wait for the answer."""

    def __init__(self, channel, timeout: Optional[float] = None):
        self.channel = channel
        self.timeout = timeout

    def answer(self, i: int, j: int, rng=None) -> int:
        return self.channel.ask(i, j, timeout=self.timeout)


def answer(oracle, i: int, j: int, rng: Optional[np.random.Generator] = None) -> int:
    """Query any oracle for the ordered pair (i, j)."""
    if i == j:
        raise ValueError("oracle queries require i != j")
    label = oracle.answer(i, j, rng)
    if label not in (0, 1, 2):
        raise ValueError(f"oracle returned invalid label {label!r}")
    return label


# -- Kolmogorov-Smirnov machinery ------------------------------------------------

def ks_statistic(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample KS statistic: sup_t |F_x(t) - F_y(t)|."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    pooled = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, pooled, side="right") / x.size
    cdf_y = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.max(np.abs(cdf_x - cdf_y)))


def kolmogorov_sf(lam: float) -> float:
    """Asymptotic Kolmogorov survival function Q(lam) = 2 sum (-1)^{k-1} e^{-2 k^2 lam^2}.

    The alternating series is truncated once a term drops below 1e-10
    (adequate for the n >= 25 group sizes this module tests); the result is
    clamped to [0, 1].
    """
    if lam <= 0:
        return 1.0
    total = 0.0
    sign = 1.0
    for k in range(1, 1001):
        term = math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < 1e-10:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


def ks_2sample_pvalue(x: np.ndarray, y: np.ndarray) -> float:
    """Asymptotic two-sample KS p-value via the Kolmogorov distribution."""
    n1, n2 = len(x), len(y)
    stat = ks_statistic(x, y)
    n_eff = n1 * n2 / (n1 + n2)
    return kolmogorov_sf(math.sqrt(n_eff) * stat)


def bh_reject(pvalues: np.ndarray, alpha: float) -> np.ndarray:
    """Benjamini-Hochberg step-up: boolean mask of rejected hypotheses."""
    p = np.asarray(pvalues, dtype=np.float64)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    thresholds = alpha * (np.arange(1, m + 1) / m)
    passing = np.flatnonzero(p[order] <= thresholds)
    mask = np.zeros(m, dtype=bool)
    if passing.size:
        mask[order[: passing[-1] + 1]] = True
    return mask


def build_effect_graph(observational: np.ndarray,
                       interventions: Sequence[tuple[int, np.ndarray]],
                       alpha: float = 0.05,
                       min_effect: float = 0.3,
                       min_group_n: int = 25) -> np.ndarray:
    """Directed binary effect graph from perturbation data.

    For every perturbed gene i (with at least `min_group_n` samples) and
    measured gene j != i, a two-sample KS test compares the perturbed
    marginal of gene j with the non-targeting controls.  All p-values are
    BH-adjusted jointly at `alpha`, and an edge i -> j additionally requires
    an absolute mean shift of at least `min_effect`.  Deterministic: no
    randomness enters anywhere.
    """
    controls = np.asarray(observational, dtype=np.float64)
    if controls.ndim != 2 or controls.shape[0] == 0:
        raise ConfigurationError("control (non-targeting) samples are required")
    d = controls.shape[1]
    tests: list[tuple[int, int]] = []
    pvals: list[float] = []
    shifts: list[float] = []
    for target, samples in interventions:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.shape[0] < min_group_n:
            continue  # underpowered group: contributes no edges
        if not (0 <= target < d):
            raise ConfigurationError(f"intervention target {target} out of range")
        for j in range(d):
            if j == target:
                continue
            tests.append((target, j))
            pvals.append(ks_2sample_pvalue(samples[:, j], controls[:, j]))
            shifts.append(float(samples[:, j].mean() - controls[:, j].mean()))
    a_star = np.zeros((d, d), dtype=np.int64)
    if tests:
        significant = bh_reject(np.array(pvals), alpha)
        for (i, j), sig, shift in zip(tests, significant, shifts):
            if sig and abs(shift) >= min_effect:
                a_star[i, j] = 1
    return a_star


# -- data ingestion ----------------------------------------------------------------

PERTURBATION_COLUMN = "perturbation"
CONTROL_VALUE = "control"


def load_interventional_csv(path) -> tuple[list[str], np.ndarray,
                                           list[tuple[int, np.ndarray]]]:
    """Read a perturbation CSV: one numeric column per gene plus a
    `perturbation` column naming the targeted gene or "control".

    Returns (gene_names, control_matrix, [(target_index, samples), ...]).
    Perturbations of genes that are not measured columns are dropped.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if PERTURBATION_COLUMN not in header:
            raise ConfigurationError(
                f"CSV must contain a {PERTURBATION_COLUMN!r} column")
        pert_col = header.index(PERTURBATION_COLUMN)
        genes = [h for k, h in enumerate(header) if k != pert_col]
        gene_cols = [k for k in range(len(header)) if k != pert_col]
        rows_by_group: dict[str, list[list[float]]] = {}
        for row in reader:
            if not row:
                continue
            group = row[pert_col].strip()
            rows_by_group.setdefault(group, []).append(
                [float(row[k]) for k in gene_cols])
    control_rows = rows_by_group.pop(CONTROL_VALUE, [])
    if not control_rows:
        raise ConfigurationError("no control (non-targeting) samples found")
    controls = np.array(control_rows)
    name_to_idx = {name: k for k, name in enumerate(genes)}
    interventions = []
    for group, rows in sorted(rows_by_group.items()):
        if group in name_to_idx:
            interventions.append((name_to_idx[group], np.array(rows)))
    return genes, controls, interventions


def effect_graph_to_dict(a_star: np.ndarray,
                         names: Optional[Sequence[str]] = None) -> dict:
    """Effect graphs may be cyclic, so they use the raw graph JSON schema."""
    a = np.asarray(a_star)
    return {
        "d": int(a.shape[0]),
        "names": list(names) if names else None,
        "edges": [[int(i), int(j), 1.0] for i, j in zip(*np.nonzero(a))],
    }


def effect_graph_from_dict(obj: dict) -> tuple[np.ndarray, Optional[list[str]]]:
    d = int(obj["d"])
    a = np.zeros((d, d), dtype=np.int64)
    for i, j, _w in obj["edges"]:
        a[int(i), int(j)] = 1
    return a, obj.get("names")
