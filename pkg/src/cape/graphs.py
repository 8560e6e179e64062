"""Weighted DAG values, acyclicity checking, and local edit moves.

A graph on ``d`` nodes is a dense ``d x d`` float matrix ``W`` with zero
diagonal whose nonzero support is acyclic.  ``W[i, j] != 0`` means a directed
edge ``i -> j`` with weight ``W[i, j]``.  All higher-level machinery (particle
posteriors, expert likelihoods, metrics) is built on these values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "WeightedDag",
    "EditKind",
    "GraphEdit",
    "is_acyclic",
    "reaches",
    "apply_edit",
    "skeleton",
    "true_label",
    "graph_to_dict",
    "graph_from_dict",
    "save_graph",
    "load_graph",
]


class GraphError(ValueError):
    """Contract violation on a graph operation (bad shape, bad edit, ...)."""


def is_acyclic(adjacency) -> bool:
    """True iff the directed graph given by a binary adjacency matrix has no cycle.

    Kahn-style peeling: repeatedly remove zero in-degree nodes.  O(d^2) worst
    case.  The input must be square with a zero diagonal.
    """
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {a.shape}")
    if np.any(np.diagonal(a) != 0):
        raise GraphError("adjacency has nonzero diagonal entries")
    a = a != 0
    d = a.shape[0]
    indeg = a.sum(axis=0).astype(np.int64)
    ready = [int(i) for i in np.flatnonzero(indeg == 0)]
    removed = 0
    while ready:
        u = ready.pop()
        removed += 1
        for v in np.flatnonzero(a[u]):
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(int(v))
    return removed == d


def reaches(adjacency: np.ndarray, src: int, dst: int) -> bool:
    """True iff a directed path src -> ... -> dst exists (src == dst counts)."""
    if src == dst:
        return True
    a = adjacency
    d = a.shape[0]
    seen = np.zeros(d, dtype=bool)
    seen[src] = True
    frontier = [src]
    while frontier:
        u = frontier.pop()
        for v in np.flatnonzero(a[u]):
            if v == dst:
                return True
            if not seen[v]:
                seen[v] = True
                frontier.append(int(v))
    return False


class WeightedDag:
    """Immutable weighted DAG: `weights[i, j]` is the weight of edge i -> j.

    Invariants enforced at construction: square matrix, zero diagonal,
    acyclic nonzero support.  The weight matrix is copied and marked
    read-only, so instances are safe to share.
    """

    __slots__ = ("weights", "node_names")

    def __init__(self, weights, node_names: Optional[Sequence[str]] = None,
                 _validate: bool = True):
        w = np.array(weights, dtype=np.float64, copy=True)
        if _validate:
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise GraphError(f"weights must be square, got shape {w.shape}")
            if np.any(np.diagonal(w) != 0):
                raise GraphError("diagonal weights must be zero")
            if not is_acyclic(w != 0):
                raise GraphError("weight support contains a directed cycle")
        if node_names is not None:
            node_names = tuple(str(n) for n in node_names)
            if len(node_names) != w.shape[0]:
                raise GraphError("node_names length does not match node count")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "node_names", node_names)

    def __setattr__(self, name, value):
        raise AttributeError("WeightedDag is immutable")

    @property
    def d(self) -> int:
        return self.weights.shape[0]

    def adjacency(self) -> np.ndarray:
        """Binary support as a bool matrix (fresh copy)."""
        return self.weights != 0

    def edges(self) -> Iterator[tuple[int, int, float]]:
        """Yield (i, j, weight) in row-major order."""
        for i, j in zip(*np.nonzero(self.weights)):
            yield int(i), int(j), float(self.weights[i, j])

    def n_edges(self) -> int:
        return int(np.count_nonzero(self.weights))

    def name(self, i: int) -> str:
        return self.node_names[i] if self.node_names else str(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightedDag):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and self.node_names == other.node_names)

    def __hash__(self):
        return hash((self.weights.tobytes(), self.node_names))

    def __repr__(self) -> str:
        return f"WeightedDag(d={self.d}, edges={self.n_edges()})"

    @classmethod
    def empty(cls, d: int, node_names: Optional[Sequence[str]] = None) -> "WeightedDag":
        return cls(np.zeros((d, d)), node_names, _validate=False)

    @classmethod
    def from_edges(cls, d: int, edges: Iterable[tuple[int, int, float]],
                   node_names: Optional[Sequence[str]] = None) -> "WeightedDag":
        w = np.zeros((d, d))
        for i, j, weight in edges:
            w[i, j] = weight
        return cls(w, node_names)


class EditKind(str, Enum):
    ADD = "add"
    REMOVE = "remove"
    FLIP = "flip"
    PERTURB = "perturb"


@dataclass(frozen=True)
class GraphEdit:
    """One local move on a weighted DAG.

    ADD installs `weight` at an empty (i, j) slot; REMOVE deletes an existing
    edge; FLIP moves the weight from (i, j) to (j, i); PERTURB replaces the
    weight of an existing edge with `weight` (must stay nonzero).
    """

    kind: EditKind
    i: int
    j: int
    weight: Optional[float] = None

    def __post_init__(self):
        if self.i == self.j:
            raise GraphError("edit requires i != j")


def apply_edit(w: WeightedDag, e: GraphEdit) -> Optional[WeightedDag]:
    """Apply a local edit, returning the new graph or None if it would cycle.

    Acyclicity is checked incrementally with a single reachability query
    instead of a full re-check; REMOVE and PERTURB can never create a cycle.
    Precondition violations (adding over an existing edge, removing a missing
    one, zero PERTURB weight, ...) raise GraphError.
    """
    cur = w.weights[e.i, e.j]
    mat = np.array(w.weights, copy=True)
    if e.kind is EditKind.ADD:
        if cur != 0:
            raise GraphError(f"cannot add: edge ({e.i},{e.j}) already present")
        if e.weight is None or e.weight == 0:
            raise GraphError("add requires a nonzero weight")
        # adding i -> j closes a cycle iff j already reaches i
        if reaches(w.weights != 0, e.j, e.i):
            return None
        mat[e.i, e.j] = e.weight
    elif e.kind is EditKind.REMOVE:
        if cur == 0:
            raise GraphError(f"cannot remove: edge ({e.i},{e.j}) absent")
        mat[e.i, e.j] = 0.0
    elif e.kind is EditKind.FLIP:
        if cur == 0:
            raise GraphError(f"cannot flip: edge ({e.i},{e.j}) absent")
        mat[e.i, e.j] = 0.0
        # reversing is cyclic iff i still reaches j through some other path
        if reaches(mat != 0, e.i, e.j):
            return None
        mat[e.j, e.i] = cur
    elif e.kind is EditKind.PERTURB:
        if cur == 0:
            raise GraphError(f"cannot perturb: edge ({e.i},{e.j}) absent")
        if e.weight is None or e.weight == 0:
            raise GraphError("perturb requires a nonzero weight")
        mat[e.i, e.j] = e.weight
    else:  # pragma: no cover
        raise GraphError(f"unknown edit kind {e.kind!r}")
    return WeightedDag(mat, w.node_names, _validate=False)


def skeleton(w: WeightedDag) -> set[frozenset[int]]:
    """Undirected skeleton: the set of unordered pairs joined in either direction."""
    pairs = set()
    for i, j in zip(*np.nonzero(w.weights)):
        pairs.add(frozenset((int(i), int(j))))
    return pairs


def true_label(w_star: WeightedDag, i: int, j: int) -> int:
    """Ground-truth answer for the ordered pair (i, j).

    1 if the edge i -> j exists, 0 if j -> i exists, 2 if neither (the two
    directions are mutually exclusive in a DAG).
    """
    if i == j:
        raise GraphError("true_label requires i != j")
    if w_star.weights[i, j] != 0:
        return 1
    if w_star.weights[j, i] != 0:
        return 0
    return 2


# -- serialization -----------------------------------------------------------
#
# Graphs travel as {"d": int, "names": [...] | null, "edges": [[i, j, w], ...]}
# with 0-based indices.  Weights are emitted as plain JSON numbers via
# Python's shortest round-trip float repr, which parses back to the identical
# IEEE-754 double, so round-trips are bit-exact.

def graph_to_dict(w: WeightedDag) -> dict:
    return {
        "d": w.d,
        "names": list(w.node_names) if w.node_names else None,
        "edges": [[i, j, weight] for i, j, weight in w.edges()],
    }


def graph_from_dict(obj: dict) -> WeightedDag:
    d = int(obj["d"])
    names = obj.get("names")
    mat = np.zeros((d, d))
    for i, j, weight in obj["edges"]:
        mat[int(i), int(j)] = float(weight)
    return WeightedDag(mat, names)


def save_graph(path, w: WeightedDag) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(w), fh)


def load_graph(path) -> WeightedDag:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))
