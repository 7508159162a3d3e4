"""Attributed undirected graphs and the nonparametric aggregation operators."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _accel


class GraphError(ValueError):
    pass


class Role(enum.IntEnum):
    TRAIN = 0
    VAL = 1
    TEST = 2
    UNLABELED = 3

    @classmethod
    def parse(cls, text: str) -> "Role":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise GraphError(f"unknown role {text!r}") from None


class AggregationMode(str, enum.Enum):
    GCN = "gcn"
    SUM = "sum"
    NONE = "none"


def canonical_edges(edges, n: int | None = None) -> np.ndarray:
    """Unordered pairs as a sorted, de-duplicated (E, 2) array with u < v.

    Self-loops are dropped.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n is not None and e.size and (e.min() < 0 or e.max() >= n):
        raise GraphError("edge index out of range")
    e = np.sort(e, axis=1)
    e = e[e[:, 0] != e[:, 1]]
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(e, axis=0)


@dataclass(eq=False)
class Graph:
    """Undirected attributed graph.

    ``labels`` uses -1 for unknown; ``roles`` holds :class:`Role` codes and is
    the only source of truth for which labels a model may see.
    """

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    roles: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise GraphError("features must be a 2-d matrix")
        n = X.shape[0]
        if not np.all(np.isfinite(X)):
            raise GraphError("non-finite feature entries")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GraphError("edge index out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphError("self-loops are not stored explicitly")
        e = canonical_edges(e)
        y = np.asarray(self.labels, dtype=np.int64).ravel()
        r = np.asarray(self.roles, dtype=np.int8).ravel()
        if y.shape[0] != n or r.shape[0] != n:
            raise GraphError(f"labels/roles length must equal node count {n}")
        if np.any((r < 0) | (r > 3)):
            raise GraphError("invalid role code")
        if np.any(y < -1):
            raise GraphError("labels must be >= 0 or the sentinel -1")
        if np.any((r == Role.TRAIN) & (y < 0)):
            raise GraphError("train node with sentinel label")
        for a in (X, e, y, r):
            a.setflags(write=False)
        self.features, self.edges, self.labels, self.roles = X, e, y, r

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0

    def mask(self, *roles: Role) -> np.ndarray:
        return np.isin(self.roles, [int(r) for r in roles])

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) with each neighbour list in ascending id order."""
        n = self.n
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return indptr, dst.astype(np.int64)

    def neighbors(self, v: int) -> np.ndarray:
        indptr, indices = self.csr
        return indices[indptr[v]:indptr[v + 1]]

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        A[self.edges[:, 0], self.edges[:, 1]] = 1.0
        A[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return A

    def with_roles(self, roles) -> "Graph":
        return Graph(self.features, self.edges, self.labels, roles, name=self.name, meta=dict(self.meta))


def degrees(g: Graph, with_self_loops: bool = False) -> np.ndarray:
    indptr, _ = g.csr
    d = np.diff(indptr)
    return d + 1 if with_self_loops else d


def aggregate(g: Graph, F, mode: AggregationMode | str = AggregationMode.GCN) -> np.ndarray:
    """Apply a one-hop aggregation to every row of ``F``.

    ``gcn``  -> sum over N(v) and v of F_u / sqrt(d~_u d~_v)
    ``sum``  -> F_v + sum over N(v) of F_u
    ``none`` -> F unchanged

    Both non-trivial operators are symmetric linear maps, so the same call also
    applies their adjoint.
    """
    mode = AggregationMode(mode)
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != g.n:
        raise GraphError(f"F must have {g.n} rows")
    if not np.all(np.isfinite(F)):
        raise GraphError("non-finite entries in aggregation input")
    if mode is AggregationMode.NONE:
        return F.copy()
    indptr, indices = g.csr
    if mode is AggregationMode.SUM:
        self_w = np.ones(g.n)
        nb_w = np.ones(indices.shape[0])
    else:
        dt = degrees(g, True).astype(np.float64)
        rows = np.repeat(np.arange(g.n), np.diff(indptr))
        self_w = 1.0 / np.sqrt(dt * dt)
        nb_w = 1.0 / np.sqrt(dt[rows] * dt[indices])
    return _accel.aggregate_sorted(indptr, indices, self_w, nb_w, F)


def permute(g: Graph, perm) -> Graph:
    """Relabel nodes: node i of the result carries the data of node perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (g.n,) or not np.array_equal(np.sort(perm), np.arange(g.n)):
        raise GraphError("perm is not a bijection on [0, n)")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(g.n)
    return Graph(
        g.features[perm],
        inv[g.edges] if g.num_edges else g.edges,
        g.labels[perm],
        g.roles[perm],
        name=g.name,
        meta=dict(g.meta),
    )


def validate_split(g: Graph) -> dict:
    counts = {r.name.lower(): int(np.sum(g.roles == r)) for r in Role}
    labeled = g.labels >= 0
    per_class = {}
    for r in (Role.TRAIN, Role.VAL, Role.TEST):
        sel = (g.roles == r) & labeled
        per_class[r.name.lower()] = {int(c): int(k) for c, k in zip(*np.unique(g.labels[sel], return_counts=True))}
    return {
        "n": g.n,
        "edges": g.num_edges,
        "classes": g.num_classes,
        "counts": counts,
        "labeled": {r.name.lower(): int(np.sum((g.roles == r) & labeled)) for r in Role},
        "per_class": per_class,
        "train_test_disjoint": True,
    }
