"""Dataset directories, converters from common raw formats, splits and toy graphs.

A dataset directory holds four headerless text files::

    features.csv   n rows of d comma-separated floats
    edges.tsv      "u<TAB>v" per line, 0-indexed, undirected
    labels.csv     "node_id,label" (label >= 0, or -1 for unknown)
    split.csv      "node_id,role" with role in train/val/test/unlabeled
"""
from __future__ import annotations

import logging
import pickle
import sys
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, Role, canonical_edges

log = logging.getLogger(__name__)

FILES = ("features.csv", "edges.tsv", "labels.csv", "split.csv")


class DatasetError(GraphError):
    pass


def _read_pairs(path: Path, second_as_str=False):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DatasetError(f"{path.name}:{lineno}: expected 'node_id,value'")
            try:
                node = int(parts[0])
                val = parts[1].strip() if second_as_str else int(parts[1])
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: cannot parse {line!r}") from None
            rows.append((node, val))
    return rows


def load_dataset(directory) -> Graph:
    d = Path(directory)
    for name in FILES:
        if not (d / name).is_file():
            raise DatasetError(f"missing file: {d / name}")
    try:
        X = np.loadtxt(d / "features.csv", delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"features.csv: {exc}") from None
    n = X.shape[0]

    text = (d / "edges.tsv").read_text().strip()
    if text:
        try:
            E = np.array([[int(t) for t in ln.split("\t")] for ln in text.splitlines() if ln.strip()], dtype=np.int64)
        except ValueError:
            raise DatasetError("edges.tsv: expected two tab-separated integers per line") from None
        if E.ndim != 2 or E.shape[1] != 2:
            raise DatasetError("edges.tsv: expected two tab-separated integers per line")
    else:
        E = np.zeros((0, 2), dtype=np.int64)
    if E.size and (E.min() < 0 or E.max() >= n):
        raise DatasetError("edge index out of range")
    loops = int(np.sum(E[:, 0] == E[:, 1]))
    if loops:
        log.warning("dropping %d self-loop(s) from %s", loops, d)
    E = canonical_edges(E, n)

    label_rows = _read_pairs(d / "labels.csv")
    if len(label_rows) != n:
        raise DatasetError(f"row-count mismatch: {n} feature rows but {len(label_rows)} labels")
    raw = np.full(n, -1, dtype=np.int64)
    for node, lab in label_rows:
        if not 0 <= node < n:
            raise DatasetError(f"labels.csv: node id {node} out of range")
        if lab < -1:
            raise DatasetError(f"labels.csv: invalid label {lab}")
        raw[node] = lab
    # contiguous relabelling 0..p-1
    labels = np.full(n, -1, dtype=np.int64)
    known = raw >= 0
    if known.any():
        classes, inv = np.unique(raw[known], return_inverse=True)
        labels[known] = inv

    roles = np.full(n, int(Role.UNLABELED), dtype=np.int8)
    for node, role in _read_pairs(d / "split.csv", second_as_str=True):
        if not 0 <= node < n:
            raise DatasetError(f"split.csv: node id {node} out of range")
        roles[node] = int(Role.parse(role))
    if np.any((roles == Role.TRAIN) & (labels < 0)):
        raise DatasetError("train node with sentinel label")
    return Graph(X, E, labels, roles, name=d.name)


def write_dataset(g: Graph, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "features.csv", g.features, delimiter=",", fmt="%.17g")
    with open(d / "edges.tsv", "w") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    with open(d / "labels.csv", "w") as fh:
        for i, y in enumerate(g.labels):
            fh.write(f"{i},{y}\n")
    with open(d / "split.csv", "w") as fh:
        for i, r in enumerate(g.roles):
            fh.write(f"{i},{Role(r).name.lower()}\n")
    return d


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def roles_from_indices(n, train=(), val=(), test=()) -> np.ndarray:
    roles = np.full(n, int(Role.UNLABELED), dtype=np.int8)
    roles[np.asarray(test, dtype=np.int64)] = Role.TEST
    roles[np.asarray(val, dtype=np.int64)] = Role.VAL
    roles[np.asarray(train, dtype=np.int64)] = Role.TRAIN
    return roles


def few_label_split(labels, per_class=4, n_val=100, n_test=1000, seed=0, train_pool=None,
                    val_pool=None, test_pool=None) -> np.ndarray:
    """Role vector with ``per_class`` training labels per class.

    With pools given (e.g. the standard split), the first nodes of each pool in
    the given order are taken; otherwise labelled nodes are drawn at random.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    labeled = np.flatnonzero(labels >= 0)
    if train_pool is None:
        train_pool = rng.permutation(labeled)
    train = []
    for c in np.unique(labels[labeled]):
        members = [i for i in train_pool if labels[i] == c][:per_class]
        if len(members) < per_class:
            raise DatasetError(f"class {c} has fewer than {per_class} candidates")
        train.extend(members)
    taken = set(train)
    if val_pool is None:
        val_pool = [i for i in rng.permutation(labeled) if i not in taken]
    val = [i for i in val_pool if i not in taken][:n_val]
    taken.update(val)
    if test_pool is None:
        test_pool = [i for i in rng.permutation(labeled) if i not in taken]
    test = [i for i in test_pool if i not in taken][:n_test]
    return roles_from_indices(n, train, val, test)


def fraction_split(labels, fractions=(0.005, 0.005, 0.99), seed=0, min_per_class=1) -> np.ndarray:
    """Random train/val/test split by fraction of labelled nodes, stratified for train."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = np.random.default_rng(seed)
    labeled = np.flatnonzero(labels >= 0)
    n_lab = labeled.size
    n_train = max(int(round(fractions[0] * n_lab)), min_per_class * len(np.unique(labels[labeled])))
    n_val = int(round(fractions[1] * n_lab))
    order = rng.permutation(labeled)
    train = []
    # one per class first, then fill in random order
    for c in np.unique(labels[labeled]):
        train.extend([i for i in order if labels[i] == c][:min_per_class])
    for i in order:
        if len(train) >= n_train:
            break
        if i not in train:
            train.append(i)
    rest = [i for i in order if i not in set(train)]
    val = rest[:n_val]
    n_test = int(round(fractions[2] * n_lab))
    test = rest[n_val:n_val + n_test]
    return roles_from_indices(n, train, val, test)


def subsample(g: Graph, n_keep: int, seed: int = 0) -> Graph:
    """Induced subgraph on ``n_keep`` nodes; training and validation nodes are kept first."""
    if not 1 <= n_keep <= g.n:
        raise DatasetError(f"cannot keep {n_keep} of {g.n} nodes")
    rng = np.random.default_rng(seed)
    priority = np.flatnonzero((g.roles == Role.TRAIN) | (g.roles == Role.VAL))
    others = rng.permutation(np.setdiff1d(np.arange(g.n), priority))
    keep = np.sort(np.concatenate([priority, others])[:n_keep])
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[keep] = np.arange(keep.size)
    e = new_id[g.edges] if g.num_edges else g.edges
    e = e[(e >= 0).all(axis=1)] if g.num_edges else e
    return Graph(g.features[keep], e, g.labels[keep], g.roles[keep], name=g.name, meta=dict(g.meta))


# ---------------------------------------------------------------------------
# converters
# ---------------------------------------------------------------------------

def _unpickle(path: Path):
    with open(path, "rb") as fh:
        if sys.version_info > (3, 0):
            return pickle.load(fh, encoding="latin1")
        return pickle.load(fh)  # pragma: no cover


def planetoid_to_graph(raw_dir, name: str, split: str = "standard", seed: int = 0) -> Graph:
    """Build a Graph from the ``ind.<name>.*`` files of the Planetoid release.

    ``split`` is ``standard`` (20 per class / 500 val / 1000 test) or
    ``few`` (first 4 per class of the standard training nodes, first 100 of the
    standard validation nodes, the standard 1000 test nodes).
    """
    import scipy.sparse as sp

    raw = Path(raw_dir)
    objs = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        p = raw / f"ind.{name}.{key}"
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")
        objs[key] = _unpickle(p)
    test_index = np.array([int(t) for t in (raw / f"ind.{name}.test.index").read_text().split()])
    test_range = np.sort(test_index)
    tx, ty = objs["tx"], objs["ty"]
    if name == "citeseer":
        # isolated test nodes missing from tx/ty: pad with zero rows
        full = np.arange(test_range.min(), test_range.max() + 1)
        tx_ext = sp.lil_matrix((full.size, objs["x"].shape[1]))
        tx_ext[test_range - test_range.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((full.size, objs["y"].shape[1]))
        ty_ext[test_range - test_range.min(), :] = ty
        ty = ty_ext
    features = sp.vstack((objs["allx"], tx)).tolil()
    features[test_index, :] = features[test_range, :]
    X = np.asarray(features.todense(), dtype=np.float64)
    onehot = np.vstack((objs["ally"], ty))
    onehot[test_index, :] = onehot[test_range, :]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1).astype(np.int64)
    n = X.shape[0]
    pairs = [(u, v) for u, nbrs in objs["graph"].items() for v in nbrs if u < n and v < n]
    E = canonical_edges(pairs, n)
    n_train = objs["y"].shape[0]
    train_pool = list(range(n_train))
    val_pool = list(range(n_train, min(n_train + 500, objs["ally"].shape[0])))
    test_pool = [int(i) for i in test_range[:1000]]
    if split == "standard":
        roles = roles_from_indices(n, train_pool, val_pool, test_pool)
    elif split == "few":
        roles = few_label_split(labels, 4, 100, 1000, seed, train_pool, val_pool, test_pool)
    else:
        raise DatasetError(f"unknown split {split!r}")
    return Graph(X, E, labels, roles, name=name)


def geom_gcn_to_graph(raw_dir, name: str = "chameleon", fractions=(0.005, 0.005, 0.99), seed=0) -> Graph:
    """Read ``out1_node_feature_label.txt`` / ``out1_graph_edges.txt`` (Wikipedia networks)."""
    raw = Path(raw_dir)
    feat_file = raw / "out1_node_feature_label.txt"
    edge_file = raw / "out1_graph_edges.txt"
    for p in (feat_file, edge_file):
        if not p.is_file():
            raise DatasetError(f"missing file: {p}")
    rows = {}
    with open(feat_file) as fh:
        next(fh)
        for line in fh:
            node, feat, lab = line.rstrip("\n").split("\t")
            rows[int(node)] = (np.array(feat.split(","), dtype=np.float64), int(lab))
    n = len(rows)
    X = np.vstack([rows[i][0] for i in range(n)])
    labels = np.array([rows[i][1] for i in range(n)], dtype=np.int64)
    pairs = []
    with open(edge_file) as fh:
        next(fh)
        for line in fh:
            u, v = line.split()
            pairs.append((int(u), int(v)))
    E = canonical_edges(pairs, n)
    roles = fraction_split(labels, fractions, seed)
    return Graph(X, E, labels, roles, name=name)


# ---------------------------------------------------------------------------
# synthetic graphs
# ---------------------------------------------------------------------------

def make_csbm(n=200, classes=2, d=8, p_in=0.05, p_out=0.005, sep=2.0, noise=1.0,
              train_per_class=4, n_val=0, seed=0) -> Graph:
    """Contextual stochastic block model: Gaussian class means plus SBM edges."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    means = rng.normal(size=(classes, d))
    means *= sep / np.linalg.norm(means, axis=1, keepdims=True)
    X = means[labels] + noise * rng.normal(size=(n, d))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    iu = np.triu_indices(n, 1)
    hit = rng.random(iu[0].size) < prob[iu]
    E = np.stack([iu[0][hit], iu[1][hit]], axis=1)
    order = rng.permutation(n)
    train = []
    for c in range(classes):
        train.extend([i for i in order if labels[i] == c][:train_per_class])
    rest = [i for i in order if i not in set(train)]
    val = rest[:n_val]
    test = rest[n_val:]
    return Graph(X, E, labels, roles_from_indices(n, train, val, test), name="csbm")


def two_cliques(size=6, d=3, seed=0, bridge=False) -> Graph:
    """Two cliques with distinct constant features (optionally one bridging edge)."""
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=d), rng.normal(size=d)
    X = np.vstack([np.tile(a, (size, 1)), np.tile(b, (size, 1))])
    E = [(i, j) for i in range(size) for j in range(i + 1, size)]
    E += [(size + i, size + j) for i in range(size) for j in range(i + 1, size)]
    if bridge:
        E.append((0, size))
    labels = np.repeat([0, 1], size)
    roles = np.full(2 * size, int(Role.TEST), dtype=np.int8)
    return Graph(X, E, labels, roles, name="two_cliques")
