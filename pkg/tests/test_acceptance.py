"""Exit criteria 1-12 plus the PubMed subsample run.

Every check records one PASS/FAIL line; conftest prints them in the terminal
summary.  Criteria 7-12 need the public benchmark files under
``$GCKM_DATA_DIR``:

    planetoid/ind.cora.*        Planetoid release of Cora
    planetoid/ind.pubmed.*      Planetoid release of PubMed
    chameleon/out1_*.txt        Geom-GCN release of Chameleon
"""
import functools
import itertools
import os
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import random_graph
from test_layer import WL_LIBRARY, wl_pairs
from test_model import config, csbm, finite_difference_check, small_graph
from gckm.cli import SearchSpace, run_search
from gckm.config import ModelConfig
from gckm.datasets import (
    geom_gcn_to_graph,
    planetoid_to_graph,
    subsample,
    write_dataset,
)
from gckm.graph import Graph, Role, aggregate, permute
from gckm.kernels import KernelSpec, gram
from gckm.layer import GckmLayerModel
from gckm.model import cluster, default_cluster_config, infer, infer_duplicates, train
from gckm.numerics import top_eigenpairs
from gckm.metrics import nmi
from gckm.semisup import SemiSupModel, predict, scores, solve

pytestmark = pytest.mark.acceptance

RESULTS: dict = {}


class Blocked(RuntimeError):
    """A required input is missing, so the criterion cannot be evaluated."""


def criterion(key: str, title: str):
    def wrap(fn):
        @functools.wraps(fn)
        def test(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Blocked as exc:
                ok, detail = False, f"blocked: {exc}"
            except Exception as exc:
                RESULTS[key] = (False, title, f"error: {type(exc).__name__}: {exc}")
                raise
            RESULTS[key] = (ok, title, detail)
            assert ok, detail
        return test
    return wrap


# ---------------------------------------------------------------------------
# 1-6: exactness checks on generated inputs
# ---------------------------------------------------------------------------

EIG_VALUE_TOL = 1e-9
EIG_ANGLE_TOL = 1e-8
EIG_TIME_LIMIT = 10.0


@criterion("1", "eigenpairs vs Jacobi oracle")
def test_c01_eigenpairs():
    rng = np.random.default_rng(1)
    worst_val = worst_angle = elapsed = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 101))
        rank = int(rng.integers(1, n + 1))
        B = rng.normal(size=(n, rank)) / np.sqrt(max(n, rank))
        A = B @ B.T
        A = 0.5 * (A + A.T)
        s = int(rng.integers(1, min(rank, 16) + 1))
        t0 = time.perf_counter()
        res = top_eigenpairs(A, s)
        elapsed += time.perf_counter() - t0
        w, V = oracles.top_eig(A, s)
        worst_val = max(worst_val, float(np.max(np.abs(res.values - w))))
        worst_angle = max(worst_angle, oracles.max_principal_angle(res.vectors, V))
    ok = worst_val < EIG_VALUE_TOL and worst_angle < EIG_ANGLE_TOL and elapsed < EIG_TIME_LIMIT
    return ok, (f"max |dlambda| {worst_val:.1e} (<{EIG_VALUE_TOL:g}), max angle {worst_angle:.1e} "
                f"(<{EIG_ANGLE_TOL:g}), {elapsed:.2f}s (<{EIG_TIME_LIMIT:g}s)")


SEMI_TOL = 1e-8
SEMI_TIME_LIMIT = 10.0


def explicit_residuals(m: SemiSupModel):
    """First-order conditions written with dense diagonal matrices."""
    n = m.K.shape[0]
    R = np.diag(m.weights.r)
    L = np.diag(m.weights.l)
    one = np.ones((n, 1))
    fit = m.K @ R @ m.H / m.eta + one @ m.b[None, :] + np.linalg.inv(R) @ L @ m.C / m.lam2
    return float(np.max(np.abs(m.H - fit))), float(np.max(np.abs(one.T @ R @ m.H)))


@criterion("2", "read-out stationarity and argmax invariance")
def test_c02_semisup():
    rng = np.random.default_rng(2)
    worst = 0.0
    flips = 0
    elapsed = 0.0
    for _ in range(50):
        n = int(rng.integers(6, 61))
        p = int(rng.integers(2, 6))
        X = rng.normal(size=(n, int(rng.integers(1, 6))))
        K = gram(KernelSpec("rbf", float(np.exp(rng.uniform(-1, 2)))), X)
        labels = rng.integers(0, p, size=n)
        mask = np.zeros(n, bool)
        mask[rng.choice(n, int(rng.integers(1, n // 2 + 1)), replace=False)] = True
        eta, lam1, lam2 = np.exp(rng.uniform(-1, 1, size=3))
        t0 = time.perf_counter()
        m = SemiSupModel.fit(K, labels, mask, p, eta, lam1, lam2)
        base = m.predict()
        elapsed += time.perf_counter() - t0
        worst = max(worst, *explicit_residuals(m))
        for c in (0.01, 3.0, 250.0):
            H = solve(K, m.weights, c * m.C, eta, lam2)
            flips += int(np.sum(predict(scores(H, m.weights, c * m.C, lam2)) != base))
    ok = worst < SEMI_TOL and flips == 0 and elapsed < SEMI_TIME_LIMIT
    return ok, f"max residual {worst:.1e} (<{SEMI_TOL:g}), label flips under rescaling {flips}, {elapsed:.2f}s"


OOS_TOL = 1e-8
OOS_TIME_LIMIT = 5.0


@criterion("3", "out-of-sample self-consistency")
def test_c03_out_of_sample():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for mode in ("gcn", "sum", "none"):
        for _ in range(5):
            g = random_graph(rng, 40, 0.15, d=4)
            A = aggregate(g, g.features, mode)
            m = GckmLayerModel.fit(A, KernelSpec("rbf", 1.0), 5, float(np.exp(rng.uniform(-1, 1))), mode)
            worst = max(worst, float(np.max(np.abs(m.out_of_sample(A) - m.H))))
    mismatches = 0
    for seed in range(3):
        g = csbm(seed=seed)
        st, _ = train(g, config(max_iter=5))
        nodes = np.arange(g.n)
        mismatches += int(np.sum(infer_duplicates(st, g, nodes) != infer(st, g, nodes)))
    elapsed = time.perf_counter() - t0
    ok = worst < OOS_TOL and mismatches == 0 and elapsed < OOS_TIME_LIMIT
    return ok, f"max |H_oos - H| {worst:.1e} (<{OOS_TOL:g}), duplicate label mismatches {mismatches}, {elapsed:.2f}s"


FD_STEP = 1e-5
FD_TOL = 1e-5


@criterion("4", "analytic gradient vs central differences")
def test_c04_gradient():
    g = small_graph(n=12)
    assert g.n == 12
    rel = finite_difference_check(g, config(widths=(4, 3), family="rbf", sigma2=2.0), h=FD_STEP)
    return rel < FD_TOL, f"relative error {rel:.1e} (<{FD_TOL:g}), step {FD_STEP:g}"


@criterion("5", "permutation equivariance")
def test_c05_permutation():
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(20):
        n = int(rng.integers(8, 21))
        g = random_graph(rng, n, 0.25, d=4, classes=2)
        roles = np.full(n, int(Role.TEST), dtype=np.int8)
        roles[:4] = Role.TRAIN
        roles[4:6] = Role.VAL
        g = Graph(g.features, g.edges, g.labels, roles)
        cfg = config(widths=(4, 3), max_iter=3)
        perm = rng.permutation(n)
        st, _ = train(g, cfg)
        gp = permute(g, perm)
        stp, _ = train(gp, cfg)
        bad += int(not np.array_equal(infer(stp, gp), infer(st, g)[perm]))
    return bad == 0, f"{bad} of 20 graphs break exact equivariance"


WL_GAP = 1e-10
WL_MIN_PAIRS = 30


@criterion("6", "one-step WL separation")
def test_c06_weisfeiler_lehman():
    rbf = KernelSpec("rbf", 1.0)
    pairs = separated = equal_pairs = equal_rows = 0
    for n, edges, colours in WL_LIBRARY:
        X = np.eye(3)[colours]
        g = Graph(X, edges, [-1] * n, [int(Role.UNLABELED)] * n)
        A = aggregate(g, X, "sum")
        K = gram(rbf, A)
        for u, v in wl_pairs(n, edges, colours):
            pairs += 1
            gap_a = float(np.max(np.abs(A[u] - A[v])))
            gap_k = float(np.max(np.abs(K[u] - K[v])))
            separated += int(gap_a > WL_GAP and gap_k > WL_GAP)
        sig = oracles.wl_colors(n, edges, colours)
        for u, v in itertools.combinations(range(n), 2):
            if sig[u] == sig[v]:
                equal_pairs += 1
                equal_rows += int(np.array_equal(A[u], A[v]) and np.array_equal(np.sort(K[u]), np.sort(K[v])))
    ok = pairs >= WL_MIN_PAIRS and separated == pairs and equal_rows == equal_pairs
    return ok, (f"{separated}/{pairs} separated pairs distinct (gap >{WL_GAP:g}, need >= {WL_MIN_PAIRS}), "
                f"{equal_rows}/{equal_pairs} WL-equal pairs identical")


# ---------------------------------------------------------------------------
# 7-12: public benchmarks
# ---------------------------------------------------------------------------

SEARCH_TRIALS = 200
SEARCH_SEED = 0
# finetuning schedule shared by every searched configuration
SEARCH_BASE = {"optimizer": {"max_iter": 50, "lr": 1e-3}}

WORK = Path(os.environ.get("GCKM_ACCEPT_WORK") or tempfile.mkdtemp(prefix="gckm-accept-"))


def raw_dir(sub: str, probe: str) -> Path:
    root = os.environ.get("GCKM_DATA_DIR")
    if not root:
        raise Blocked(f"GCKM_DATA_DIR is unset; expected {sub}/{probe}")
    d = Path(root) / sub
    if not (d / probe).is_file():
        raise Blocked(f"{d / probe} not found")
    return d


def _stage(g: Graph, name: str) -> Path:
    d = WORK / name
    if not (d / "features.csv").exists():
        write_dataset(g, d)
    return d


@functools.cache
def cora(split: str) -> Graph:
    return planetoid_to_graph(raw_dir("planetoid", "ind.cora.x"), "cora", split)


@functools.cache
def chameleon() -> Graph:
    return geom_gcn_to_graph(raw_dir("chameleon", "out1_graph_edges.txt"), "chameleon")


@functools.cache
def searched(name: str, metric: str, merge_val: bool, multiview: bool = False):
    """Random search, then a retrain of the winner; returns (config, report, search seconds)."""
    g = chameleon() if name == "chameleon" else cora(name.split("-")[1])
    base = dict(SEARCH_BASE, merge_val=merge_val, readout={"multiview": multiview})
    space = SearchSpace(base=base)
    t0 = time.perf_counter()
    board = run_search(_stage(g, name), space, SEARCH_TRIALS, metric, SEARCH_SEED, parallel=os.cpu_count() or 1)
    search_seconds = time.perf_counter() - t0
    ok = [r for r in board if r["status"] == "ok"]
    if not ok:
        raise RuntimeError(f"all {SEARCH_TRIALS} trials failed on {name}")
    cfg = ModelConfig.from_dict(ok[0]["config"])
    _, report = train(g, cfg)
    return cfg, report, search_seconds


CORA_FEW_ACC = 0.787
SINGLE_RUN_LIMIT = 65.0
SEARCH_LIMIT = 4 * 3600.0


@criterion("7", "Cora few-label accuracy")
def test_c07_cora_few_label():
    cfg, rep, search_s = searched("cora-few", "unsup", True)
    acc = rep.accuracy["test"]
    ok = acc >= CORA_FEW_ACC and rep.wall_clock < SINGLE_RUN_LIMIT and search_s < SEARCH_LIMIT
    return ok, (f"test acc {acc:.4f} (>={CORA_FEW_ACC}), single run {rep.wall_clock:.1f}s (<{SINGLE_RUN_LIMIT:g}s), "
                f"search {search_s / 3600:.2f}h (<4h)")


CORA_STD_ACC = 0.822


@criterion("8", "Cora standard-split accuracy")
def test_c08_cora_standard():
    cfg, rep, _ = searched("cora-standard", "val_acc", False)
    g = cora("standard")
    st_a, rep_a = train(g, cfg)
    st_b, rep_b = train(g, cfg)
    same = np.array_equal(infer(st_a, g), infer(st_b, g)) and rep_a.metrics() == rep_b.metrics()
    acc = rep.accuracy["test"]
    return acc >= CORA_STD_ACC and same, f"test acc {acc:.4f} (>={CORA_STD_ACC}), repeat identical {same}"


CORA_NMI = 0.44


@criterion("9", "Cora clustering NMI")
def test_c09_cora_clustering():
    g = cora("standard")
    assign = cluster(g, default_cluster_config(), 7, seed=0)
    known = g.labels >= 0
    score = nmi(assign[known], g.labels[known])
    return score >= CORA_NMI, f"NMI {score:.4f} (>={CORA_NMI}), k=7"


DEPTH_ACC_GAP = 0.03
DEPTH_TIME_RATIO = 6.0


@criterion("10", "depth ablation")
def test_c10_depth():
    cfg, _, _ = searched("cora-few", "unsup", True)
    g = cora("few")
    deep = ModelConfig.from_dict(cfg.to_dict())
    deep.layers = [deep.layers[0]] + [ModelConfig.from_dict(cfg.to_dict()).layers[-1] for _ in range(7)]
    _, r2 = train(g, cfg)
    _, r8 = train(g, deep)
    gap = abs(r8.accuracy["test"] - r2.accuracy["test"])
    ratio = r8.wall_clock / r2.wall_clock
    ok = gap <= DEPTH_ACC_GAP and ratio <= DEPTH_TIME_RATIO
    return ok, f"|acc8 - acc2| {gap:.4f} (<={DEPTH_ACC_GAP}), time ratio {ratio:.2f} (<={DEPTH_TIME_RATIO:g})"


SPARSITY_GATE = 0.90
SPARSITY_TARGET = 0.98


@criterion("11", "read-out system sparsity")
def test_c11_sparsity():
    _, rep, _ = searched("cora-few", "unsup", True)
    frac = rep.sparsity
    return frac >= SPARSITY_GATE, (f"fraction below 1e-10 {frac:.4f} (>={SPARSITY_GATE}; "
                                   f"informational target {SPARSITY_TARGET} {'met' if frac >= SPARSITY_TARGET else 'missed'})")


MV_MARGIN = 0.03


@criterion("12", "Chameleon multiview margin")
def test_c12_chameleon_multiview():
    _, plain, _ = searched("chameleon", "unsup", True)
    _, mv, _ = searched("chameleon", "unsup", True, multiview=True)
    margin = mv.accuracy["test"] - plain.accuracy["test"]
    return margin >= MV_MARGIN, (f"multiview {mv.accuracy['test']:.4f} vs plain {plain.accuracy['test']:.4f}, "
                                 f"margin {margin:.4f} (>={MV_MARGIN})")


PUBMED_NODES = 5000
PUBMED_TRAIN_NODES = 1500


def subsample_run(g: Graph) -> tuple[bool, str]:
    """Property-only run: train on a node subset, everything else out-of-sample."""
    g = subsample(g, PUBMED_NODES, seed=0)
    cfg = ModelConfig.from_dict({
        "layers": [{"width": 16, "kernel": {"sigma2": "auto"}}, {"width": 8, "kernel": {"sigma2": "auto"}}],
        "optimizer": {"max_iter": 2},
        "train_subset": PUBMED_TRAIN_NODES,
    })
    st, rep = train(g, cfg)
    pred = infer(st, g)
    p = int(g.labels.max()) + 1
    checks = {
        "n": g.n <= PUBMED_NODES,
        "train nodes": rep.extra["n_train_nodes"] == PUBMED_TRAIN_NODES,
        "labels": pred.shape == (g.n,) and pred.min() >= 0 and pred.max() < p,
        "finite objective": bool(np.all(np.isfinite(rep.objective_trace))),
        "orthonormal": max(rep.ortho_trace) <= 1e-3,
    }
    failed = [k for k, v in checks.items() if not v]
    return not failed, f"n={g.n}, trained on {PUBMED_TRAIN_NODES}, failed properties: {failed or 'none'}"


@criterion("pubmed", "PubMed subsample run")
def test_pubmed_subsample():
    g = planetoid_to_graph(raw_dir("planetoid", "ind.pubmed.x"), "pubmed", "standard")
    return subsample_run(g)


def _write_planetoid(raw: Path, name: str, rng, n=19717, d=500, p=3, n_train=60, n_test=1000):
    """PubMed-shaped files in the Planetoid pickle layout."""
    import pickle
    from collections import defaultdict

    import scipy.sparse as sp

    labels = rng.integers(0, p, size=n)
    centres = rng.random((p, d)) < 0.02
    dense = (rng.random((n, d)) < 0.01) | (centres[labels] & (rng.random((n, d)) < 0.5))
    X = sp.csr_matrix(dense * rng.random((n, d)))
    Y = np.eye(p)[labels]
    allx_rows = n - n_test
    graph = defaultdict(list)
    src = rng.integers(0, n, size=3 * n)
    dst = np.where(rng.random(3 * n) < 0.8, _same_class(rng, labels, src), rng.integers(0, n, size=3 * n))
    for u, v in zip(src, dst):
        if u != v:
            graph[int(u)].append(int(v))
    objs = dict(x=X[:n_train], y=Y[:n_train], allx=X[:allx_rows], ally=Y[:allx_rows],
                tx=X[allx_rows:], ty=Y[allx_rows:], graph=graph)
    for key, obj in objs.items():
        with open(raw / f"ind.{name}.{key}", "wb") as fh:
            pickle.dump(obj, fh)
    # test rows live at the end of the node range in the release
    (raw / f"ind.{name}.test.index").write_text("\n".join(map(str, np.arange(allx_rows, n))))
    return n


def _same_class(rng, labels, src):
    order = np.argsort(labels, kind="stable")
    starts = np.searchsorted(labels[order], labels[src])
    counts = np.bincount(labels)[labels[src]]
    return order[starts + (rng.random(src.size) * counts).astype(np.int64)]


def test_pubmed_shaped_surrogate(tmp_path):
    """Same code path as the PubMed run, on generated files of PubMed's shape."""
    n = _write_planetoid(tmp_path, "pubmed", np.random.default_rng(7))
    g = planetoid_to_graph(tmp_path, "pubmed", "standard")
    assert g.n == n and g.features.shape[1] == 500
    ok, detail = subsample_run(g)
    assert ok, detail
