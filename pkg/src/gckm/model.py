"""Stacked kernel-PCA message-passing layers with a semi-supervised read-out.

Training follows a block-coordinate scheme: a Cayley-Adam step on the layer
duals (with the read-out duals and weights frozen), then recomputation of the
downstream Grams and an exact linear solve for the read-out duals.

Nodes outside ``train_idx`` (subset training, or nodes added after training)
are mapped by the layer out-of-sample formula and the read-out score formula.
"""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _accel
from .config import KernelConfig, LayerConfig, ModelConfig
from .graph import AggregationMode, Graph, Role, aggregate
from .kernels import KernelSpec, center, cross_gram, gram, gram_input_grad, rbf_bandwidth_heuristic
from .layer import GckmLayerModel, RankDeficientError, fit_layer, layer_objective, numerical_rank, rayleigh_lambda
from .metrics import ClassCodings, accuracy, combined_score, nmi, unsup_cosine, unsup_to_score
from .numerics import CayleyAdamState, NumericalError, cayley_adam_step, orthogonality_loss
from .semisup import SemiSupModel, energy, sparsity, system_matrix

log = logging.getLogger(__name__)

MODEL_VERSION = "gckm-model/1"
REPORT_VERSION = "gckm-report/1"


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass
class Context:
    """Graph-level quantities fixed for the whole run."""

    g: Graph
    cfg: ModelConfig
    train_idx: np.ndarray
    labeled: np.ndarray        # over train_idx
    labels_tr: np.ndarray
    p: int
    specs: list = field(default_factory=list)   # resolved per layer
    readout_spec: KernelSpec | None = None
    mv_spec: KernelSpec | None = None
    A1_full: np.ndarray | None = None
    K1: np.ndarray | None = None
    K1_kernel: np.ndarray | None = None
    Kmv: np.ndarray | None = None
    adjacency: np.ndarray | None = None

    @property
    def oos_idx(self) -> np.ndarray:
        mask = np.ones(self.g.n, dtype=bool)
        mask[self.train_idx] = False
        return np.flatnonzero(mask)


@dataclass
class Forward:
    layers: list          # GckmLayerModel per layer
    Kk: list              # kernel part of each layer Gram (before edge mixing)
    Kc: list
    H_full: list          # n x s per layer, out-of-sample rows filled in
    Z: np.ndarray         # read-out inputs on train rows
    Kh: np.ndarray        # read-out Gram on Z
    K3: np.ndarray        # read-out Gram (times the multiview Gram if active)


@dataclass
class DualState:
    layers: list
    readout: SemiSupModel
    train_idx: np.ndarray
    readout_spec: KernelSpec
    mv_spec: KernelSpec | None
    Z: np.ndarray
    X_tr: np.ndarray | None
    p: int
    n_graph: int
    iteration: int = 0
    objective_trace: list = field(default_factory=list)
    ortho_trace: list = field(default_factory=list)
    metric_trace: list = field(default_factory=list)
    constraint_trace: list = field(default_factory=list)
    best_iteration: int = 0
    supervision_sign: float = -1.0

    @property
    def Hs(self) -> list:
        return [lm.H for lm in self.layers]


@dataclass
class EvalReport:
    accuracy: dict
    l_unsup: float | None
    l_comb: float | None
    nmi: float | None
    objective_trace: list
    ortho_trace: list
    metric_trace: list
    best_iteration: int
    wall_clock: float
    sparsity: float | None
    supervision_sign: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "extra"}
        d.update(self.extra)
        d["schema"] = REPORT_VERSION
        d["backend"] = _accel.backend()
        return d

    def metrics(self) -> dict:
        """Deterministic part of the report (no timings)."""
        d = self.to_dict()
        d.pop("wall_clock", None)
        return d


# ---------------------------------------------------------------------------
# setup and forward pass
# ---------------------------------------------------------------------------

def _layer_mode(lc: LayerConfig) -> AggregationMode:
    return AggregationMode(lc.aggregation)


def _resolve(kc: KernelConfig, X) -> KernelSpec:
    return kc.resolve(rbf_bandwidth_heuristic(X) if kc.sigma2 == "auto" else None)


def label_mask(g: Graph, cfg: ModelConfig) -> np.ndarray:
    roles = (Role.TRAIN, Role.VAL) if cfg.merge_val else (Role.TRAIN,)
    return g.mask(*roles) & (g.labels >= 0)


def select_train_nodes(g: Graph, cfg: ModelConfig) -> np.ndarray:
    if cfg.train_subset is None or cfg.train_subset >= g.n:
        return np.arange(g.n)
    lab = np.flatnonzero(label_mask(g, cfg))
    rest = np.setdiff1d(np.arange(g.n), lab)
    k = max(0, cfg.train_subset - lab.size)
    rng = np.random.default_rng(cfg.seed)
    pick = rng.choice(rest, size=min(k, rest.size), replace=False)
    return np.sort(np.concatenate([lab, pick]))


def make_context(g: Graph, cfg: ModelConfig, K1_kernel=None) -> Context:
    cfg.validate()
    tr = select_train_nodes(g, cfg)
    labeled = label_mask(g, cfg)[tr]
    p = g.num_classes
    ctx = Context(g, cfg, tr, labeled, g.labels[tr], p)
    if any(lc.edge_mix != 1.0 for lc in cfg.layers):
        ctx.adjacency = g.adjacency()
    lc0 = cfg.layers[0]
    ctx.A1_full = aggregate(g, g.features, _layer_mode(lc0))
    A1 = ctx.A1_full[tr]
    spec = _resolve(lc0.kernel, A1)
    ctx.specs = [spec]
    if K1_kernel is not None:
        if K1_kernel.shape != (tr.size, tr.size):
            raise NumericalError(f"cached Gram {K1_kernel.shape} does not match {tr.size} training nodes")
        ctx.K1_kernel = np.asarray(K1_kernel, dtype=np.float64)
    else:
        ctx.K1_kernel = gram(spec, A1)
    ctx.K1 = _mix(ctx, lc0, ctx.K1_kernel)
    if cfg.readout.multiview:
        Xtr = g.features[tr]
        ctx.mv_spec = _resolve(cfg.readout.multiview_kernel, Xtr)
        ctx.Kmv = gram(ctx.mv_spec, Xtr)
    return ctx


def _mix(ctx: Context, lc: LayerConfig, K):
    if lc.edge_mix == 1.0:
        return K
    tr = ctx.train_idx
    return lc.edge_mix * K + (1.0 - lc.edge_mix) * ctx.adjacency[np.ix_(tr, tr)]


def forward(ctx: Context, Hs=None, Lams=None) -> Forward:
    """Build every layer from the given duals; missing duals are fitted by eigen-solve.

    When fitting, kernels with ``sigma2 = "auto"`` are resolved and stored on
    ``ctx`` so later passes reuse the same bandwidth.
    """
    cfg, g, tr = ctx.cfg, ctx.g, ctx.train_idx
    oos = ctx.oos_idx
    layers, Kks, Kcs, H_fulls = [], [], [], []
    prev_full = None
    for l, lc in enumerate(cfg.layers):
        mode = _layer_mode(lc)
        if l == 0:
            A_full = ctx.A1_full
            A = A_full[tr]
            Kk, K = ctx.K1_kernel, ctx.K1
        else:
            A_full = aggregate(g, prev_full, mode)
            A = A_full[tr]
            if len(ctx.specs) <= l:
                ctx.specs.append(_resolve(lc.kernel, A))
            Kk = gram(ctx.specs[l], A)
            K = _mix(ctx, lc, Kk)
        Kc = center(K)
        if Hs is None or Hs[l] is None:
            try:
                H, Lam = fit_layer(Kc, lc.width, lc.eta)
            except NumericalError as exc:
                raise NumericalError(f"layer {l + 1}: {exc}") from exc
        else:
            H = Hs[l]
            Lam = Lams[l] if Lams is not None and Lams[l] is not None else rayleigh_lambda(H, Kc, lc.eta)
        lm = GckmLayerModel(H, Lam, lc.eta, ctx.specs[l], mode, A, K, lc.edge_mix)
        H_full = np.zeros((g.n, H.shape[1]))
        H_full[tr] = H
        if oos.size:
            edge_rows = ctx.adjacency[np.ix_(oos, tr)] if lc.edge_mix != 1.0 else None
            H_full[oos] = lm.out_of_sample(A_full[oos], edge_rows)
        layers.append(lm)
        Kks.append(Kk)
        Kcs.append(Kc)
        H_fulls.append(H_full)
        prev_full = H_full
    Z = prev_full[tr]
    if ctx.readout_spec is None:
        ctx.readout_spec = _resolve(cfg.readout.kernel, Z)
    Kh = gram(ctx.readout_spec, Z)
    K3 = Kh * ctx.Kmv if ctx.Kmv is not None else Kh
    return Forward(layers, Kks, Kcs, H_fulls, Z, Kh, K3)


def solve_readout(ctx: Context, fw: Forward) -> SemiSupModel:
    ro = ctx.cfg.readout
    if ctx.p < 2:
        raise NumericalError("read-out needs at least two classes")
    try:
        return SemiSupModel.fit(fw.K3, ctx.labels_tr, ctx.labeled, ctx.p, ro.eta, ro.lam1, ro.lam2)
    except NumericalError as exc:
        raise NumericalError(f"read-out: {exc}") from exc


# ---------------------------------------------------------------------------
# objective and gradients
# ---------------------------------------------------------------------------

def total_objective(fw: Forward, readout: SemiSupModel, cfg: ModelConfig) -> float:
    """Sum of layer objectives plus the read-out energy on the current Grams."""
    J = sum(layer_objective(lm.H, Kc, lm.eta) for lm, Kc in zip(fw.layers, fw.Kc))
    ro = cfg.readout
    J += energy(readout.H, fw.K3, readout.weights, readout.C, ro.eta, ro.lam2, ro.supervision_sign)
    return float(J)


def objective_at(ctx: Context, Hs, readout: SemiSupModel) -> float:
    """Objective with the read-out duals and weights frozen (the finetuning target)."""
    return total_objective(forward(ctx, Hs), readout, ctx.cfg)


def gradients(ctx: Context, fw: Forward, readout: SemiSupModel) -> list:
    """Analytic gradient of the objective w.r.t. each layer's train-row duals."""
    cfg, g, tr = ctx.cfg, ctx.g, ctx.train_idx
    L = len(cfg.layers)
    grads = []
    for l in range(L):
        lm = fw.layers[l]
        G = -(fw.Kc[l] @ lm.H) / lm.eta
        if l + 1 < L:
            nxt = fw.layers[l + 1]
            lc = cfg.layers[l + 1]
            P = nxt.H - nxt.H.mean(axis=0, keepdims=True)
            GK = -(P @ P.T) * (lc.edge_mix / (2.0 * nxt.eta))
            dA = gram_input_grad(nxt.kernel, nxt.inputs, fw.Kk[l + 1], GK)
            if _layer_mode(lc) is AggregationMode.NONE:
                G = G + dA
            else:
                full = np.zeros((g.n, dA.shape[1]))
                full[tr] = dA
                G = G + aggregate(g, full, _layer_mode(lc))[tr]
        else:
            P = readout.weights.r[:, None] * readout.H
            GK = -(P @ P.T) / (2.0 * cfg.readout.eta)
            if ctx.Kmv is not None:
                GK = GK * ctx.Kmv
            G = G + gram_input_grad(ctx.readout_spec, fw.Z, fw.Kh, GK)
        grads.append(G)
    return grads


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def _readout_cross(state: DualState, Z_new, X_new=None):
    Kx = cross_gram(state.readout_spec, Z_new, state.Z, rowwise=True)
    if state.mv_spec is not None:
        Kx = Kx * cross_gram(state.mv_spec, X_new, state.X_tr, rowwise=True)
    return Kx


def all_scores(state: DualState, fw_H_last_full: np.ndarray, g: Graph) -> np.ndarray:
    """Score rows for every node of ``g``: transductive for train rows, out-of-sample otherwise."""
    E = np.zeros((g.n, state.p))
    tr = state.train_idx
    E[tr] = state.readout.scores()
    mask = np.ones(g.n, dtype=bool)
    mask[tr] = False
    oos = np.flatnonzero(mask)
    if oos.size:
        Kx = _readout_cross(state, fw_H_last_full[oos], g.features[oos] if state.mv_spec else None)
        E[oos] = state.readout.out_of_sample_scores(Kx)
    return E


def _unsup_nodes(g: Graph, cfg: ModelConfig) -> np.ndarray:
    lab = label_mask(g, cfg)
    val = g.mask(Role.VAL) & ~lab
    return ~lab & ~val


def selection_metrics(g: Graph, cfg: ModelConfig, E: np.ndarray) -> dict:
    pred = np.argmax(E, axis=1)
    out = {}
    lab = label_mask(g, cfg)
    val = g.mask(Role.VAL) & ~lab & (g.labels >= 0)
    n_val = int(val.sum())
    out["val_acc"] = accuracy(pred, g.labels, val) if n_val else None
    un = _unsup_nodes(g, cfg)
    n_un = int(un.sum())
    out["l_unsup"] = unsup_cosine(E[un], ClassCodings.one_vs_all(E.shape[1])) if n_un and E.shape[1] >= 2 else None
    if n_val or n_un:
        out["l_comb"] = combined_score(
            out["val_acc"] or 0.0, n_val, out["l_unsup"] if out["l_unsup"] is not None else 2.0, n_un
        )
    else:
        out["l_comb"] = None
    return out


def _selection_score(metric: str, m: dict, iteration: int) -> float:
    if metric == "last":
        return float(iteration)
    if metric == "val_acc" and m["val_acc"] is not None:
        return m["val_acc"]
    if metric == "comb" and m["l_comb"] is not None:
        return m["l_comb"]
    if m["l_unsup"] is not None:
        return unsup_to_score(m["l_unsup"])
    return float(-iteration)


# ---------------------------------------------------------------------------
# initialize / train / infer
# ---------------------------------------------------------------------------

def _make_state(ctx: Context, fw: Forward, readout: SemiSupModel, iteration: int) -> DualState:
    return DualState(
        layers=list(fw.layers),
        readout=readout,
        train_idx=ctx.train_idx,
        readout_spec=ctx.readout_spec,
        mv_spec=ctx.mv_spec,
        Z=fw.Z,
        X_tr=ctx.g.features[ctx.train_idx] if ctx.mv_spec is not None else None,
        p=ctx.p,
        n_graph=ctx.g.n,
        iteration=iteration,
        supervision_sign=ctx.cfg.readout.supervision_sign,
    )


def initialize(g: Graph, cfg: ModelConfig, ctx: Context | None = None) -> DualState:
    ctx = ctx or make_context(g, cfg)
    fw = forward(ctx)
    readout = solve_readout(ctx, fw)
    state = _make_state(ctx, fw, readout, 0)
    state.objective_trace.append(total_objective(fw, readout, cfg))
    state.ortho_trace.append(orthogonality_loss(state.Hs))
    state.constraint_trace.append(float(np.max(np.abs(readout.H.T @ readout.weights.r))))
    return state


def train(g: Graph, cfg: ModelConfig, callback=None, ctx: Context | None = None):
    """Initialize, then finetune for ``cfg.optimizer.max_iter`` outer iterations.

    Returns the best iterate under ``cfg.optimizer.select`` and its report.
    """
    t0 = time.perf_counter()
    ctx = ctx or make_context(g, cfg)
    log.info("supervision sign %+d in the objective", int(cfg.readout.supervision_sign))
    fw = forward(ctx)
    readout = solve_readout(ctx, fw)
    state = _make_state(ctx, fw, readout, 0)
    op = cfg.optimizer
    traces = {"objective": [], "ortho": [], "metric": [], "constraint": []}

    def record(fw, readout, st, k):
        J = total_objective(fw, readout, cfg)
        if not np.isfinite(J):
            raise NumericalError(f"non-finite objective at iteration {k}")
        traces["objective"].append(J)
        traces["ortho"].append(orthogonality_loss(st.Hs))
        traces["constraint"].append(float(np.max(np.abs(readout.H.T @ readout.weights.r))))
        E = all_scores(st, fw.H_full[-1], g)
        m = selection_metrics(g, cfg, E)
        traces["metric"].append(m)
        if callback is not None:
            callback(k, J, m)
        return _selection_score(op.select, m, k)

    best_score = record(fw, readout, state, 0)
    best = state
    opt = CayleyAdamState(
        lr=op.lr, beta1=op.beta1, beta2=op.beta2, eps=op.eps, inner_iters=op.inner_iters,
        reortho_tol=op.reortho_tol / len(cfg.layers), exact=op.exact_cayley,
    )
    Hs = state.Hs
    for k in range(1, op.max_iter + 1):
        grads = gradients(ctx, fw, readout)
        opt, Hs = cayley_adam_step(opt, Hs, grads)
        try:
            fw = forward(ctx, Hs)
            readout = solve_readout(ctx, fw)
        except NumericalError as exc:
            raise NumericalError(f"iteration {k}: {exc}") from exc
        state = _make_state(ctx, fw, readout, k)
        score = record(fw, readout, state, k)
        if score > best_score:
            best_score, best = score, state
    best.objective_trace = traces["objective"]
    best.ortho_trace = traces["ortho"]
    best.metric_trace = traces["metric"]
    best.constraint_trace = traces["constraint"]
    best.best_iteration = best.iteration
    report = evaluate(best, g, cfg, wall_clock=time.perf_counter() - t0)
    return best, report


def propagate(state: DualState, g: Graph) -> list:
    """Per-layer n x s duals for every node of ``g`` (stored rows for train nodes)."""
    if g.n < state.n_graph:
        raise ValueError("graph has fewer nodes than the training graph")
    tr = state.train_idx
    mask = np.ones(g.n, dtype=bool)
    mask[tr] = False
    oos = np.flatnonzero(mask)
    prev = g.features
    if prev.shape[1] != state.layers[0].inputs.shape[1]:
        raise ValueError(
            f"feature dimension {prev.shape[1]} does not match the model's {state.layers[0].inputs.shape[1]}"
        )
    adjacency = g.adjacency() if any(lm.edge_mix != 1.0 for lm in state.layers) else None
    out = []
    for lm in state.layers:
        H_full = np.zeros((g.n, lm.s))
        H_full[tr] = lm.H
        if oos.size:
            A_oos = aggregate(g, prev, lm.aggregation)[oos]
            edge_rows = adjacency[np.ix_(oos, tr)] if lm.edge_mix != 1.0 else None
            H_full[oos] = lm.out_of_sample(A_oos, edge_rows)
        out.append(H_full)
        prev = H_full
    return out


def infer(state: DualState, g: Graph, target_nodes=None, return_scores: bool = False):
    """Labels for ``target_nodes`` (default all).

    Train nodes are read from the state; other nodes of ``g`` go through the
    layer out-of-sample chain and the read-out score formula.
    """
    nodes = np.arange(g.n) if target_nodes is None else np.asarray(target_nodes, dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= g.n):
        raise ValueError("unknown node id")
    H_last = propagate(state, g)[-1]
    E = all_scores(state, H_last, g)
    pred = np.argmax(E, axis=1)
    return (pred[nodes], E[nodes]) if return_scores else pred[nodes]


def evaluate(state: DualState, g: Graph, cfg: ModelConfig, wall_clock: float = 0.0) -> EvalReport:
    H_last = propagate(state, g)[-1]
    E = all_scores(state, H_last, g)
    pred = np.argmax(E, axis=1)
    acc = {}
    for r in Role:
        sel = (g.roles == r) & (g.labels >= 0)
        acc[r.name.lower()] = accuracy(pred, g.labels, sel) if sel.any() else None
    m = selection_metrics(g, cfg, E)
    A = system_matrix(state.readout.K, state.readout.weights.r, state.readout.eta)
    return EvalReport(
        accuracy=acc,
        l_unsup=m["l_unsup"],
        l_comb=m["l_comb"],
        nmi=None,
        objective_trace=list(state.objective_trace),
        ortho_trace=list(state.ortho_trace),
        metric_trace=list(state.metric_trace),
        best_iteration=state.best_iteration,
        wall_clock=wall_clock,
        sparsity=sparsity(A),
        supervision_sign=cfg.readout.supervision_sign,
        extra={"n_train_nodes": int(state.train_idx.size), "constraint_trace": list(state.constraint_trace)},
    )


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def default_cluster_config(width: int = 32) -> ModelConfig:
    layer = LayerConfig(width=width, eta=1.0, kernel=KernelConfig("rbf", "auto"), aggregation="gcn")
    return ModelConfig(layers=[layer, copy.deepcopy(layer)])


def cluster_embedding(g: Graph, cfg: ModelConfig) -> np.ndarray:
    """Second-layer duals of two unsupervised layers, widths capped at the numerical rank."""
    if len(cfg.layers) < 2:
        raise ValueError("clustering needs two layers")
    prev = g.features
    H = None
    for l, lc in enumerate(cfg.layers[:2]):
        A = aggregate(g, prev, _layer_mode(lc))
        spec = _resolve(lc.kernel, A)
        Kc = center(_mix_full(g, lc, gram(spec, A)))
        width = lc.width
        rank = numerical_rank(Kc)
        if rank < width:
            log.warning("layer %d: width %d capped at numerical rank %d", l + 1, width, rank)
            width = rank
        if width < 1:
            raise RankDeficientError(f"layer {l + 1}: rank deficient for requested width")
        H, _ = fit_layer(Kc, width, lc.eta)
        prev = H
    return H


def _mix_full(g, lc, K):
    return K if lc.edge_mix == 1.0 else lc.edge_mix * K + (1.0 - lc.edge_mix) * g.adjacency()


def cluster(g: Graph, cfg: ModelConfig | None, k: int, seed: int = 0) -> np.ndarray:
    from sklearn.cluster import KMeans

    if k < 1 or k > g.n:
        raise ValueError(f"k must lie in [1, n={g.n}]")
    if k == 1:
        return np.zeros(g.n, dtype=np.int64)
    if k == g.n:
        # one node per cluster; k-means cannot guarantee it when embedding rows coincide
        return np.arange(g.n, dtype=np.int64)
    H = cluster_embedding(g, cfg or default_cluster_config())
    km = KMeans(n_clusters=k, init="k-means++", n_init=20, random_state=seed)
    return km.fit_predict(H).astype(np.int64)


def cluster_report(g: Graph, assign) -> dict:
    known = g.labels >= 0
    return {
        "k": int(len(np.unique(assign))),
        "nmi": nmi(assign[known], g.labels[known]) if known.any() else None,
        "assignments": [int(a) for a in assign],
    }


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def save_model(path, state: DualState, cfg: ModelConfig) -> None:
    meta = {
        "version": MODEL_VERSION,
        "config": cfg.to_dict(),
        "layers": [
            {"kernel": lm.kernel.to_dict(), "aggregation": lm.aggregation.value, "eta": lm.eta,
             "edge_mix": lm.edge_mix}
            for lm in state.layers
        ],
        "readout": {
            "kernel": state.readout_spec.to_dict(),
            "mv_kernel": state.mv_spec.to_dict() if state.mv_spec else None,
            "eta": state.readout.eta, "lam1": state.readout.lam1, "lam2": state.readout.lam2,
        },
        "p": state.p,
        "n_graph": state.n_graph,
        "iteration": state.iteration,
        "best_iteration": state.best_iteration,
        "supervision_sign": state.supervision_sign,
        "objective_trace": state.objective_trace,
        "ortho_trace": state.ortho_trace,
        "metric_trace": state.metric_trace,
        "constraint_trace": state.constraint_trace,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), "train_idx": state.train_idx}
    for i, lm in enumerate(state.layers):
        arrays.update({f"layer{i}_H": lm.H, f"layer{i}_Lam": lm.Lam, f"layer{i}_inputs": lm.inputs, f"layer{i}_K": lm.K})
    ro = state.readout
    arrays.update({
        "ro_H": ro.H, "ro_b": ro.b, "ro_v": ro.weights.v, "ro_r": ro.weights.r, "ro_l": ro.weights.l,
        "ro_C": ro.C, "ro_K": ro.K, "ro_Z": state.Z,
    })
    if state.X_tr is not None:
        arrays["ro_Xtr"] = state.X_tr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    from .semisup import Weights

    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {meta.get('version')!r}")
        layers = []
        for i, lmeta in enumerate(meta["layers"]):
            layers.append(GckmLayerModel(
                z[f"layer{i}_H"], z[f"layer{i}_Lam"], lmeta["eta"], KernelSpec.from_dict(lmeta["kernel"]),
                AggregationMode(lmeta["aggregation"]), z[f"layer{i}_inputs"], z[f"layer{i}_K"], lmeta["edge_mix"],
            ))
        rm = meta["readout"]
        w = Weights(z["ro_v"], z["ro_r"], z["ro_l"])
        readout = SemiSupModel(z["ro_H"], z["ro_b"], w, z["ro_C"], z["ro_K"], rm["eta"], rm["lam1"], rm["lam2"])
        state = DualState(
            layers=layers, readout=readout, train_idx=z["train_idx"],
            readout_spec=KernelSpec.from_dict(rm["kernel"]),
            mv_spec=KernelSpec.from_dict(rm["mv_kernel"]) if rm["mv_kernel"] else None,
            Z=z["ro_Z"], X_tr=z["ro_Xtr"] if "ro_Xtr" in z else None,
            p=meta["p"], n_graph=meta["n_graph"], iteration=meta["iteration"],
            objective_trace=meta["objective_trace"], ortho_trace=meta["ortho_trace"],
            metric_trace=meta["metric_trace"], constraint_trace=meta["constraint_trace"],
            best_iteration=meta["best_iteration"], supervision_sign=meta["supervision_sign"],
        )
    return state, ModelConfig.from_dict(meta["config"])


def infer_duplicates(state: DualState, g: Graph, nodes, return_scores: bool = False):
    """Labels for out-of-sample copies of ``nodes`` (same features and neighbours).

    Each copy is routed through the layer out-of-sample formula and the read-out
    score formula instead of reading the stored duals of the original node.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size and (nodes.min() < 0 or nodes.max() >= g.n):
        raise ValueError("unknown node id")
    fulls = propagate(state, g)
    adjacency = g.adjacency() if any(lm.edge_mix != 1.0 for lm in state.layers) else None
    prev_full, prev_dup = g.features, g.features[nodes]
    for lm, H_full in zip(state.layers, fulls):
        A_dup = _aggregate_copy(g, prev_full, prev_dup, nodes, lm.aggregation)
        edge_rows = adjacency[np.ix_(nodes, state.train_idx)] if lm.edge_mix != 1.0 else None
        prev_dup = lm.out_of_sample(A_dup, edge_rows)
        prev_full = H_full
    Kx = _readout_cross(state, prev_dup, g.features[nodes] if state.mv_spec else None)
    E = state.readout.out_of_sample_scores(Kx)
    pred = np.argmax(E, axis=1)
    return (pred, E) if return_scores else pred


def _aggregate_copy(g: Graph, F, F_copy, nodes, mode: AggregationMode):
    # row v of aggregate(F) with F[v] swapped for the copy's own row
    if mode is AggregationMode.NONE:
        return F_copy.copy()
    from .graph import degrees

    agg = aggregate(g, F, mode)[nodes]
    if mode is AggregationMode.SUM:
        w = np.ones(nodes.size)
    else:
        w = 1.0 / degrees(g, True)[nodes].astype(np.float64)
    return agg + w[:, None] * (F_copy - F[nodes])
