"""Command-line entry points: train, search, eval, cluster, convert, synth.

Exit codes: 0 success, 1 configuration error, 2 numerical failure or
model/data mismatch, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _accel
from .config import ConfigError, KernelConfig, LayerConfig, ModelConfig
from .datasets import DatasetError, load_dataset
from .graph import Graph, validate_split
from .kernels import KernelError, load_gram, save_gram
from .metrics import accuracy, unsup_to_score
from .numerics import NumericalError

log = logging.getLogger("gckm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
LEADERBOARD_VERSION = "gckm-leaderboard/1"


def apply_thread_limit() -> int | None:
    """Honour GCKM_THREADS for BLAS and numba; returns the limit if set."""
    raw = os.environ.get("GCKM_THREADS")
    if not raw:
        return None
    n = max(1, int(raw))
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)
    if _accel.HAVE_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def _dump(obj, path=None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path:
        Path(path).write_text(text + "\n")
    return text


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train(g: Graph, cfg: ModelConfig, cache_grams=None):
    from . import model

    if cache_grams is None:
        return model.train(g, cfg)
    path = Path(cache_grams)
    if path.exists():
        ctx = model.make_context(g, cfg, K1_kernel=load_gram(path))
        log.info("loaded first-layer Gram from %s", path)
    else:
        ctx = model.make_context(g, cfg)
        save_gram(path, ctx.K1_kernel)
        log.info("wrote first-layer Gram to %s", path)
    return model.train(g, cfg, ctx=ctx)


def cmd_train(args) -> int:
    from . import model

    cfg = ModelConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    g = load_dataset(args.data)
    cache = args.cache_grams
    if cache == "":
        cache = str(args.out) + ".gram1.bin"
    state, report = _train(g, cfg, cache)
    model.save_model(args.out, state, cfg)
    rep = report.to_dict()
    rep["seed"] = cfg.seed
    _dump(rep, args.report or str(args.out) + ".report.json")
    print(_dump({"accuracy": rep["accuracy"], "l_unsup": rep["l_unsup"], "best_iteration": rep["best_iteration"]}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

@dataclass
class SearchSpace:
    """Sampling distributions; ranges are natural-log bounds for log-uniform draws."""

    log_sigma2: tuple = (-3.0, 5.0)
    log_offset: tuple = (-5.0, 5.0)
    degree: tuple = (1, 2)
    width: tuple = (16, 32, 64)
    log_eta: tuple = (-4.0, 4.0)
    log_lam: tuple = (-4.0, 4.0)
    layer_families: tuple = ("rbf",)
    readout_families: tuple = ("rbf",)
    base: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "SearchSpace":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON ({exc})") from None
        names = {f.name for f in fields(cls)}
        for key in d:
            if key not in names:
                raise ConfigError(key, "unknown search-space field")
        sp = cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})
        for key in ("log_sigma2", "log_offset", "log_eta", "log_lam"):
            lo_hi = getattr(sp, key)
            if len(lo_hi) != 2 or not lo_hi[0] <= lo_hi[1]:
                raise ConfigError(key, "expected [low, high]")
        ModelConfig.from_dict(sp.base)  # validates the base block early
        return sp

    def _kernel(self, rng, families) -> KernelConfig:
        fam = families[int(rng.integers(len(families)))]
        if fam == "rbf":
            return KernelConfig("rbf", float(math.exp(rng.uniform(*self.log_sigma2))))
        if fam == "polynomial":
            return KernelConfig(
                "polynomial", 1.0, int(self.degree[int(rng.integers(len(self.degree)))]),
                float(math.exp(rng.uniform(*self.log_offset))),
            )
        return KernelConfig("linear")

    def sample(self, seed: int, trial: int) -> ModelConfig:
        rng = np.random.default_rng([seed, trial])
        base = ModelConfig.from_dict(self.base)
        layers = []
        for lc in base.layers:
            layers.append(LayerConfig(
                width=int(self.width[int(rng.integers(len(self.width)))]),
                eta=float(math.exp(rng.uniform(*self.log_eta))),
                kernel=self._kernel(rng, self.layer_families),
                aggregation=lc.aggregation,
                edge_mix=lc.edge_mix,
            ))
        base.layers = layers
        base.readout.eta = float(math.exp(rng.uniform(*self.log_eta)))
        base.readout.lam1 = float(math.exp(rng.uniform(*self.log_lam)))
        base.readout.lam2 = float(math.exp(rng.uniform(*self.log_lam)))
        base.readout.kernel = self._kernel(rng, self.readout_families)
        if base.readout.multiview:
            base.readout.multiview_kernel = self._kernel(rng, self.readout_families)
        base.seed = seed
        base.validate()
        return base


def trial_score(metric: str, rep: dict) -> float | None:
    """Higher-is-better ranking value for a finished trial."""
    if metric == "val_acc":
        return rep["accuracy"].get("val")
    if metric == "unsup":
        return None if rep["l_unsup"] is None else unsup_to_score(rep["l_unsup"])
    if metric == "comb":
        return rep["l_comb"]
    raise ConfigError("metric", f"unknown metric {metric!r}")


_GRAPH_CACHE: dict = {}


def _run_trial(job):
    data, space, seed, trial, metric = job
    from . import model

    apply_thread_limit()
    entry = {"trial": trial, "status": "ok"}
    try:
        cfg = space.sample(seed, trial)
        entry["config"] = cfg.to_dict()
        if data not in _GRAPH_CACHE:
            _GRAPH_CACHE[data] = load_dataset(data)
        g = _GRAPH_CACHE[data]
        cfg.optimizer.select = metric
        entry["config"] = cfg.to_dict()
        _, report = model.train(g, cfg)
        rep = report.to_dict()
        entry["metrics"] = {
            "accuracy": rep["accuracy"], "l_unsup": rep["l_unsup"], "l_comb": rep["l_comb"],
            "best_iteration": rep["best_iteration"], "sparsity": rep["sparsity"],
        }
        entry["wall_clock"] = rep["wall_clock"]
        score = trial_score(metric, rep)
        if score is None or not np.isfinite(score):
            raise NumericalError(f"metric {metric!r} unavailable for this dataset")
        entry["score"] = float(score)
    except Exception as exc:  # failed trials are recorded, never fatal
        entry["status"] = "failed"
        entry["error"] = f"{type(exc).__name__}: {exc}"
        entry["traceback"] = traceback.format_exc()
    return entry


def run_search(data, space: SearchSpace, trials: int, metric: str, seed: int, parallel: int = 1) -> list:
    jobs = [(str(data), space, seed, t, metric) for t in range(trials)]
    if parallel <= 1:
        results = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            results = list(ex.map(_run_trial, jobs))
    ok = sorted((r for r in results if r["status"] == "ok"), key=lambda r: (-r["score"], r["trial"]))
    failed = [r for r in results if r["status"] != "ok"]
    for rank, r in enumerate(ok, 1):
        r["rank"] = rank
    return ok + failed


def cmd_search(args) -> int:
    from . import model

    if args.trials < 1:
        raise ConfigError("trials", "must be >= 1")
    space = SearchSpace.load(args.space) if args.space else SearchSpace()
    if not Path(args.data).is_dir():
        raise DatasetError(f"missing dataset directory: {args.data}")
    board = run_search(args.data, space, args.trials, args.metric, args.seed, args.parallel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lean = [{k: v for k, v in r.items() if k not in ("wall_clock", "traceback")} for r in board]
    _dump({"schema": LEADERBOARD_VERSION, "metric": args.metric, "seed": args.seed, "trials": args.trials,
           "leaderboard": lean}, out / "leaderboard.json")
    _dump([{"trial": r["trial"], "error": r["error"], "traceback": r["traceback"]} for r in board
           if r["status"] != "ok"], out / "failed_trials.json")
    ok = [r for r in board if r["status"] == "ok"]
    summary = {"completed": len(ok), "failed": len(board) - len(ok)}
    if ok:
        best_cfg = ModelConfig.from_dict(ok[0]["config"])
        g = load_dataset(args.data)
        state, report = model.train(g, best_cfg)
        model.save_model(out / "best_model.npz", state, best_cfg)
        _dump(best_cfg.to_dict(), out / "best_config.json")
        _dump(report.to_dict(), out / "best_report.json")
        summary.update({"best_trial": ok[0]["trial"], "best_score": ok[0]["score"],
                        "best_accuracy": report.accuracy})
    print(_dump(summary))
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# eval / cluster
# ---------------------------------------------------------------------------

def _parse_nodes(spec: str, g: Graph) -> np.ndarray:
    from .graph import Role

    if spec == "all":
        return np.arange(g.n)
    if spec == "test":
        return np.flatnonzero(g.mask(Role.TEST))
    text = Path(spec).read_text().split()
    return np.array([int(t) for t in text], dtype=np.int64)


def cmd_eval(args) -> int:
    from . import model

    if not Path(args.model).is_file():
        raise FileNotFoundError(f"missing model file: {args.model}")
    state, cfg = model.load_model(args.model)
    g = load_dataset(args.data)
    nodes = _parse_nodes(args.nodes, g)
    if args.oos:
        pred = model.infer_duplicates(state, g, nodes)
    else:
        pred = model.infer(state, g, nodes)
    known = g.labels[nodes] >= 0
    out = {
        "nodes": int(nodes.size),
        "route": "out-of-sample" if args.oos else "transductive",
        "accuracy": accuracy(pred, g.labels[nodes], known) if known.any() else None,
        "predictions": [int(p) for p in pred],
    }
    if args.nodes == "all" and not args.oos:
        rep = model.evaluate(state, g, cfg).metrics()
        out["report"] = {k: rep[k] for k in ("accuracy", "l_unsup", "l_comb", "sparsity")}
    print(_dump(out))
    return EXIT_OK


def cmd_cluster(args) -> int:
    from . import model

    g = load_dataset(args.data)
    cfg = ModelConfig.load(args.config) if args.config else model.default_cluster_config(args.width)
    if args.k < 1:
        raise ConfigError("k", "must be >= 1")
    assign = model.cluster(g, cfg, args.k, args.seed)
    rep = model.cluster_report(g, assign)
    rep["seed"] = args.seed
    if args.out:
        _dump(rep, args.out)
    print(_dump({k: v for k, v in rep.items() if k != "assignments"}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# dataset helpers
# ---------------------------------------------------------------------------

def cmd_convert(args) -> int:
    from . import datasets

    if args.format == "planetoid":
        g = datasets.planetoid_to_graph(args.raw, args.name, args.split, args.seed)
    else:
        g = datasets.geom_gcn_to_graph(args.raw, args.name, seed=args.seed)
    if args.subsample:
        g = datasets.subsample(g, args.subsample, args.seed)
    datasets.write_dataset(g, args.out)
    print(_dump(validate_split(g)))
    return EXIT_OK


def cmd_synth(args) -> int:
    from . import datasets

    g = datasets.make_csbm(n=args.n, classes=args.classes, d=args.dim, p_in=args.p_in, p_out=args.p_out,
                           sep=args.sep, train_per_class=args.train_per_class, n_val=args.n_val, seed=args.seed)
    datasets.write_dataset(g, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gckm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.add_argument("--seed", type=int)
    t.add_argument("--cache-grams", nargs="?", const="", default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("search", help="random hyperparameter search")
    s.add_argument("--data", required=True)
    s.add_argument("--space")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--metric", choices=("val_acc", "unsup", "comb"), default="val_acc")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--out", default="search_out")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="evaluate a saved model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--nodes", default="all", help="all, test, or a file of node ids")
    e.add_argument("--oos", action="store_true", help="route the nodes through the out-of-sample formulas")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cluster", help="unsupervised clustering with k-means on the second layer")
    c.add_argument("--data", required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--config")
    c.add_argument("--width", type=int, default=32)
    c.add_argument("--out")
    c.set_defaults(func=cmd_cluster)

    v = sub.add_parser("convert", help="convert a raw public dataset to the directory format")
    v.add_argument("--format", choices=("planetoid", "geom-gcn"), required=True)
    v.add_argument("--raw", required=True)
    v.add_argument("--name", required=True)
    v.add_argument("--split", choices=("standard", "few"), default="few")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--subsample", type=int, help="keep an induced subgraph on this many nodes")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_convert)

    y = sub.add_parser("synth", help="write a contextual stochastic block model dataset")
    y.add_argument("--out", required=True)
    y.add_argument("--n", type=int, default=200)
    y.add_argument("--classes", type=int, default=2)
    y.add_argument("--dim", type=int, default=8)
    y.add_argument("--p-in", type=float, default=0.05)
    y.add_argument("--p-out", type=float, default=0.005)
    y.add_argument("--sep", type=float, default=2.0)
    y.add_argument("--train-per-class", type=int, default=4)
    y.add_argument("--n-val", type=int, default=0)
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    apply_thread_limit()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, KernelError, ValueError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
