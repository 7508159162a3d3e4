"""Model configuration, loaded from and written to JSON."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .graph import AggregationMode
from .kernels import KernelError, KernelSpec

SELECT_METRICS = ("val_acc", "unsup", "comb", "last")


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


@dataclass
class KernelConfig:
    """Kernel settings; ``sigma2 = "auto"`` resolves to the bandwidth heuristic."""

    family: str = "rbf"
    sigma2: float | str = 1.0
    degree: int = 1
    offset: float = 0.0

    def resolve(self, sigma2: float | None = None) -> KernelSpec:
        s2 = sigma2 if self.sigma2 == "auto" else self.sigma2
        return KernelSpec(self.family, float(s2 if s2 is not None else 1.0), int(self.degree), float(self.offset))


@dataclass
class LayerConfig:
    width: int = 32
    eta: float = 1.0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    aggregation: str = "gcn"
    edge_mix: float = 1.0


@dataclass
class ReadoutConfig:
    eta: float = 1.0
    lam1: float = 1.0
    lam2: float = 1.0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    multiview: bool = False
    multiview_kernel: KernelConfig = field(default_factory=KernelConfig)
    # -1: supervision rewarded (read-out dual); +1: the alternative sign
    supervision_sign: float = -1.0


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    max_iter: int = 0
    reortho_tol: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    inner_iters: int = 2
    exact_cayley: bool = False
    select: str = "val_acc"


@dataclass
class ModelConfig:
    layers: list = field(default_factory=lambda: [LayerConfig(), LayerConfig()])
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    merge_val: bool = False
    train_subset: int | None = None  # train on this many nodes, the rest via out-of-sample

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = _build(cls, d, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("layers", "at least one layer is required")
        for i, lc in enumerate(self.layers):
            p = f"layers[{i}]"
            _positive(lc.eta, f"{p}.eta")
            if not isinstance(lc.width, int) or lc.width < 1:
                raise ConfigError(f"{p}.width", "must be a positive integer")
            try:
                AggregationMode(lc.aggregation)
            except ValueError:
                raise ConfigError(f"{p}.aggregation", f"unknown mode {lc.aggregation!r}") from None
            if not 0.0 <= lc.edge_mix <= 1.0:
                raise ConfigError(f"{p}.edge_mix", "must lie in [0, 1]")
            _check_kernel(lc.kernel, f"{p}.kernel")
        ro = self.readout
        for name in ("eta", "lam1", "lam2"):
            _positive(getattr(ro, name), f"readout.{name}")
        _check_kernel(ro.kernel, "readout.kernel")
        _check_kernel(ro.multiview_kernel, "readout.multiview_kernel")
        if ro.supervision_sign not in (-1, 1, -1.0, 1.0):
            raise ConfigError("readout.supervision_sign", "must be -1 or +1")
        op = self.optimizer
        if not isinstance(op.max_iter, int) or op.max_iter < 0:
            raise ConfigError("optimizer.max_iter", "must be a non-negative integer")
        _positive(op.lr, "optimizer.lr")
        if op.select not in SELECT_METRICS:
            raise ConfigError("optimizer.select", f"must be one of {SELECT_METRICS}")
        if self.train_subset is not None and (not isinstance(self.train_subset, int) or self.train_subset < 2):
            raise ConfigError("train_subset", "must be an integer >= 2 or null")


def _positive(x, path):
    if not isinstance(x, (int, float)) or isinstance(x, bool) or not x > 0:
        raise ConfigError(path, "must be a positive number")


def _check_kernel(kc: KernelConfig, path: str):
    if kc.sigma2 != "auto" and not isinstance(kc.sigma2, (int, float)):
        raise ConfigError(f"{path}.sigma2", "must be a number or \"auto\"")
    try:
        kc.resolve(1.0)
    except (KernelError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


_NESTED = {
    (ModelConfig, "readout"): ReadoutConfig,
    (ModelConfig, "optimizer"): OptimizerConfig,
    (LayerConfig, "kernel"): KernelConfig,
    (ReadoutConfig, "kernel"): KernelConfig,
    (ReadoutConfig, "multiview_kernel"): KernelConfig,
}


def _build(cls, d, path):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    kwargs = {}
    for key, val in d.items():
        sub = f"{path}.{key}" if path else key
        if (cls, key) in _NESTED:
            val = _build(_NESTED[(cls, key)], val, sub)
        elif cls is ModelConfig and key == "layers":
            if not isinstance(val, list):
                raise ConfigError(sub, "expected a list")
            val = [_build(LayerConfig, item, f"{sub}[{i}]") for i, item in enumerate(val)]
        kwargs[key] = val
    return cls(**kwargs)
