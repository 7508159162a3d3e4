"""One unsupervised kernel-PCA message-passing layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .graph import AggregationMode
from .kernels import KernelSpec, center, cross_gram, gram
from .numerics import NumericalError, top_eigenpairs

POSITIVE_EIG = 1e-10


class RankDeficientError(NumericalError):
    pass


def fit_layer(Kc, s: int, eta: float):
    """Top-s eigenvectors of Kc and Lambda = diag(eigenvalues) / eta."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    Kc = np.asarray(Kc, dtype=np.float64)
    if s > Kc.shape[0]:
        raise RankDeficientError("rank deficient for requested width")
    res = top_eigenpairs(Kc, s)
    if res.values[-1] <= POSITIVE_EIG:
        raise RankDeficientError(
            f"rank deficient for requested width (s={s}, "
            f"{int(np.sum(res.values > POSITIVE_EIG))} positive eigenvalues)"
        )
    return res.vectors, np.diag(res.values / eta)


def numerical_rank(Kc) -> int:
    w = np.linalg.eigvalsh(np.asarray(Kc, dtype=np.float64))
    return int(np.sum(w > POSITIVE_EIG))


def layer_objective(H, Kc, eta: float) -> float:
    H = np.asarray(H, dtype=np.float64)
    return -float(np.sum(H * (Kc @ H))) / (2.0 * eta)


def rayleigh_lambda(H, Kc, eta: float) -> np.ndarray:
    """Symmetrized H' Kc H / eta; equals the fitted Lambda at an eigen-solution."""
    L = H.T @ (Kc @ H) / eta
    return 0.5 * (L + L.T)


@dataclass
class GckmLayerModel:
    H: np.ndarray          # n_tr x s
    Lam: np.ndarray        # s x s
    eta: float
    kernel: KernelSpec
    aggregation: AggregationMode
    inputs: np.ndarray     # aggregated training inputs, n_tr x d
    K: np.ndarray          # uncentered training Gram
    edge_mix: float = 1.0  # alpha in alpha*k + (1-alpha)*edge indicator

    @property
    def s(self) -> int:
        return self.H.shape[1]

    @property
    def errors(self) -> np.ndarray:
        E = self.H @ self.Lam
        E.setflags(write=False)
        return E

    @classmethod
    def fit(cls, inputs, kernel: KernelSpec, s: int, eta: float,
            aggregation=AggregationMode.GCN, K=None) -> "GckmLayerModel":
        inputs = np.asarray(inputs, dtype=np.float64)
        if K is None:
            K = gram(kernel, inputs)
        H, Lam = fit_layer(center(K), s, eta)
        return cls(H, Lam, float(eta), kernel, AggregationMode(aggregation), inputs, K)

    def objective(self) -> float:
        return layer_objective(self.H, center(self.K), self.eta)

    def out_of_sample(self, a_new, edge_rows=None, rowwise: bool = True) -> np.ndarray:
        """Dual representation of new nodes from their aggregated inputs.

        ``(1/eta) (k_x - colmean(K)) H Lambda^-1`` row by row, where
        ``colmean(K)`` is the mean training Gram row.  ``edge_rows`` (m x n_tr
        0/1) is required when the layer mixes the kernel with edge indicators.
        """
        a_new = np.atleast_2d(np.asarray(a_new, dtype=np.float64))
        if a_new.shape[1] != self.inputs.shape[1]:
            raise ValueError(
                f"feature dimension {a_new.shape[1]} does not match the layer's {self.inputs.shape[1]}"
            )
        Kx = cross_gram(self.kernel, a_new, self.inputs, rowwise=rowwise)
        if self.edge_mix != 1.0:
            if edge_rows is None:
                raise ValueError("edge indicators needed for a mixed-kernel layer")
            Kx = self.edge_mix * Kx + (1.0 - self.edge_mix) * np.asarray(edge_rows, dtype=np.float64)
        Kx -= self.K.mean(axis=0)[None, :]
        B = np.linalg.solve(self.Lam.T, self.H.T) / self.eta  # s x n_tr == (H Lam^-1 / eta)'
        if rowwise:
            return _accel.rowwise_dot(Kx, B)
        return Kx @ B.T
