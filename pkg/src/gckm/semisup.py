"""Semi-supervised restricted kernel machine read-out.

Dual system in the unknown ``Z = R H``::

    (I - (1/eta) R S K) Z = (1/lam2) S' L C,     S = I - 1 r' / (1' r)

with ``r_i = v_i / lam1 - l_i / lam2`` and ``v_i = 1 / sum_j K_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _accel
from .numerics import NumericalError, solve_dense


class DegenerateWeightingError(NumericalError):
    pass


@dataclass(frozen=True)
class Weights:
    v: np.ndarray
    r: np.ndarray
    l: np.ndarray  # 0/1 float labelled indicator

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r)

    @property
    def L(self) -> np.ndarray:
        return np.diag(self.l)


def build_weights(K, labeled, lam1: float, lam2: float) -> Weights:
    if lam1 <= 0 or lam2 <= 0:
        raise ValueError("lam1 and lam2 must be positive")
    K = np.asarray(K, dtype=np.float64)
    l = np.asarray(labeled, dtype=bool).astype(np.float64)
    if l.shape[0] != K.shape[0]:
        raise ValueError("labelled mask length does not match the Gram")
    rowsum = K.sum(axis=1)
    if np.any(rowsum <= 1e-12):
        raise DegenerateWeightingError("non-positive Gram row sum; inverse degree undefined")
    v = 1.0 / rowsum
    r = v / lam1 - l / lam2
    if np.any(np.abs(r) <= 1e-12):
        raise DegenerateWeightingError("degenerate weighting; perturb λ₁ or λ₂")
    return Weights(v, r, l)


def encode_labels(labels, labeled, p: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(labeled, dtype=bool)
    y = labels[mask]
    if y.size and (y.min() < 0 or y.max() >= p):
        raise ValueError("label outside [0, p)")
    C = np.zeros((labels.shape[0], p))
    rows = np.flatnonzero(mask)
    C[rows] = -1.0
    C[rows, y] = 1.0
    return C


def _total_weight(r) -> float:
    tot = float(np.sum(r))
    if abs(tot) <= 1e-12 * max(1.0, float(np.sum(np.abs(r)))):
        raise DegenerateWeightingError("1'R1 is numerically zero")
    return tot


def system_matrix(K, r, eta: float) -> np.ndarray:
    """I - (1/eta) R S K."""
    K = np.asarray(K, dtype=np.float64)
    tot = _total_weight(r)
    RSK = r[:, None] * K - np.outer(r, K @ r) / tot
    A = -RSK / eta
    A[np.diag_indices_from(A)] += 1.0
    return A


def solve(K, w: Weights, C, eta: float, lam2: float) -> np.ndarray:
    r, l = w.r, w.l
    tot = _total_weight(r)
    LC = l[:, None] * C
    rhs = (LC - np.outer(r, LC.sum(axis=0)) / tot) / lam2  # S' L C / lam2
    Z = solve_dense(system_matrix(K, r, eta), rhs)
    return Z / r[:, None]


def bias(H, K, w: Weights, C, eta: float, lam2: float) -> np.ndarray:
    r, l = w.r, w.l
    tot = _total_weight(r)
    RH = r[:, None] * H
    return -(((K @ r) @ RH) / eta + (l[:, None] * C).sum(axis=0) / lam2) / tot


def scores(H, w: Weights, C, lam2: float) -> np.ndarray:
    """e_i = h_i - l_i c_i / (r_i lam2); unlabelled rows are copied verbatim."""
    E = np.array(H, dtype=np.float64, copy=True)
    lab = w.l > 0
    E[lab] -= C[lab] / (w.r[lab, None] * lam2)
    return E


def predict(E) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    E = np.asarray(E)
    if E.ndim != 2 or E.shape[1] < 2:
        raise ValueError("need at least two classes")
    return np.argmax(E, axis=1)


def out_of_sample_scores(H, b, r, eta: float, k_rows, rowwise: bool = True) -> np.ndarray:
    """(1/eta) sum_i r_i h_i k(x_i, x) + b for each row of ``k_rows`` (m x n)."""
    k_rows = np.asarray(k_rows, dtype=np.float64)
    single = k_rows.ndim == 1
    k_rows = np.atleast_2d(k_rows)
    if k_rows.shape[1] != H.shape[0]:
        raise ValueError("kernel row length does not match the training set")
    RHt = np.ascontiguousarray((r[:, None] * H).T)
    out = (_accel.rowwise_dot(k_rows, RHt) if rowwise else k_rows @ RHt.T) / eta + b[None, :]
    return out[0] if single else out


def energy(H, K, w: Weights, C, eta: float, lam2: float, supervision_sign: float = -1.0) -> float:
    """-(1/2eta) Tr(H'RKRH) + 1/2 Tr(H'RH) + sign/lam2 Tr(H'LC)."""
    RH = w.r[:, None] * H
    quad = float(np.sum(RH * (K @ RH)))
    return -quad / (2.0 * eta) + 0.5 * float(np.sum(H * RH)) + supervision_sign * float(
        np.sum(H * (w.l[:, None] * C))
    ) / lam2


def stationarity_residuals(H, b, K, w: Weights, C, eta: float, lam2: float) -> dict:
    """Max-abs residuals of the first-order conditions with W eliminated."""
    r, l = w.r, w.l
    RH = r[:, None] * H
    recon = (K @ RH) / eta + b[None, :] + (l[:, None] * C) / (r[:, None] * lam2)
    return {
        "stationarity": float(np.max(np.abs(H - recon))),
        "constraint": float(np.max(np.abs(H.T @ r))) if H.size else 0.0,
    }


def sparsity(A, tol: float = 1e-10) -> float:
    """Fraction of entries with magnitude below ``tol``."""
    A = np.asarray(A)
    return float(np.mean(np.abs(A) < tol))


@dataclass
class SemiSupModel:
    H: np.ndarray
    b: np.ndarray
    weights: Weights
    C: np.ndarray
    K: np.ndarray
    eta: float
    lam1: float
    lam2: float

    @classmethod
    def fit(cls, K, labels, labeled, p: int, eta: float, lam1: float, lam2: float) -> "SemiSupModel":
        w = build_weights(K, labeled, lam1, lam2)
        C = encode_labels(labels, labeled, p)
        H = solve(K, w, C, eta, lam2)
        return cls(H, bias(H, K, w, C, eta, lam2), w, C, np.asarray(K, dtype=np.float64), eta, lam1, lam2)

    def scores(self) -> np.ndarray:
        return scores(self.H, self.weights, self.C, self.lam2)

    def predict(self) -> np.ndarray:
        return predict(self.scores())

    def out_of_sample_scores(self, k_rows, rowwise: bool = True) -> np.ndarray:
        return out_of_sample_scores(self.H, self.b, self.weights.r, self.eta, k_rows, rowwise)

    def energy(self, supervision_sign: float = -1.0) -> float:
        return energy(self.H, self.K, self.weights, self.C, self.eta, self.lam2, supervision_sign)
