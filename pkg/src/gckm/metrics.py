"""Accuracy, centered-cosine unsupervised score, combined score and NMI."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def accuracy(pred, truth, mask=None) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    sel = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("empty mask")
    return float(np.mean(pred[sel] == truth[sel]))


@dataclass(frozen=True)
class ClassCodings:
    codes: np.ndarray  # p x p, row s is the code of class s
    mu: np.ndarray

    @classmethod
    def one_vs_all(cls, p: int) -> "ClassCodings":
        if p < 2:
            raise ValueError("need at least two classes")
        codes = 2.0 * np.eye(p) - 1.0
        return cls(codes, codes.mean(axis=0))


def cosine_distances(E, codings: ClassCodings) -> np.ndarray:
    """m x p matrix of centered cosine distances; degenerate rows get distance 1."""
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    U = E - codings.mu[None, :]
    Cc = codings.codes - codings.mu[None, :]
    un = np.linalg.norm(U, axis=1)
    cn = np.linalg.norm(Cc, axis=1)
    bad = un <= 1e-12
    if bad.any():
        log.warning("%d score row(s) coincide with the coding centre; using distance 1", int(bad.sum()))
    safe = np.where(bad, 1.0, un)
    cos = (U @ Cc.T) / (safe[:, None] * cn[None, :])
    cos[bad] = 0.0
    return np.clip(1.0 - cos, 0.0, 2.0)


def unsup_cosine(E, codings: ClassCodings) -> float:
    """Mean over rows of the distance to the nearest class coding (0 = perfect)."""
    D = cosine_distances(E, codings)
    if D.shape[0] == 0:
        raise ValueError("no score rows")
    return float(np.mean(D.min(axis=1)))


def unsup_to_score(l_unsup: float) -> float:
    """Map the [0, 2] distance onto a [1, 0] higher-is-better score."""
    return 1.0 - l_unsup / 2.0


def combined_score(acc_val: float, n_val: int, l_unsup: float, n_test: int) -> float:
    """Count-weighted mean of validation accuracy and the converted unsupervised score."""
    if n_val < 0 or n_test < 0:
        raise ValueError("counts must be non-negative")
    if n_val + n_test == 0:
        raise ValueError("both counts are zero")
    u = unsup_to_score(l_unsup)
    if n_test == 0:
        return float(acc_val)
    if n_val == 0:
        return float(u)
    return (n_val * acc_val + n_test * u) / (n_val + n_test)


def _entropy(counts, n) -> float:
    return -math.fsum((c / n) * math.log(c / n) for c in counts if c > 0)


def nmi(a, b) -> float:
    """Normalized mutual information, arithmetic-mean normalization.

    All sums are exactly rounded (``math.fsum``) so ``nmi(a, b) == nmi(b, a)``.
    """
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need two equal-length non-empty labelings")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ca = np.bincount(ai)
    cb = np.bincount(bi)
    ha, hb = _entropy(ca, n), _entropy(cb, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    pairs, joint = np.unique(np.stack([ai, bi], axis=1), axis=0, return_counts=True)
    mi = math.fsum(
        (nij / n) * math.log(n * nij / (ca[i] * cb[j])) for (i, j), nij in zip(pairs, joint)
    )
    val = mi / (0.5 * (ha + hb))
    return float(min(1.0, max(0.0, val)))
