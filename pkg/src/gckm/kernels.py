"""Kernel functions, Gram construction, centering and composite kernels.

Conventions::

    linear      k(x, y) = x.y
    polynomial  k(x, y) = (x.y + t) ** p
    rbf         k(x, y) = exp(-|x - y|^2 / (2 sigma2))

Gram matrices are plain float64 ndarrays.  Square Grams are made exactly
symmetric by mirroring the upper triangle.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _accel


class KernelError(ValueError):
    pass


FAMILIES = ("linear", "polynomial", "rbf")


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    sigma2: float = 1.0
    degree: int = 1
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        if self.family == "rbf" and not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise KernelError("rbf kernel needs sigma2 > 0")
        if self.family == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise KernelError("polynomial degree must be an integer >= 1")
            if not np.isfinite(self.offset):
                raise KernelError("polynomial offset must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        unknown = set(d) - {"family", "sigma2", "degree", "offset"}
        if unknown:
            raise KernelError(f"unknown kernel field(s): {sorted(unknown)}")
        return cls(**d)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise KernelError("dimension mismatch")
    if spec.family == "rbf":
        diff = x - y
        # |x-y| == |y-x| exactly, so symmetry is bit-exact
        val = np.exp(-float(np.dot(diff, diff)) / (2.0 * spec.sigma2))
    else:
        ip = float(np.dot(x, y)) if x.size else 0.0
        val = ip if spec.family == "linear" else (ip + spec.offset) ** spec.degree
    if not np.isfinite(val):
        raise KernelError("non-finite kernel value")
    return float(val)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise KernelError("non-finite feature entries")


def _from_inner(spec: KernelSpec, G, sq1=None, sq2=None):
    if spec.family == "linear":
        K = G
    elif spec.family == "polynomial":
        K = (G + spec.offset) ** spec.degree
    else:
        D = sq1[:, None] + sq2[None, :] - 2.0 * G
        np.maximum(D, 0.0, out=D)
        K = np.exp(-D / (2.0 * spec.sigma2))
    if not np.all(np.isfinite(K)):
        raise KernelError("non-finite kernel value")
    return K


def mirror_upper(K) -> np.ndarray:
    """Copy the upper triangle onto the lower one."""
    return np.triu(K) + np.triu(K, 1).T


def gram(spec: KernelSpec, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 1:
        raise KernelError("gram needs at least one row")
    _check_finite(X)
    G = X @ X.T
    if spec.family == "rbf":
        sq = np.einsum("ij,ij->i", X, X)
        K = _from_inner(spec, G, sq, sq)
        np.fill_diagonal(K, 1.0)
    else:
        K = _from_inner(spec, G)
    return mirror_upper(K)


def cross_gram(spec: KernelSpec, X1, X2, rowwise: bool = False) -> np.ndarray:
    """m x n matrix of k(X1[u], X2[v]).

    With ``rowwise`` each output row is computed independently of the others,
    which makes the result bit-exactly equivariant to reordering X1.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
    if X1.shape[1] != X2.shape[1]:
        raise KernelError("dimension mismatch")
    _check_finite(X1, X2)
    G = _accel.rowwise_dot(X1, X2) if rowwise else X1 @ X2.T
    if spec.family == "rbf":
        return _from_inner(spec, G, np.einsum("ij,ij->i", X1, X1), np.einsum("ij,ij->i", X2, X2))
    return _from_inner(spec, G)


def center(K) -> np.ndarray:
    """Double centering M K M with M = I - 11'/n."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise KernelError("center needs a square matrix")
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    Kc = K - row - col + K.mean()
    return mirror_upper(Kc)


def multiview_gram(K1, K2) -> np.ndarray:
    K1 = np.asarray(K1, dtype=np.float64)
    K2 = np.asarray(K2, dtype=np.float64)
    if K1.shape != K2.shape or K1.ndim != 2 or K1.shape[0] != K1.shape[1]:
        raise KernelError("shape mismatch")
    return K1 * K2


def mixed_gram(K, g, alpha: float) -> np.ndarray:
    """alpha * K + (1 - alpha) * adjacency (no self-loops)."""
    if not 0.0 <= alpha <= 1.0:
        raise KernelError("alpha must lie in [0, 1]")
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (g.n, g.n):
        raise KernelError("Gram does not match graph size")
    if alpha == 1.0:
        return K.copy()
    if alpha == 0.0:
        return g.adjacency()
    return alpha * K + (1.0 - alpha) * g.adjacency()


def rbf_bandwidth_heuristic(X) -> float:
    """Input dimension times the variance of all entries of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] < 2:
        raise KernelError("bandwidth heuristic needs n >= 2")
    var = float(np.mean((X - X.mean()) ** 2))
    if not var > 0.0 or np.all(X == X.flat[0]):
        raise KernelError("degenerate bandwidth")
    return X.shape[1] * var


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------

def gram_input_grad(spec: KernelSpec, A, K, GK) -> np.ndarray:
    """Gradient w.r.t. the inputs A of f(gram(spec, A)), given GK = df/dK."""
    A = np.asarray(A, dtype=np.float64)
    Gs = GK + GK.T
    if spec.family == "linear":
        return Gs @ A
    if spec.family == "polynomial":
        p = spec.degree
        inner = A @ A.T + spec.offset
        factor = p * inner ** (p - 1) if p > 1 else np.ones_like(inner)
        return (Gs * factor) @ A
    B = Gs * K
    return -(B.sum(axis=1)[:, None] * A - B @ A) / spec.sigma2


# ---------------------------------------------------------------------------
# binary Gram files: '<q' n, '<q' m, then n*m '<f8' row-major
# ---------------------------------------------------------------------------

def save_gram(path, K) -> None:
    K = np.ascontiguousarray(K, dtype="<f8")
    if K.ndim != 2:
        raise KernelError("Gram must be 2-d")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", *K.shape))
        fh.write(K.tobytes(order="C"))


def load_gram(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise KernelError("truncated Gram file")
    n, m = struct.unpack("<qq", data[:16])
    if n < 0 or m < 0 or len(data) != 16 + 8 * n * m:
        raise KernelError("Gram file size does not match its header")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(n, m).astype(np.float64)
