"""Dense symmetric eigenpairs, dense solves and Cayley-Adam on the Stiefel manifold."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._accel import gauss_solve, jacobi_eigh  # noqa: F401  (re-exported oracles)


class NumericalError(ArithmeticError):
    """Raised for failures that make a fit meaningless (exit code 2 in the CLI)."""


class SingularMatrixError(NumericalError):
    def __init__(self, msg: str, cond: float = float("inf")):
        super().__init__(f"{msg} (condition estimate {cond:.3e})")
        self.cond = cond


class DegenerateEigenWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray   # descending
    vectors: np.ndarray  # n x s, orthonormal columns


def sign_fix(V) -> np.ndarray:
    """Flip columns so the largest-magnitude entry is positive (lowest index on ties)."""
    V = np.array(V, dtype=np.float64, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    flip = V[idx, np.arange(V.shape[1])] < 0
    V[:, flip] *= -1.0
    return V


def _canonical_cluster_basis(V) -> np.ndarray:
    # Rotate a basis of a degenerate eigenspace so that its transpose is upper
    # trapezoidal; identity-like inputs then come back as standard basis vectors.
    Q, _ = np.linalg.qr(V.T)
    return V @ Q


def top_eigenpairs(A, s: int, warn_degenerate: bool = True) -> EigenResult:
    """The s algebraically largest eigenpairs of a symmetric matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    n = A.shape[0]
    if not 1 <= s <= n:
        raise ValueError(f"requested {s} eigenpairs of a {n}x{n} matrix")
    if not np.all(np.isfinite(A)):
        raise NumericalError("non-finite matrix entries")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    S = 0.5 * (A + A.T)
    lo = max(0, n - s - 1)
    w, V = sla.eigh(S, subset_by_index=[lo, n - 1], check_finite=False)
    w, V = w[::-1], V[:, ::-1]
    tol = 1e-10 * max(1.0, float(np.max(np.abs(w))))
    if s < n and warn_degenerate and w[s - 1] - w[s] <= tol:
        warnings.warn(
            f"eigenvalue {s} is degenerate with eigenvalue {s + 1}; any basis of the "
            "tied eigenspace is returned",
            DegenerateEigenWarning,
            stacklevel=2,
        )
    w_next = w[s] if s < n else -np.inf
    w, V = w[:s].copy(), V[:, :s].copy()
    # canonical basis inside tied clusters that lie wholly within the top s
    start = 0
    for i in range(1, s + 1):
        if i == s or w[i - 1] - w[i] > tol:
            boundary = i == s and w[s - 1] - w_next <= tol
            if i - start > 1 and not boundary:
                V[:, start:i] = _canonical_cluster_basis(V[:, start:i])
            start = i
    return EigenResult(w, sign_fix(V))


def solve_dense(A, B) -> np.ndarray:
    """LU solve with partial pivoting; refuses matrices singular to working precision."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if B.shape[0] != A.shape[0]:
        raise ValueError("right-hand side does not conform")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NumericalError("non-finite entries in linear system")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    if np.any(np.diag(lu) == 0.0):
        raise SingularMatrixError("singular matrix")
    anorm = float(np.linalg.norm(A, 1))
    rcond, _ = sla.lapack.dgecon(lu, anorm, norm="1")
    if not rcond > np.finfo(float).eps:
        raise SingularMatrixError("matrix singular to working precision", 1.0 / rcond if rcond > 0 else float("inf"))
    return sla.lu_solve((lu, piv), B, check_finite=False)


def condition_estimate(A) -> float:
    """1-norm condition number estimate from an LU factorization."""
    A = np.asarray(A, dtype=np.float64)
    lu, _ = sla.lu_factor(A, check_finite=False)
    rcond, _ = sla.lapack.dgecon(lu, float(np.linalg.norm(A, 1)), norm="1")
    return float("inf") if rcond == 0 else 1.0 / rcond


def orthogonality_loss(Hs) -> float:
    """Sum over matrices of ||H'H - I||_F."""
    total = 0.0
    for H in Hs:
        H = np.asarray(H, dtype=np.float64)
        total += float(np.linalg.norm(H.T @ H - np.eye(H.shape[1])))
    return total


def reorthonormalize(H) -> np.ndarray:
    """Thin QR with the R diagonal made non-negative."""
    Q, R = np.linalg.qr(np.asarray(H, dtype=np.float64))
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


@dataclass
class CayleyAdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    inner_iters: int = 2
    reortho_tol: float = 1e-3
    exact: bool = False
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    reorthonormalizations: int = 0


def _one_norm(W) -> float:
    return float(np.max(np.sum(np.abs(W), axis=0))) if W.size else 0.0


def cayley_adam_step(state: CayleyAdamState, Hs, grads):
    """One Cayley-Adam update of every matrix in ``Hs`` (minimization).

    The moment-corrected gradient is turned into the skew matrix
    ``W = (What - What')/sqrt(vhat + eps)`` with ``What = Mhat H' - H (H' Mhat H')/2``
    and the retraction solves ``(I + a/2 W) Y = (I - a/2 W) H`` either exactly
    or by ``inner_iters`` fixed-point sweeps starting from ``H - a M``.
    """
    if len(Hs) != len(grads):
        raise ValueError("one gradient per matrix required")
    if not state.m:
        state.m = [np.zeros_like(np.asarray(H, dtype=np.float64)) for H in Hs]
        state.v = [0.0 for _ in Hs]
    state.step += 1
    k = state.step
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (H, G) in enumerate(zip(Hs, grads)):
        H = np.asarray(H, dtype=np.float64)
        G = np.asarray(G, dtype=np.float64)
        if G.shape != H.shape:
            raise ValueError("gradient shape mismatch")
        if not np.all(np.isfinite(G)):
            raise NumericalError("non-finite gradient")
        M = b1 * state.m[i] + (1.0 - b1) * G
        v = b2 * state.v[i] + (1.0 - b2) * float(np.sum(G * G))
        mhat = M / (1.0 - b1**k)
        vhat = v / (1.0 - b2**k)
        denom = np.sqrt(vhat + state.eps)
        P = mhat - 0.5 * H @ (H.T @ mhat)
        W = (P @ H.T - H @ P.T) / denom
        alpha = min(state.lr, 1.0 / (_one_norm(W) + state.eps))
        if state.exact:
            n = H.shape[0]
            half = 0.5 * alpha * W
            Y = np.linalg.solve(np.eye(n) + half, H - half @ H)
        else:
            Y = H - alpha * M
            for _ in range(state.inner_iters):
                Y = H - 0.5 * alpha * (W @ (H + Y))
        state.m[i] = (W @ H) * denom * (1.0 - b1**k)
        state.v[i] = v
        if orthogonality_loss([Y]) > state.reortho_tol:
            Y = reorthonormalize(Y)
            state.reorthonormalizations += 1
        out.append(Y)
    return state, out
