"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The numba path is used when numba imports and ``GCKM_DISABLE_NUMBA`` is unset
(or ``0``).  Both paths of :func:`aggregate_sorted` perform the same sequence of
IEEE operations and therefore agree bit for bit; the eigen/solve oracles and
:func:`rowwise_dot` agree to rounding only.
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled() -> bool:
    return os.environ.get("GCKM_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()

# insertion sort beats np.sort below this length inside njit code
_SMALL_SORT = 32


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# neighbourhood aggregation with canonical (value-sorted) summation
# ---------------------------------------------------------------------------

@njit(cache=True)
def _aggregate_nb(indptr, indices, self_w, nb_w, F):
    n, k = F.shape
    out = np.empty((n, k))
    maxm = 1
    for v in range(n):
        m = indptr[v + 1] - indptr[v] + 1
        if m > maxm:
            maxm = m
    buf = np.empty(maxm)
    for v in range(n):
        start = indptr[v]
        stop = indptr[v + 1]
        m = stop - start + 1
        for c in range(k):
            buf[0] = F[v, c] * self_w[v]
            for j in range(start, stop):
                buf[j - start + 1] = F[indices[j], c] * nb_w[j]
            if m <= _SMALL_SORT:
                for i in range(1, m):
                    x = buf[i]
                    t = i - 1
                    while t >= 0 and buf[t] > x:
                        buf[t + 1] = buf[t]
                        t -= 1
                    buf[t + 1] = x
            else:
                buf[:m] = np.sort(buf[:m])
            s = buf[0]
            for i in range(1, m):
                s += buf[i]
            out[v, c] = s
    return out


def _aggregate_np(indptr, indices, self_w, nb_w, F, max_elems=1 << 22):
    n, k = F.shape
    out = np.empty((n, k))
    sizes = np.diff(indptr) + 1
    for m in np.unique(sizes):
        nodes = np.flatnonzero(sizes == m)
        # column 0 is the node itself, then neighbours in storage order
        idx = np.empty((nodes.size, m), dtype=np.int64)
        w = np.empty((nodes.size, m))
        idx[:, 0] = nodes
        w[:, 0] = self_w[nodes]
        if m > 1:
            offs = indptr[nodes][:, None] + np.arange(m - 1)[None, :]
            idx[:, 1:] = indices[offs]
            w[:, 1:] = nb_w[offs]
        step = max(1, max_elems // max(1, m * k))
        for lo in range(0, nodes.size, step):
            hi = min(nodes.size, lo + step)
            vals = F[idx[lo:hi]] * w[lo:hi, :, None]
            vals.sort(axis=1)
            s = vals[:, 0, :].copy()
            for t in range(1, m):
                s += vals[:, t, :]
            out[nodes[lo:hi]] = s
    return out


def aggregate_sorted(indptr, indices, self_w, nb_w, F):
    """Row v = sum of {self_w[v] F[v]} and {nb_w[e] F[u]} over stored neighbours.

    Each output entry sums its terms in ascending value order, so the result
    depends only on the multiset of terms: relabelling nodes or reordering the
    adjacency storage leaves every entry bit-identical.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    args = (
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(self_w, dtype=np.float64),
        np.ascontiguousarray(nb_w, dtype=np.float64),
        F,
    )
    if USE_NUMBA:
        return _aggregate_nb(*args)
    return _aggregate_np(*args)


# ---------------------------------------------------------------------------
# row-independent products (bit-exact under row permutation of A)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _rowwise_dot_nb(A, B):
    m, d = A.shape
    n = B.shape[0]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(d):
                s += A[i, t] * B[j, t]
            out[i, j] = s
    return out


def _rowwise_dot_np(A, B):
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        out[i] = B @ A[i]
    return out


def rowwise_dot(A, B):
    """``A @ B.T`` where each output row depends only on the matching row of A."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if USE_NUMBA:
        return _rowwise_dot_nb(A, B)
    return _rowwise_dot_np(A, B)


# ---------------------------------------------------------------------------
# Jacobi eigenvalue oracle
# ---------------------------------------------------------------------------

@njit(cache=True)
def _jacobi_nb(A, tol, max_sweeps):
    a = A.copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    scale = np.sqrt(scale)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if np.sqrt(2.0 * off) <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps


def _round_robin(n):
    """Tournament schedule: n-1 rounds of n/2 disjoint pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        pairs = [(players[i], players[n - 1 - i]) for i in range(n // 2)]
        rounds.append((np.array([min(p) for p in pairs]), np.array([max(p) for p in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_np(A, tol, max_sweeps):
    n0 = A.shape[0]
    n = n0 + (n0 % 2)
    a = np.zeros((n, n))
    a[:n0, :n0] = A
    v = np.eye(n)
    scale = np.linalg.norm(A)
    rounds = _round_robin(n)
    iu = np.triu_indices(n, 1)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        if np.sqrt(2.0 * np.sum(a[iu] ** 2)) <= tol * scale:
            break
        for P, Q in rounds:
            apq = a[P, Q]
            app = a[P, P]
            aqq = a[Q, Q]
            nz = apq != 0.0
            theta = np.where(nz, (aqq - app) / np.where(nz, 2.0 * apq, 1.0), 0.0)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            ap = a[:, P].copy()
            aq = a[:, Q]
            a[:, P] = c * ap - s * aq
            a[:, Q] = s * ap + c * aq
            ap = a[P, :].copy()
            aq = a[Q, :]
            a[P, :] = c[:, None] * ap - s[:, None] * aq
            a[Q, :] = s[:, None] * ap + c[:, None] * aq
            vp = v[:, P].copy()
            vq = v[:, Q]
            v[:, P] = c * vp - s * vq
            v[:, Q] = s * vp + c * vq
    w = np.diag(a)[:n0].copy()
    return w, v[:n0, :n0].copy(), sweeps


def jacobi_eigh(A, tol=1e-15, max_sweeps=60):
    """Full eigendecomposition of a symmetric matrix by Jacobi rotations.

    Returns ``(values, vectors, sweeps)`` with values in ascending order.  Used
    as an oracle that shares no code with LAPACK.
    """
    A = np.asarray(A, dtype=np.float64)
    A = 0.5 * (A + A.T)
    if USE_NUMBA:
        w, v, sweeps = _jacobi_nb(np.ascontiguousarray(A), tol, max_sweeps)
    else:
        w, v, sweeps = _jacobi_np(A, tol, max_sweeps)
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order], sweeps


# ---------------------------------------------------------------------------
# Gaussian elimination oracle
# ---------------------------------------------------------------------------

@njit(cache=True)
def _gauss_nb(A, B):
    a = A.copy()
    b = B.copy()
    n = a.shape[0]
    p = b.shape[1]
    for k in range(n):
        piv = k
        best = abs(a[k, k])
        for i in range(k + 1, n):
            if abs(a[i, k]) > best:
                best = abs(a[i, k])
                piv = i
        if best == 0.0:
            raise ZeroDivisionError("singular matrix")
        if piv != k:
            for j in range(n):
                tmp = a[k, j]
                a[k, j] = a[piv, j]
                a[piv, j] = tmp
            for j in range(p):
                tmp = b[k, j]
                b[k, j] = b[piv, j]
                b[piv, j] = tmp
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            if f != 0.0:
                for j in range(k, n):
                    a[i, j] -= f * a[k, j]
                for j in range(p):
                    b[i, j] -= f * b[k, j]
    x = np.empty((n, p))
    for i in range(n - 1, -1, -1):
        for j in range(p):
            s = b[i, j]
            for t in range(i + 1, n):
                s -= a[i, t] * x[t, j]
            x[i, j] = s / a[i, i]
    return x


def _gauss_np(A, B):
    a = A.copy()
    b = B.copy()
    n = a.shape[0]
    for k in range(n):
        piv = k + int(np.argmax(np.abs(a[k:, k])))
        if a[piv, k] == 0.0:
            raise ZeroDivisionError("singular matrix")
        if piv != k:
            a[[k, piv]] = a[[piv, k]]
            b[[k, piv]] = b[[piv, k]]
        f = a[k + 1:, k] / a[k, k]
        a[k + 1:, k:] -= np.outer(f, a[k, k:])
        b[k + 1:] -= np.outer(f, b[k])
    x = np.empty_like(b)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - a[i, i + 1:] @ x[i + 1:]) / a[i, i]
    return x


def gauss_solve(A, B):
    """Solve ``A X = B`` by textbook Gaussian elimination with partial pivoting."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    vec = B.ndim == 1
    B2 = np.ascontiguousarray(B.reshape(B.shape[0], -1))
    X = _gauss_nb(A, B2) if USE_NUMBA else _gauss_np(A, B2)
    return X.ravel() if vec else X
