"""Independent reference implementations used only by the tests.

Everything here is written from the defining formulas with explicit loops or
explicit matrices, sharing no code paths with the package under test.
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np

from gckm._accel import gauss_solve, jacobi_eigh


def kernel(family, x, y, sigma2=1.0, degree=1, offset=0.0):
    ip = 0.0
    for a, b in zip(x, y):
        ip += float(a) * float(b)
    if family == "linear":
        return ip
    if family == "polynomial":
        return (ip + offset) ** degree
    d2 = 0.0
    for a, b in zip(x, y):
        d2 += (float(a) - float(b)) ** 2
    return math.exp(-d2 / (2.0 * sigma2))


def gram(family, X1, X2=None, **kw):
    X2 = X1 if X2 is None else X2
    out = np.empty((len(X1), len(X2)))
    for i in range(len(X1)):
        for j in range(len(X2)):
            out[i, j] = kernel(family, X1[i], X2[j], **kw)
    return out


def neighbours(n, edges):
    nb = [set() for _ in range(n)]
    for u, v in edges:
        nb[int(u)].add(int(v))
        nb[int(v)].add(int(u))
    return nb


def aggregate(n, edges, F, mode):
    nb = neighbours(n, edges)
    F = np.asarray(F, dtype=float)
    out = np.zeros_like(F)
    for v in range(n):
        for c in range(F.shape[1]):
            if mode == "none":
                out[v, c] = F[v, c]
            elif mode == "sum":
                out[v, c] = math.fsum([F[v, c]] + [F[u, c] for u in nb[v]])
            else:
                dv = len(nb[v]) + 1
                terms = [F[u, c] / math.sqrt((len(nb[u]) + 1) * dv) for u in nb[v] | {v}]
                out[v, c] = math.fsum(terms)
    return out


def center(K):
    n = K.shape[0]
    M = np.eye(n) - np.ones((n, n)) / n
    return M @ K @ M


def trace_quadratic(H, K):
    """Tr(H' K H) by a triple loop."""
    total = 0.0
    n, s = H.shape
    for k in range(s):
        for i in range(n):
            for j in range(n):
                total += H[i, k] * K[i, j] * H[j, k]
    return total


def layer_oos(Kx, Ktr, H, Lam, eta):
    m, n = Kx.shape
    one_m = np.ones((m, 1))
    one_n = np.ones((n, 1))
    Li = np.linalg.inv(Lam)
    return (1.0 / eta) * Kx @ H @ Li - (1.0 / (n * eta)) * one_m @ one_n.T @ Ktr @ H @ Li


def semisup(K, labeled, C, eta, lam1, lam2):
    """Explicit-matrix solve of the read-out system; returns (H, b, r)."""
    n = K.shape[0]
    v = np.array([1.0 / sum(K[i]) for i in range(n)])
    l = np.asarray(labeled, dtype=float)
    r = v / lam1 - l / lam2
    R = np.diag(r)
    L = np.diag(l)
    one = np.ones((n, 1))
    S = np.eye(n) - one @ one.T @ R / (one.T @ R @ one).item()
    A = np.eye(n) - R @ S @ K / eta
    Z = gauss_solve(A, S.T @ L @ C / lam2)
    H = np.linalg.inv(R) @ Z
    b = -(one.T @ R @ K @ R @ H / eta + one.T @ L @ C / lam2) / (one.T @ R @ one).item()
    return H, b.ravel(), r


def semisup_energy(H, K, r, l, C, eta, lam2, sign=-1.0):
    R = np.diag(r)
    L = np.diag(np.asarray(l, dtype=float))
    return (-np.trace(H.T @ R @ K @ R @ H) / (2 * eta) + 0.5 * np.trace(H.T @ R @ H)
            + sign * np.trace(H.T @ L @ C) / lam2)


def nmi(a, b):
    n = len(a)
    ca, cb = Counter(a), Counter(b)
    joint = Counter(zip(a, b))
    ha = -sum(c / n * math.log(c / n) for c in ca.values())
    hb = -sum(c / n * math.log(c / n) for c in cb.values())
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    mi = sum(c / n * math.log(n * c / (ca[x] * cb[y])) for (x, y), c in joint.items())
    return mi / ((ha + hb) / 2)


def top_eig(A, s):
    w, V, _ = jacobi_eigh(A)
    return w[::-1][:s], V[:, ::-1][:, :s]


def max_principal_angle(U, V):
    """Largest principal angle between the column spans of orthonormal U and V."""
    P = V - U @ (U.T @ V)
    sin = np.linalg.norm(P, 2) if P.size else 0.0
    return float(np.arcsin(min(1.0, sin)))


def wl_colors(n, edges, colors):
    """One Weisfeiler-Lehman refinement: (own colour, sorted neighbour colours)."""
    nb = neighbours(n, edges)
    return [(colors[v], tuple(sorted(colors[u] for u in nb[v]))) for v in range(n)]


def random_orthonormal(rng, n, s):
    Q, _ = np.linalg.qr(rng.normal(size=(n, s)))
    return Q
