"""Integer least-squares by decorrelation and depth-first search.

Follows the classic LD / reduction / search decomposition: Q = Lᵀ·diag(D)·L
with L unit lower-triangular, an integer Gauss transform that decorrelates
the ambiguities, then a shrinking-ellipsoid search for the best candidates.
"""
from typing import Tuple

import numpy as np
import structlog

logger = structlog.get_logger()

PERMUTATION_MARGIN = 1e-6


def _round(x: float) -> float:
    return float(np.floor(x + 0.5))


def _sign(x: float) -> float:
    return -1.0 if x <= 0.0 else 1.0


def ld_factorize(Q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """L (unit lower-triangular) and D with Q = Lᵀ·diag(D)·L."""
    n = len(Q)
    A = np.array(Q, dtype=float, copy=True)
    L = np.zeros((n, n))
    D = np.zeros(n)
    for i in range(n - 1, -1, -1):
        D[i] = A[i, i]
        if D[i] <= 0.0:
            raise ValueError("ambiguity covariance is not positive definite")
        a = np.sqrt(D[i])
        L[i, : i + 1] = A[i, : i + 1] / a
        for j in range(i):
            A[j, : j + 1] -= L[i, : j + 1] * L[i, j]
        L[i, : i + 1] /= L[i, i]
    return L, D


def _gauss(L: np.ndarray, Z: np.ndarray, i: int, j: int) -> None:
    mu = _round(L[i, j])
    if mu != 0.0:
        L[i:, j] -= mu * L[i:, i]
        Z[:, j] -= mu * Z[:, i]


def _permute(L: np.ndarray, D: np.ndarray, j: int, delta: float, Z: np.ndarray) -> None:
    n = len(D)
    eta = D[j] / delta
    lam = D[j + 1] * L[j + 1, j] / delta
    D[j] = eta * D[j + 1]
    D[j + 1] = delta
    for k in range(j):
        a0, a1 = L[j, k], L[j + 1, k]
        L[j, k] = -L[j + 1, j] * a0 + a1
        L[j + 1, k] = eta * a0 + lam * a1
    L[j + 1, j] = lam
    for k in range(j + 2, n):
        L[k, j], L[k, j + 1] = L[k, j + 1], L[k, j]
    Z[:, [j, j + 1]] = Z[:, [j + 1, j]]


def reduction(L: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Decorrelates (L, D) in place and returns the unimodular transform Z."""
    n = len(D)
    Z = np.eye(n)
    j = k = n - 2
    while j >= 0:
        if j <= k:
            for i in range(j + 1, n):
                _gauss(L, Z, i, j)
        delta = D[j] + L[j + 1, j] ** 2 * D[j + 1]
        if delta + PERMUTATION_MARGIN < D[j + 1]:
            _permute(L, D, j, delta, Z)
            k = j
            j = n - 2
        else:
            j -= 1
    return Z


def search(L: np.ndarray, D: np.ndarray, zs: np.ndarray, m: int = 2, max_loops: int = 10_000_000) -> Tuple[np.ndarray, np.ndarray]:
    """The ``m`` best integer vectors (columns) and their squared distances, ascending."""
    n = len(D)
    S = np.zeros((n, n))
    dist = np.zeros(n)
    zb = np.zeros(n)
    z = np.zeros(n)
    step = np.zeros(n)
    zn = np.zeros((n, m))
    s = np.full(m, np.inf)
    nn, imax = 0, 0
    maxdist = np.inf

    k = n - 1
    zb[k] = zs[k]
    z[k] = _round(zb[k])
    y = zb[k] - z[k]
    step[k] = _sign(y)
    for _ in range(max_loops):
        newdist = dist[k] + y * y / D[k]
        if newdist < maxdist:
            if k != 0:
                k -= 1
                dist[k] = newdist
                S[k, : k + 1] = S[k + 1, : k + 1] + (z[k + 1] - zb[k + 1]) * L[k + 1, : k + 1]
                zb[k] = zs[k] + S[k, k]
                z[k] = _round(zb[k])
                y = zb[k] - z[k]
                step[k] = _sign(y)
            else:
                if nn < m:
                    if nn == 0 or newdist > s[imax]:
                        imax = nn
                    zn[:, nn] = z
                    s[nn] = newdist
                    nn += 1
                else:
                    if newdist < s[imax]:
                        zn[:, imax] = z
                        s[imax] = newdist
                        imax = int(np.argmax(s))
                    maxdist = s[imax]
                z[0] += step[0]
                y = zb[0] - z[0]
                step[0] = -step[0] - _sign(step[0])
        else:
            if k == n - 1:
                break
            k += 1
            z[k] += step[k]
            y = zb[k] - z[k]
            step[k] = -step[k] - _sign(step[k])
    else:
        raise RuntimeError("integer search did not terminate")

    order = np.argsort(s)
    return zn[:, order], s[order]


def lambda_search(a: np.ndarray, Q: np.ndarray, m: int = 2) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best ``m`` integer candidates for float ``a`` with covariance ``Q``.

    Returns (candidates n×m, squared distances ‖a − ǎ‖²_{Q⁻¹}, Z transform).
    """
    a = np.asarray(a, dtype=float)
    Q = 0.5 * (np.asarray(Q, dtype=float) + np.asarray(Q, dtype=float).T)
    if a.ndim != 1 or Q.shape != (len(a), len(a)) or len(a) == 0:
        raise ValueError("lambda_search needs a non-empty vector and a matching square covariance")
    L, D = ld_factorize(Q)
    Z = reduction(L, D)
    zs = Z.T @ a
    E, s = search(L, D, zs, m)
    F = np.linalg.solve(Z.T, E)
    return np.round(F), s, Z
