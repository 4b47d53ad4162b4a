"""Small dense matrix kernels.

The eigensolvers here are textbook implementations sized for the problems in
this package (a few dozen rows at most):

* symmetric: Householder tridiagonalization followed by implicit QR sweeps
  with a Wilkinson shift;
* general: Householder reduction to Hessenberg form followed by explicitly
  shifted complex QR, giving a Schur form from which eigenvectors are
  recovered by back substitution.

All logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fbcap.errors import NoConvergence, NotPositiveDefinite

EPS = np.finfo(float).eps
PINV_RTOL = 1e-10


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray  # complex, shape (n,)
    vectors: np.ndarray  # complex, columns are eigenvectors


def _house(x):
    """Householder vector v (unit norm) with (I - 2 v v^H) x = alpha e1."""
    v = np.array(x, dtype=np.result_type(x, float), copy=True)
    nx = np.linalg.norm(v)
    if nx == 0.0:
        return None
    x0 = v[0]
    phase = x0 / abs(x0) if x0 != 0 else 1.0
    v[0] = x0 + phase * nx
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return None
    return v / nv


def _reduce(A, symmetric):
    """Householder similarity reduction to Hessenberg (tridiagonal if symmetric).

    Returns (T, Q) with A = Q T Q^H.
    """
    T = np.array(A, copy=True)
    n = T.shape[0]
    Q = np.eye(n, dtype=T.dtype)
    for k in range(n - 2):
        v = _house(T[k + 1:, k])
        if v is None:
            continue
        vc = v.conj()
        T[k + 1:, :] -= 2.0 * np.outer(v, vc @ T[k + 1:, :])
        T[:, k + 1:] -= 2.0 * np.outer(T[:, k + 1:] @ v, vc)
        Q[:, k + 1:] -= 2.0 * np.outer(Q[:, k + 1:] @ v, vc)
        T[k + 2:, k] = 0.0
        if symmetric:
            T[k, k + 2:] = 0.0
    return T, Q


def _givens(x, z):
    r = np.hypot(x, z)
    if r == 0.0:
        return 1.0, 0.0
    return x / r, z / r


def eigh(A, max_sweeps_per_eig=60):
    """Eigen-decomposition of a real symmetric matrix.

    Returns ``(values, vectors)`` with values ascending and orthonormal
    eigenvector columns.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    A = 0.5 * (A + A.T)
    T, Q = _reduce(A, symmetric=True)
    floor = EPS * np.abs(T).max()  # absolute deflation floor, keeps zero eigenvalues from stalling
    hi = n - 1
    budget = max_sweeps_per_eig * n
    it = 0
    while hi > 0:
        # deflate from the bottom
        for k in range(hi, 0, -1):
            if abs(T[k, k - 1]) <= max(EPS * (abs(T[k, k]) + abs(T[k - 1, k - 1])), floor):
                T[k, k - 1] = T[k - 1, k] = 0.0
        if T[hi, hi - 1] == 0.0:
            hi -= 1
            continue
        lo = hi - 1
        while lo > 0 and T[lo, lo - 1] != 0.0:
            lo -= 1
        it += 1
        if it > budget:
            raise NoConvergence("symmetric QR iteration did not converge")
        # Wilkinson shift from the trailing 2x2 block
        d = 0.5 * (T[hi - 1, hi - 1] - T[hi, hi])
        b2 = T[hi, hi - 1] ** 2
        sgn = 1.0 if d >= 0 else -1.0
        mu = T[hi, hi] - b2 / (d + sgn * np.hypot(d, T[hi, hi - 1]))
        x = T[lo, lo] - mu
        z = T[lo + 1, lo]
        for k in range(lo, hi):
            if k > lo:
                x = T[k, k - 1]
                z = T[k + 1, k - 1]
            c, s = _givens(x, z)
            R = np.array([[c, s], [-s, c]])
            j0, j1 = max(lo, k - 1), min(hi, k + 2) + 1
            T[k:k + 2, j0:j1] = R @ T[k:k + 2, j0:j1]
            T[j0:j1, k:k + 2] = T[j0:j1, k:k + 2] @ R.T
            Q[:, k:k + 2] = Q[:, k:k + 2] @ R.T
            if k > lo:
                T[k + 1, k - 1] = T[k - 1, k + 1] = 0.0
    values = np.diag(T).copy()
    order = np.argsort(values)
    return values[order], Q[:, order]


def _schur_complex(A, max_iter_per_eig=60):
    """Complex Schur form A = Q T Q^H by shifted QR on the Hessenberg form."""
    H, Q = _reduce(np.asarray(A, dtype=complex), symmetric=False)
    n = H.shape[0]
    floor = EPS * np.abs(H).max(initial=0.0)
    hi = n - 1
    it = 0
    budget = max_iter_per_eig * max(n, 1)
    since_deflation = 0
    while hi > 0:
        l = hi
        while l > 0:
            scale = abs(H[l - 1, l - 1]) + abs(H[l, l])
            if abs(H[l, l - 1]) <= max(EPS * scale, floor):
                H[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            hi -= 1
            since_deflation = 0
            continue
        it += 1
        since_deflation += 1
        if it > budget:
            raise NoConvergence("Hessenberg QR iteration did not converge")
        a, b = H[hi - 1, hi - 1], H[hi - 1, hi]
        c, d = H[hi, hi - 1], H[hi, hi]
        if since_deflation % 11 == 0:
            # exceptional shift breaks symmetric cycles
            mu = d + 0.75 * abs(c)
        else:
            half = 0.5 * (a - d)
            disc = np.sqrt(half * half + b * c)
            r1, r2 = 0.5 * (a + d) + disc, 0.5 * (a + d) - disc
            mu = r1 if abs(r1 - d) < abs(r2 - d) else r2
        idx = np.arange(l, hi + 1)
        H[idx, idx] -= mu
        rots = []
        for k in range(l, hi):
            x, z = H[k, k], H[k + 1, k]
            r = np.sqrt(abs(x) ** 2 + abs(z) ** 2)
            if r == 0.0:
                cs, sn = 1.0, 0.0
            else:
                cs, sn = x / r, z / r
            R = np.array([[np.conj(cs), np.conj(sn)], [-sn, cs]])
            H[k:k + 2, k:] = R @ H[k:k + 2, k:]
            rots.append((k, R))
        for k, R in rots:
            rows = slice(0, min(k + 2, hi) + 1)
            H[rows, k:k + 2] = H[rows, k:k + 2] @ R.conj().T
            Q[:, k:k + 2] = Q[:, k:k + 2] @ R.conj().T
        H[idx, idx] += mu
    return np.triu(H), Q


def eig(A):
    """Eigenvalues and eigenvectors of a general real (or complex) square matrix."""
    A = np.asarray(A)
    n = A.shape[0]
    if n == 0:
        return EigenDecomposition(np.zeros(0, complex), np.zeros((0, 0), complex))
    T, Q = _schur_complex(A)
    vals = np.diag(T).copy()
    scale = max(np.abs(T).max(), EPS)
    Y = np.zeros((n, n), dtype=complex)
    for k in range(n):
        y = Y[:, k]
        y[k] = 1.0
        for i in range(k - 1, -1, -1):
            den = T[i, i] - T[k, k]
            if abs(den) < EPS * scale:
                den = EPS * scale
            y[i] = -(T[i, i + 1:k + 1] @ y[i + 1:k + 1]) / den
    V = Q @ Y
    V /= np.linalg.norm(V, axis=0)
    return EigenDecomposition(vals, V)


def eigvals(A):
    A = np.asarray(A)
    if A.shape[0] == 0:
        return np.zeros(0, complex)
    T, _ = _schur_complex(A)
    return np.diag(T).copy()


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(eigvals(A))))


def min_eig_sym(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return np.inf
    return float(eigh(A)[0][0])


def is_psd(A, tol=1e-9) -> bool:
    return min_eig_sym(A) >= -tol


def pinv(A, tol=PINV_RTOL):
    """Moore-Penrose pseudo-inverse.

    Symmetric inputs go through :func:`eigh`; everything else through the
    SVD. Singular values below ``tol * sigma_max`` count as zero.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    if A.shape[0] == A.shape[1] and np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
        w, V = eigh(A)
        top = np.abs(w).max()
        if top == 0.0:
            return np.zeros_like(A)
        keep = np.abs(w) > tol * top
        return (V[:, keep] / w[keep]) @ V[:, keep].T
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.shape[::-1])
    keep = s > tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def cholesky(A, pivot_tol=1e-12):
    """Lower Cholesky factor; raises NotPositiveDefinite on a pivot <= pivot_tol."""
    A = np.asarray(A, dtype=float)
    try:
        L = np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if L.size and np.min(np.diag(L)) ** 2 <= pivot_tol:
        raise NotPositiveDefinite("Cholesky pivot below %.1e" % pivot_tol)
    return L


def logdet_pd(A) -> float:
    L = cholesky(A)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def pivoted_cholesky(A, tol=1e-12):
    """Rank-revealing Cholesky of a PSD matrix.

    Returns ``R`` of shape (n, r) with ``R @ R.T ~= A``; r is the numerical
    rank (diagonal pivots below ``tol * max(diag)`` stop the factorization).
    """
    A = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    d = np.diag(A).copy()
    top = d.max() if n else 0.0
    if top <= 0.0:
        return np.zeros((n, 0))
    R = np.zeros((n, n))
    perm = np.arange(n)
    r = 0
    for k in range(n):
        j = k + int(np.argmax(d[perm[k:]]))
        perm[[k, j]] = perm[[j, k]]
        p = perm[k]
        if d[p] <= tol * top:
            break
        piv = np.sqrt(d[p])
        R[p, k] = piv
        rest = perm[k + 1:]
        R[rest, k] = (A[rest, p] - R[rest, :k] @ R[p, :k]) / piv
        d[rest] -= R[rest, k] ** 2
        r += 1
    return R[:, :r]


def sym(A):
    return 0.5 * (A + A.T)


def orth(B, rtol=1e-9):
    """Orthonormal basis of range(B) with a relative rank tolerance."""
    B = np.asarray(B, dtype=float)
    if B.size == 0:
        return np.zeros((B.shape[0], 0))
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((B.shape[0], 0))
    return U[:, s > rtol * s[0]]
