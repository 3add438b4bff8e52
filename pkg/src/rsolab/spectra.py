"""Eigenvalue counting, eigendecomposition, eigenpairs, shifted solves.

``count_below`` is the workhorse of every ensemble: the Sturm recurrence for
tridiagonal matrices and an unpivoted banded ``LDL^T`` inertia count for
wider bands. Both count pivots of ``H - E`` that are strictly negative, so
the result is ``#{lambda_n < E}``; a pivot that vanishes to within
``pivot_rtol * ||H||`` is replaced by a small positive value, which resolves
an eigenvalue sitting exactly on ``E`` towards exclusion.

Full spectra come from LAPACK by default. A Householder tridiagonalisation
plus implicit QL backend is provided as an independent route.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numba import njit

from .lattice import HamiltonianMatrix
from .policy import DEFAULT, NumericPolicy

log = logging.getLogger(__name__)


class SpectralError(RuntimeError):
    pass


class FactorizationBreakdown(SpectralError):
    pass


class CapExceeded(SpectralError):
    pass


class SingularShift(SpectralError):
    pass


class NoConvergence(SpectralError):
    pass


# ---------------------------------------------------------------------------
# kernels


@njit(cache=True, nogil=True)
def _sturm_counts(d, e2, energies, pivmin, counts, ties):
    n = d.shape[0]
    for m in range(energies.shape[0]):
        E = energies[m]
        c = 0
        q = 1.0
        for i in range(n):
            if i == 0:
                q = d[0] - E
            else:
                q = d[i] - E - e2[i - 1] / q
            if abs(q) < pivmin:
                q = pivmin
                ties[m] += 1
            if q < 0.0:
                c += 1
        counts[m] = c


@njit(cache=True, nogil=True)
def _sturm_counts_batch(D, E2, energies, pivmin, counts):
    T, n = D.shape
    for t in range(T):
        for m in range(energies.shape[0]):
            E = energies[m]
            c = 0
            q = D[t, 0] - E
            if abs(q) < pivmin[t]:
                q = pivmin[t]
            if q < 0.0:
                c += 1
            for i in range(1, n):
                q = D[t, i] - E - E2[t, i - 1] / q
                if abs(q) < pivmin[t]:
                    q = pivmin[t]
                if q < 0.0:
                    c += 1
            counts[t, m] = c


@njit(cache=True, nogil=True)
def _ldlt_inertia(bt, E, pivmin, W):
    """Negative pivots of ``A - E`` for ``A`` in transposed lower band storage
    ``bt[j, k] = A[j + k, j]``. Returns ``(count, perturbed)``; ``count = -1``
    flags a non-finite pivot."""
    n, b1 = bt.shape
    b = b1 - 1
    for j in range(n):
        for k in range(b1):
            W[j, k] = bt[j, k]
        W[j, 0] -= E
    neg = 0
    perturbed = 0
    for j in range(n):
        d = W[j, 0]
        if not np.isfinite(d):
            return -1, perturbed
        if abs(d) < pivmin:
            d = pivmin
            perturbed += 1
        if d < 0.0:
            neg += 1
        m = min(b, n - 1 - j)
        for k in range(1, m + 1):
            wk = W[j, k]
            if wk == 0.0:
                continue
            f = wk / d
            # A[j+i, j+k] -= A[j+i, j] A[j+k, j] / d  for i = k..m
            row = j + k
            for i in range(k, m + 1):
                W[row, i - k] -= f * W[j, i]
    return neg, perturbed


@njit(cache=True)
def _tql2(d, e, V, want_vectors):
    """Implicit QL on the symmetric tridiagonal (d, e); e[i] couples i, i+1.

    ``V`` accumulates the rotations when ``want_vectors``.
    """
    n = d.shape[0]
    eps = 2.0 ** -52
    f = 0.0
    tst1 = 0.0
    for l in range(n):
        tst1 = max(tst1, abs(d[l]) + abs(e[l]))
        m = l
        while m < n - 1:
            if abs(e[m]) <= eps * tst1:
                break
            m += 1
        if m > l:
            it = 0
            while True:
                it += 1
                if it > 60:
                    return False
                g = d[l]
                p = (d[l + 1] - g) / (2.0 * e[l])
                r = np.hypot(p, 1.0)
                if p < 0:
                    r = -r
                d[l] = e[l] / (p + r)
                d[l + 1] = e[l] * (p + r)
                dl1 = d[l + 1]
                h = g - d[l]
                for i in range(l + 2, n):
                    d[i] -= h
                f += h
                p = d[m]
                c = 1.0
                c2 = c
                c3 = c
                el1 = e[l + 1]
                s = 0.0
                s2 = 0.0
                for i in range(m - 1, l - 1, -1):
                    c3 = c2
                    c2 = c
                    s2 = s
                    g = c * e[i]
                    h = c * p
                    r = np.hypot(p, e[i])
                    e[i + 1] = s * r
                    s = e[i] / r
                    c = p / r
                    p = c * d[i] - s * g
                    d[i + 1] = h + s * (c * g + s * d[i])
                    if want_vectors:
                        for k in range(V.shape[0]):
                            h = V[k, i + 1]
                            V[k, i + 1] = s * V[k, i] + c * h
                            V[k, i] = c * V[k, i] - s * h
                p = -s * s2 * c3 * el1 * e[l] / dl1
                e[l] = s * p
                d[l] = c * p
                if abs(e[l]) <= eps * tst1:
                    break
        d[l] = d[l] + f
        e[l] = 0.0
    return True


# ---------------------------------------------------------------------------
# counting


def _pivmin(H: HamiltonianMatrix, policy: NumericPolicy) -> float:
    return policy.pivot_rtol * max(H.norm_bound(), np.finfo(float).tiny)


def count_below(H: HamiltonianMatrix, E, policy: NumericPolicy = DEFAULT):
    """``#{n : lambda_n(H) < E}``; ``E`` may be a scalar or an array."""
    energies = np.atleast_1d(np.asarray(E, dtype=float))
    if not np.all(np.isfinite(energies)):
        raise ValueError("energies must be finite")
    out = np.zeros(energies.shape, dtype=np.int64)
    if H.n == 0:
        return out if np.ndim(E) else 0
    pivmin = _pivmin(H, policy)
    flat = energies.reshape(-1)
    res = out.reshape(-1)
    # nothing lies strictly below the certified lower bound
    todo = np.flatnonzero(flat > H.lower_bound)
    if H.bandwidth <= 1:
        d, e = H.tridiagonal()
        ties = np.zeros(todo.size, dtype=np.int64)
        cnt = np.zeros(todo.size, dtype=np.int64)
        _sturm_counts(d, e * e, flat[todo], pivmin, cnt, ties)
        res[todo] = cnt
        if np.any(ties):
            log.warning("count_below: %d pivot(s) within %.3g of zero; counted as non-negative",
                        int(ties.sum()), pivmin)
    else:
        bt = np.ascontiguousarray(H.band.T)
        W = np.empty_like(bt)
        for idx in todo:
            res[idx] = _inertia(bt, float(flat[idx]), pivmin, W, policy)
    return out if np.ndim(E) else int(out.reshape(-1)[0])


def _inertia(bt, E, pivmin, W, policy) -> int:
    shift = E
    for attempt in range(policy.pivot_retries + 1):
        neg, perturbed = _ldlt_inertia(bt, shift, pivmin, W)
        if neg >= 0:
            if perturbed:
                log.warning("count_below: %d pivot(s) perturbed by %.3g at E=%r", perturbed, pivmin, E)
            return int(neg)
        # move E down by a few pivmin; this keeps the strict count
        shift = E - (attempt + 1) * 4.0 * pivmin
        log.warning("count_below: factorization overflow at E=%r, retry %d", E, attempt + 1)
    raise FactorizationBreakdown(f"LDL^T breakdown at E={E!r}: numerically indistinguishable from an eigenvalue")


def count_below_tridiagonal_batch(diags: np.ndarray, offs: np.ndarray, energies, policy: NumericPolicy = DEFAULT) -> np.ndarray:
    """Sturm counts for a stack of tridiagonal matrices.

    ``diags`` is ``(T, n)``, ``offs`` is ``(T, n-1)``; returns ``(T, m)``.
    """
    D = np.ascontiguousarray(diags, dtype=float)
    O = np.ascontiguousarray(offs, dtype=float)
    energies = np.ascontiguousarray(energies, dtype=float)
    T, n = D.shape
    norms = np.abs(D).copy()
    if n > 1:
        norms[:, 1:] += np.abs(O)
        norms[:, :-1] += np.abs(O)
    pivmin = policy.pivot_rtol * np.maximum(norms.max(axis=1), np.finfo(float).tiny)
    counts = np.zeros((T, energies.size), dtype=np.int64)
    _sturm_counts_batch(D, O * O, energies, pivmin, counts)
    return counts


# ---------------------------------------------------------------------------
# eigendecomposition


@dataclass(frozen=True, eq=False)
class EigenList:
    values: np.ndarray
    vectors: np.ndarray | None = None
    max_residual: float | None = None

    def __len__(self) -> int:
        return self.values.size


def householder_tridiagonalize(A: np.ndarray, want_q: bool = True):
    """Reduce a symmetric matrix to tridiagonal form ``A = Q T Q^T``."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    Q = np.eye(n) if want_q else None
    for k in range(n - 2):
        x = A[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vn = np.dot(v, v)
        if vn == 0.0:
            continue
        beta = 2.0 / vn
        S = A[k + 1:, k + 1:]
        p = beta * (S @ v)
        w = p - 0.5 * beta * np.dot(p, v) * v
        S -= np.outer(v, w) + np.outer(w, v)
        A[k + 1:, k] = 0.0
        A[k, k + 1:] = 0.0
        A[k + 1, k] = A[k, k + 1] = alpha
        if want_q:
            Q[:, k + 1:] -= beta * np.outer(Q[:, k + 1:] @ v, v)
    d = np.diag(A).copy()
    e = np.diag(A, -1).copy()
    return d, e, Q


def tridiagonal_ql(d: np.ndarray, e: np.ndarray, Z: np.ndarray | None = None):
    """Eigenvalues (and vectors, if ``Z`` is given) of a symmetric tridiagonal
    matrix by the implicit QL algorithm."""
    n = d.size
    dd = np.array(d, dtype=float)
    ee = np.zeros(n)
    ee[: n - 1] = e
    want = Z is not None
    V = np.array(Z, dtype=float) if want else np.zeros((1, n))
    if not _tql2(dd, ee, V, want):
        raise NoConvergence("implicit QL did not converge")
    order = np.argsort(dd, kind="stable")
    return dd[order], (V[:, order] if want else None)


def eigenvalues(
    H: HamiltonianMatrix | np.ndarray,
    vectors: bool = False,
    subset: tuple[int, int] | None = None,
    method: str = "lapack",
    policy: NumericPolicy = DEFAULT,
) -> EigenList:
    """All (or the index range ``subset``, inclusive) eigenvalues, ascending.

    ``method="lapack"`` uses the tridiagonal or dense LAPACK drivers,
    ``method="ql"`` the in-house Householder + implicit QL route.
    """
    if not isinstance(H, HamiltonianMatrix):
        H = HamiltonianMatrix.from_dense(H)
    n = H.n
    if n == 0:
        return EigenList(np.zeros(0), np.zeros((0, 0)) if vectors else None, 0.0)
    tri = H.bandwidth <= 1
    if not tri and n > policy.dense_cap:
        raise CapExceeded(f"n={n} exceeds the dense cap {policy.dense_cap}")
    if method == "ql":
        if tri:
            d, e = H.tridiagonal()
            w, V = tridiagonal_ql(d, e, np.eye(n) if vectors else None)
        else:
            d, e, Q = householder_tridiagonalize(H.dense(), want_q=vectors)
            w, V = tridiagonal_ql(d, e, Q)
        if subset is not None:
            w = w[subset[0]: subset[1] + 1]
            V = V[:, subset[0]: subset[1] + 1] if V is not None else None
    elif method == "lapack":
        sel = {} if subset is None else {"select": "i", "select_range": subset}
        if tri:
            d, e = H.tridiagonal()
            if vectors:
                w, V = sla.eigh_tridiagonal(d, e, **sel)
            else:
                w, V = sla.eigh_tridiagonal(d, e, eigvals_only=True, **sel), None
        else:
            sub = {} if subset is None else {"subset_by_index": list(subset)}
            if vectors:
                w, V = sla.eigh(H.dense(), **sub)
            else:
                w, V = sla.eigh(H.dense(), eigvals_only=True, **sub), None
    else:
        raise ValueError(f"unknown method {method!r}")
    res = None
    if V is not None:
        R = np.column_stack([H.matvec(V[:, k]) for k in range(V.shape[1])]) - V * w
        res = float(np.max(np.linalg.norm(R, axis=0))) if w.size else 0.0
    return EigenList(np.asarray(w), V, res)


def eigenpair_near(
    H: HamiltonianMatrix,
    target: float | None = None,
    index: int | None = None,
    policy: NumericPolicy = DEFAULT,
) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpair closest to ``target`` or with 0-based ``index``.

    Returns ``(values, vectors)`` with ``vectors`` of shape ``(n, k)``; ``k > 1``
    when the eigenvalue belongs to a cluster of width ``cluster_rtol * ||H||``,
    in which case an orthonormal basis of the cluster is returned.
    """
    if (target is None) == (index is None):
        raise ValueError("give exactly one of target, index")
    n = H.n
    norm = max(H.norm_bound(), np.finfo(float).tiny)
    if index is not None:
        if not 0 <= index < n:
            raise IndexError(index)
        lam = _bisect_eigenvalue(H, index, policy)
    else:
        lam = float(target)
    tol_cluster = policy.cluster_rtol * norm
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    # inverse iteration at the fixed shift, then Rayleigh refinement
    shift = lam
    for it in range(policy.inverse_iter_max):
        y = _solve_shift(H, shift, x, norm)
        x_new = y / np.linalg.norm(y)
        rq = float(x_new @ H.matvec(x_new))
        resid = np.linalg.norm(H.matvec(x_new) - rq * x_new)
        x = x_new
        if resid <= policy.eig_residual_rtol * norm * 1e-2:
            break
        if it >= 2 and index is None:
            shift = rq
    else:
        if resid > policy.eig_residual_rtol * norm:
            raise NoConvergence(f"inverse iteration residual {resid:.3g} after {policy.inverse_iter_max} steps")
    lo = count_below(H, rq - tol_cluster, policy)
    hi = count_below(H, rq + tol_cluster, policy)
    k = max(hi - lo, 1)
    if k == 1:
        return np.array([rq]), x[:, None]
    # block inverse iteration for the cluster
    X = np.linalg.qr(np.column_stack([x, rng.standard_normal((n, k - 1))]))[0]
    for _ in range(policy.inverse_iter_max):
        Y = np.column_stack([_solve_shift(H, rq, X[:, c], norm) for c in range(k)])
        X = np.linalg.qr(Y)[0]
        HX = np.column_stack([H.matvec(X[:, c]) for c in range(k)])
        w, U = np.linalg.eigh(X.T @ HX)
        X = X @ U
        R = HX @ U - X * w
        if np.max(np.linalg.norm(R, axis=0)) <= policy.eig_residual_rtol * norm:
            return w, X
    raise NoConvergence("block inverse iteration did not converge")


def _bisect_eigenvalue(H: HamiltonianMatrix, index: int, policy: NumericPolicy) -> float:
    norm = H.norm_bound()
    lo, hi = -norm - 1.0, norm + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if count_below(H, mid, policy) > index:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(norm, 1.0):
            break
    return 0.5 * (lo + hi)


def _band_general(H: HamiltonianMatrix, z, dtype) -> np.ndarray:
    """``(H - z)`` in the ``(b, b)`` general band layout of ``solve_banded``."""
    b, n = H.bandwidth, H.n
    ab = np.zeros((2 * b + 1, n), dtype=dtype)
    for k in range(b + 1):
        ab[b + k, : n - k] = H.band[k, : n - k]
        ab[b - k, k:] = H.band[k, : n - k]
    ab[b] = ab[b] - z
    return ab


def _solve_shift(H: HamiltonianMatrix, shift: float, x: np.ndarray, norm: float) -> np.ndarray:
    ab = _band_general(H, shift, float)
    b = H.bandwidth
    try:
        y = sla.solve_banded((b, b), ab, x, check_finite=False)
    except np.linalg.LinAlgError:
        y = None
    if y is None or not np.all(np.isfinite(y)):
        # shift hit the spectrum exactly; nudge it
        ab[b] -= 1e3 * np.finfo(float).eps * norm
        y = sla.solve_banded((b, b), ab, x, check_finite=False)
    return y


def shifted_solve(H: HamiltonianMatrix, z: complex, b: np.ndarray, policy: NumericPolicy = DEFAULT) -> np.ndarray:
    """Solve ``(H - z) x = b`` by banded LU; ``b`` may have several columns."""
    b = np.asarray(b)
    dtype = complex if (np.iscomplexobj(b) or complex(z).imag != 0) else float
    ab = _band_general(H, z if dtype is complex else float(np.real(z)), dtype)
    bw = H.bandwidth
    try:
        x = sla.solve_banded((bw, bw), ab, b.astype(dtype), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularShift(f"H - z singular at z={z!r}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularShift(f"H - z singular at z={z!r}")
    mv = _matvec_cols(H, x) - z * x
    r = np.linalg.norm(mv - b)
    bn = np.linalg.norm(b)
    if bn > 0 and r > policy.solve_rtol * bn:
        # one step of iterative refinement
        x = x + sla.solve_banded((bw, bw), ab, b - mv, check_finite=False)
        r = np.linalg.norm(_matvec_cols(H, x) - z * x - b)
        if r > policy.solve_rtol * bn:
            raise SingularShift(f"relative residual {r / bn:.3g} at z={z!r}")
    return x


def _matvec_cols(H: HamiltonianMatrix, x: np.ndarray) -> np.ndarray:
    if x.ndim == 1:
        return H.matvec(x)
    return np.column_stack([H.matvec(x[:, c]) for c in range(x.shape[1])])


def singular_values(M: np.ndarray) -> np.ndarray:
    """Singular values in non-increasing order (LAPACK divide and conquer)."""
    M = np.asarray(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)
