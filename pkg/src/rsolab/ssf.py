"""Spectral shift function of a pair of symmetric matrices and the bounds
it satisfies.

``xi(lam, A, B) = N_B(lam) - N_A(lam)`` with strict counts, so that
``Tr(f(A) - f(B)) = int f'(lam) xi(lam, A, B) dlam``. ``xi`` is piecewise
constant on the open intervals between the points of both spectra; its value
exactly at a breakpoint is left undefined. All norms of ``xi`` are therefore
finite sums and exact up to rounding of the interval lengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .artifacts import csv_text
from .lattice import HamiltonianMatrix
from .policy import DEFAULT, NumericPolicy
from .spectra import singular_values


def _dense(M) -> np.ndarray:
    if isinstance(M, HamiltonianMatrix):
        return M.dense()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    return M


@dataclass(frozen=True)
class SSFTable:
    breakpoints: np.ndarray
    values: np.ndarray  # xi on ]breakpoints[i], breakpoints[i+1][

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def __call__(self, lam) -> np.ndarray:
        """``xi`` at ``lam``; zero outside the hull, right-continuous choice
        at breakpoints (not part of the contract)."""
        lam = np.asarray(lam, dtype=float)
        idx = np.searchsorted(self.breakpoints, lam, side="right") - 1
        inside = (idx >= 0) & (idx < self.values.size)
        out = np.zeros(lam.shape, dtype=int)
        out[inside] = self.values[idx[inside]]
        return out

    def sup(self) -> int:
        return int(np.max(np.abs(self.values))) if self.values.size else 0

    def lp_norm(self, p: float) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.sum(np.abs(self.values).astype(float) ** p * self.lengths)) ** (1.0 / p)

    def integral(self) -> float:
        return float(np.sum(self.values * self.lengths))

    def integrate(self, F: Callable[[np.ndarray], np.ndarray]) -> float:
        """``int F(|xi|)`` over the line (``F(0) = 0`` assumed)."""
        if self.values.size == 0:
            return 0.0
        return float(np.sum(F(np.abs(self.values).astype(float)) * self.lengths))

    def rows(self):
        for lo, hi, v in zip(self.breakpoints[:-1], self.breakpoints[1:], self.values):
            yield float(lo), float(hi), int(v)

    def to_csv(self) -> str:
        return csv_text(["lambda_lo", "lambda_hi", "xi"], self.rows())


def ssf_from_spectra(wa: np.ndarray, wb: np.ndarray) -> SSFTable:
    wa, wb = np.sort(wa), np.sort(wb)
    bp = np.unique(np.concatenate([wa, wb]))
    mid = 0.5 * (bp[:-1] + bp[1:])
    na = np.searchsorted(wa, mid, side="left")
    nb = np.searchsorted(wb, mid, side="left")
    vals = (nb - na).astype(int)
    return SSFTable(bp, vals)


def ssf(A, B, policy: NumericPolicy = DEFAULT) -> SSFTable:
    """Counting-difference SSF ``N_B - N_A`` of two symmetric matrices.

    If ``B - A`` is positive semidefinite, ``xi <= 0`` is asserted.
    """
    A, B = _dense(A), _dense(B)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch {A.shape} vs {B.shape}")
    table = ssf_from_spectra(np.linalg.eigvalsh(A), np.linalg.eigvalsh(B))
    D = B - A
    scale = max(np.linalg.norm(D, 2), np.finfo(float).tiny)
    if np.linalg.eigvalsh(D).min() >= -policy.rank_rtol * scale:
        assert np.all(table.values <= 0), "xi > 0 for a non-negative perturbation"
    return table


# ---------------------------------------------------------------------------
# Krein trace formula


@dataclass
class KreinReport:
    lhs: float
    rhs: float
    discrepancy: float
    invariance_ok: bool | None = None
    rhs_invariance: float | None = None


def _gauss_integral(fprime, table: SSFTable, breaks: Sequence[float], nodes: int) -> float:
    x0, w0 = np.polynomial.legendre.leggauss(nodes)
    pts = np.unique(np.concatenate([table.breakpoints, np.asarray(breaks, dtype=float)]))
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        xi = table(np.array([0.5 * (a + b)]))[0]
        if xi == 0:
            continue
        x = 0.5 * (b - a) * x0 + 0.5 * (a + b)
        total += xi * 0.5 * (b - a) * float(np.dot(w0, fprime(x)))
    return total


def _matfun(M: np.ndarray, f) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * f(w)) @ V.T


def krein_audit(A, B, f: Callable | np.polynomial.Polynomial, fprime: Callable | None = None,
                breaks: Sequence[float] = (), nodes: int = 24, invariance: tuple[float, int] | None = None
                ) -> KreinReport:
    """``Tr f(A) - Tr f(B)`` against ``int f' xi`` by Gauss-Legendre panels
    between the breakpoints of ``xi`` and the optional kinks ``breaks`` of
    ``f'``. Exact for polynomials of degree below ``2 * nodes``.

    ``invariance=(C0, k)`` also checks ``xi(g(lam), g(A), g(B)) = -xi(lam, A, B)``
    with ``g(x) = (x - C0 + 1)^{-k}`` at every interval midpoint, computing
    ``g(A), g(B)`` as matrix functions, and evaluates the trace formula via
    the transformed pair.
    """
    A, B = _dense(A), _dense(B)
    if isinstance(f, np.polynomial.Polynomial):
        fprime = f.deriv()
    if fprime is None:
        raise ValueError("f' must be supplied for non-polynomial f")
    table = ssf(A, B)
    wa, wb = np.linalg.eigvalsh(A), np.linalg.eigvalsh(B)
    lhs = float(np.sum(f(wa)) - np.sum(f(wb)))
    rhs = _gauss_integral(fprime, table, breaks, nodes)
    rep = KreinReport(lhs, rhs, abs(lhs - rhs))
    if invariance is not None:
        C0, k = invariance
        if min(wa.min(), wb.min()) < C0:
            raise ValueError("C0 must bound both spectra from below")

        def g(x):
            return (np.asarray(x) - C0 + 1.0) ** (-k)

        tg = ssf(_matfun(A, g), _matfun(B, g))
        mid = 0.5 * (table.breakpoints[:-1] + table.breakpoints[1:])
        rep.invariance_ok = bool(np.array_equal(tg(g(mid)), -table.values))

        def xi_ip(x):
            return -tg(g(x))

        x0, w0 = np.polynomial.legendre.leggauss(nodes)
        pts = np.unique(np.concatenate([table.breakpoints, np.asarray(breaks, dtype=float)]))
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            x = 0.5 * (b - a) * x0 + 0.5 * (a + b)
            total += 0.5 * (b - a) * float(np.dot(w0, fprime(x) * xi_ip(x)))
        rep.rhs_invariance = total
    return rep


# ---------------------------------------------------------------------------
# bounds


@dataclass
class SchattenQuasiNorm:
    beta: float
    value: float


def schatten_quasinorm(M, beta: float) -> SchattenQuasiNorm:
    if not beta > 0:
        raise ValueError("beta must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    mu = singular_values(M)
    if mu.size and mu[0] > 0:
        # rounding-level singular values are noise, and mu**beta amplifies them for beta < 1
        mu = mu[mu > max(M.shape) * np.finfo(float).eps * mu[0]]
    return SchattenQuasiNorm(beta, float(np.sum(mu ** beta) ** (1.0 / beta)))


def numerical_rank(M: np.ndarray, policy: NumericPolicy = DEFAULT) -> int:
    mu = singular_values(M)
    if mu.size == 0 or mu[0] == 0:
        return 0
    return int(np.sum(mu > policy.rank_rtol * mu[0]))


@dataclass
class BoundsReport:
    sup: int
    rank: int
    l1: float
    trace_norm: float
    lp: dict
    lp_bound: dict
    ok_sup: bool
    ok_l1: bool
    ok_lp: dict

    @property
    def ok(self) -> bool:
        return self.ok_sup and self.ok_l1 and all(self.ok_lp.values())


def ssf_bounds_audit(A, B, ps: Sequence[float] = (1, 2, 4), policy: NumericPolicy = DEFAULT) -> BoundsReport:
    """``|xi| <= rank(A-B)``, ``||xi||_1 <= ||A-B||_{J_1}`` and
    ``||xi||_p <= ||A-B||_{J_{1/p}}^{1/p} = sum mu_n^{1/p}``."""
    A, B = _dense(A), _dense(B)
    t = ssf(A, B, policy)
    D = A - B
    mu = singular_values(D)
    rank = numerical_rank(D, policy)
    tn = float(np.sum(mu))
    l1 = t.lp_norm(1)
    tol = policy.audit_rtol * max(tn, 1.0) + policy.audit_atol
    lp, lpb, okp = {}, {}, {}
    for p in ps:
        lp[p] = t.lp_norm(p)
        lpb[p] = float(np.sum(mu ** (1.0 / p)))
        okp[p] = lp[p] <= lpb[p] * (1 + policy.audit_rtol) + policy.audit_atol
    return BoundsReport(t.sup(), rank, l1, tn, lp, lpb, t.sup() <= rank, l1 <= tn + tol, okp)


@dataclass
class HolderReport:
    lhs: float
    rhs: float
    r: float
    ok: bool


def holder_product_audit(A, B, p: float, q: float, policy: NumericPolicy = DEFAULT) -> HolderReport:
    """``||AB||_{J_r} <= ||A||_{J_p} ||B||_{J_q}`` with ``1/r = 1/p + 1/q``."""
    if not (p > 0 and q > 0):
        raise ValueError("p, q must be positive")
    r = 1.0 / (1.0 / p + 1.0 / q)
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    lhs = schatten_quasinorm(A @ B, r).value
    rhs = schatten_quasinorm(A, p).value * schatten_quasinorm(B, q).value
    return HolderReport(lhs, rhs, r, lhs <= rhs * (1 + policy.audit_rtol) + policy.audit_atol)


@dataclass
class OptSSFReport:
    lhs: float
    rhs: float
    condition: bool
    ok: bool | None  # None when the domination condition fails


def optssf_audit(A, B, C, F: Callable[[np.ndarray], np.ndarray], policy: NumericPolicy = DEFAULT) -> OptSSFReport:
    """``int F(|xi(A, B)|) <= sum_n [F(n) - F(n-1)] mu_n(C)`` under the tail
    domination ``sum_{n>=N} mu_n(|A-B|) <= sum_{n>=N} mu_n(C)`` for all N."""
    A, B, C = _dense(A), _dense(B), _dense(C)
    if np.linalg.eigvalsh(C).min() < -policy.rank_rtol * max(np.linalg.norm(C, 2), 1.0):
        raise ValueError("C must be non-negative")
    mud = singular_values(A - B)
    muc = singular_values(C)
    m = max(mud.size, muc.size)
    mud = np.pad(mud, (0, m - mud.size))
    muc = np.pad(muc, (0, m - muc.size))
    tail_d = np.cumsum(mud[::-1])[::-1]
    tail_c = np.cumsum(muc[::-1])[::-1]
    scale = max(tail_c[0], tail_d[0], 1.0)
    cond = bool(np.all(tail_d <= tail_c + policy.audit_rtol * scale))
    n = np.arange(1, m + 1, dtype=float)
    rhs = float(np.sum((F(n) - F(n - 1)) * muc))
    lhs = ssf(A, B, policy).integrate(F)
    ok = lhs <= rhs + policy.audit_rtol * max(abs(rhs), 1.0) if cond else None
    return OptSSFReport(lhs, rhs, cond, ok)


# ---------------------------------------------------------------------------
# semigroup difference


@dataclass
class SemigroupReport:
    singular_values: np.ndarray
    c1: float
    c2: float
    r2: float
    fit_range: tuple[int, int]
    below_envelope_from: int | None
    decaying: bool


def semigroup_difference_sv(H1, H2, t: float = 1.0, d: int = 1, floor: float | None = None
                            ) -> SemigroupReport:
    """Singular values of ``exp(-t H1) - exp(-t H2)`` (eigendecomposition
    route) and a fit ``log mu_n ~ log c1 - c2 n^{1/d}`` over the values above
    the rounding floor. ``c1`` is raised so that the fitted envelope lies
    above every fitted point."""
    A, B = _dense(H1), _dense(H2)
    if A.shape != B.shape:
        raise ValueError("operators must share a box")
    D = _matfun(A, lambda w: np.exp(-t * w)) - _matfun(B, lambda w: np.exp(-t * w))
    mu = singular_values(D)
    if mu.size == 0 or mu[0] == 0:
        return SemigroupReport(mu, 0.0, math.nan, math.nan, (0, 0), None, False)
    floor = 1e3 * np.finfo(float).eps * max(1.0, np.max(np.abs(np.exp(-t * np.linalg.eigvalsh(A))))) \
        if floor is None else floor
    n = np.arange(1, mu.size + 1, dtype=float)
    keep = np.flatnonzero(mu > floor)
    last = int(keep[-1]) + 1 if keep.size else 1
    if last < 3:
        return SemigroupReport(mu, float(mu[0]), math.inf, 1.0, (1, last), 1, True)
    x = n[:last] ** (1.0 / d)
    y = np.log(mu[:last])
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    r2 = 1 - float(np.sum(res ** 2)) / max(float(np.sum((y - y.mean()) ** 2)), np.finfo(float).tiny)
    icpt_env = icpt + float(np.max(res))
    env = np.exp(icpt_env + slope * n ** (1.0 / d))
    above = np.flatnonzero(mu[:last] > env[:last] * (1 + 1e-12))
    below_from = int(above[-1]) + 2 if above.size else 1
    return SemigroupReport(mu, float(math.exp(icpt_env)), float(-slope), r2, (1, last), below_from, slope < 0)


# ---------------------------------------------------------------------------
# interlacing


@dataclass
class InterlacingReport:
    rank: int
    violations: int
    max_count_gap: int

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.max_count_gap <= self.rank


def interlacing_audit(H, P, k: int | None = None, policy: NumericPolicy = DEFAULT) -> InterlacingReport:
    """``lam_n(H) <= lam_{n+k}(H+P)`` and ``lam_n(H+P) <= lam_{n+k}(H)`` for a
    rank-``k`` symmetric ``P``; also the largest gap between the two
    counting functions over all breakpoints."""
    H, P = _dense(H), _dense(P)
    k = numerical_rank(P, policy) if k is None else int(k)
    w0 = np.linalg.eigvalsh(H)
    w1 = np.linalg.eigvalsh(H + P)
    n = w0.size
    tol = policy.audit_rtol * max(np.max(np.abs(w0)), np.max(np.abs(w1)), 1.0)
    viol = 0
    if k < n:
        viol += int(np.sum(w0[: n - k] > w1[k:] + tol))
        viol += int(np.sum(w1[: n - k] > w0[k:] + tol))
    # degenerate eigenvalues forced by interlacing coincide only up to
    # rounding; snap them so the count gap is not read off a sliver
    j = np.clip(np.searchsorted(w0, w1), 1, n - 1) if n > 1 else np.zeros(n, dtype=int)
    near = np.where(np.abs(w0[j - 1] - w1) < np.abs(w0[j] - w1), j - 1, j) if n > 1 else j
    w1s = np.where(np.abs(w0[near] - w1) <= tol, w0[near], w1)
    gap = ssf_from_spectra(w0, w1s).sup()
    return InterlacingReport(k, viol, gap)


def random_pair(rng: np.random.Generator, n: int, rank: int) -> tuple[np.ndarray, np.ndarray]:
    """Random symmetric ``A`` and ``B = A + sum_{i<rank} s_i v_i v_i^T``."""
    G = rng.normal(size=(n, n))
    A = (G + G.T) / 2
    V = rng.normal(size=(n, rank))
    s = rng.normal(size=rank) * rng.uniform(0.1, 3.0)
    return A, A + (V * s) @ V.T
