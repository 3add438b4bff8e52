"""Multi-level Toeplitz matrices of a signed convolution vector.

A convolution vector ``alpha`` is a finite map from offsets in ``Z^d`` to
reals. On a box ``Lambda`` it acts on the couplings indexed by
``Lambda+ = {lam - gam : lam in Lambda, gam in Gamma}`` through
``A[j, k] = alpha[j - k]``; sites of ``Lambda+`` are ordered
lexicographically. The row-sum bound on ``B = A^{-1}`` is stated with
``alpha_0`` normalised to 1, that is for ``alpha_0 * B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .artifacts import csv_text
from .disorder import Distribution
from .lattice import BoxSpec
from .policy import DEFAULT, NumericPolicy


class SingularTransform(ValueError):
    pass


class SymbolVanishes(ValueError):
    pass


def as_alpha(alpha) -> dict[tuple[int, ...], float]:
    """Normalise ``alpha`` to ``{offset tuple: value}``; a plain sequence
    means offsets ``0, 1, ...`` in one dimension."""
    if isinstance(alpha, Mapping):
        out = {}
        for k, v in alpha.items():
            key = (int(k),) if np.isscalar(k) else tuple(int(x) for x in k)
            out[key] = float(v)
    else:
        out = {(i,): float(v) for i, v in enumerate(alpha)}
    out = {k: v for k, v in out.items() if v != 0.0}
    if not out:
        raise ValueError("empty convolution vector")
    dims = {len(k) for k in out}
    if len(dims) != 1:
        raise ValueError("offsets of mixed dimension")
    return out


def alpha_zero(alpha: dict) -> float:
    d = len(next(iter(alpha)))
    return alpha.get((0,) * d, 0.0)


def alpha_star(alpha: dict) -> float:
    d = len(next(iter(alpha)))
    return float(sum(abs(v) for k, v in alpha.items() if k != (0,) * d))


@dataclass
class ToeplitzOperator:
    alpha: dict
    sites: np.ndarray  # (L, d) integer coordinates, lexicographic
    matrix: scipy.sparse.csr_matrix
    _lu: object = field(default=None, repr=False, compare=False)

    @property
    def dimension(self) -> int:
        return self.sites.shape[1]

    @property
    def size(self) -> int:
        return self.sites.shape[0]

    @property
    def alpha0(self) -> float:
        return alpha_zero(self.alpha)

    @property
    def alpha_star(self) -> float:
        return alpha_star(self.alpha)

    @property
    def diagonally_dominant(self) -> bool:
        return self.alpha_star < abs(self.alpha0)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def lu(self):
        if self._lu is None:
            try:
                self._lu = scipy.sparse.linalg.splu(self.matrix.tocsc())
            except RuntimeError as exc:
                raise SingularTransform(str(exc)) from exc
            if np.any(self._lu.U.diagonal() == 0):
                raise SingularTransform("exactly singular Toeplitz matrix")
        return self._lu

    def log_abs_det(self) -> float:
        return float(np.sum(np.log(np.abs(self.lu().U.diagonal()))))

    def index_of(self, site) -> int:
        site = np.asarray(site).reshape(1, -1)
        hit = np.flatnonzero(np.all(self.sites == site, axis=1))
        if hit.size == 0:
            raise KeyError(tuple(site.ravel()))
        return int(hit[0])


def plus_sites(alpha: dict, box: BoxSpec) -> np.ndarray:
    coords = box.coords()
    gam = np.array(list(alpha.keys()), dtype=np.int64)
    pts = (coords[:, None, :] - gam[None, :, :]).reshape(-1, coords.shape[1])
    return np.unique(pts, axis=0)


def toeplitz_matrix(alpha, box: BoxSpec | Sequence[int], plus: bool = True) -> ToeplitzOperator:
    """Assemble ``A[j, k] = alpha[j - k]`` on ``Lambda+`` of ``box`` (or on the
    box itself when ``plus`` is false)."""
    alpha = as_alpha(alpha)
    if not isinstance(box, BoxSpec):
        box = BoxSpec(tuple(int(s) for s in box))
    d = len(next(iter(alpha)))
    if d != box.dimension:
        raise ValueError("alpha and box dimensions differ")
    sites = plus_sites(alpha, box) if plus else box.coords().astype(np.int64)
    L = sites.shape[0]
    lo = sites.min(axis=0)
    ext = sites.max(axis=0) - lo + 1
    strides = np.ones(d, dtype=np.int64)
    for a in range(d - 2, -1, -1):
        strides[a] = strides[a + 1] * ext[a + 1]
    key = (sites - lo) @ strides
    lookup = np.full(int(np.prod(ext)), -1, dtype=np.int64)
    lookup[key] = np.arange(L)
    rows, cols, vals = [], [], []
    for off, v in alpha.items():
        k = sites - np.array(off)  # column site for row site j: k = j - off
        ok = np.all((k >= lo) & (k < lo + ext), axis=1)
        j = np.flatnonzero(ok)
        c = lookup[(k[ok] - lo) @ strides]
        keep = c >= 0
        rows.append(j[keep])
        cols.append(c[keep])
        vals.append(np.full(int(keep.sum()), v))
    M = scipy.sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(L, L))
    return ToeplitzOperator(alpha, sites, M)


# ---------------------------------------------------------------------------
# symbol


@dataclass
class SymbolReport:
    min_abs: float
    lower_bound: float
    lipschitz: float
    winding: int | None
    winding_raw: float | None
    theta: np.ndarray | None = None
    values: np.ndarray | None = None

    def to_csv(self) -> str:
        if self.theta is None or self.theta.ndim != 1:
            raise ValueError("symbol scans are written for d = 1 only")
        s = self.values
        return csv_text(["theta", "re_s", "im_s", "abs_s"], zip(self.theta, s.real, s.imag, np.abs(s)))


def symbol(alpha, theta: np.ndarray) -> np.ndarray:
    """``s(theta) = sum_j alpha_j exp(i j . theta)``; ``theta`` has shape
    ``(..., d)`` (or ``(...)`` for d = 1)."""
    alpha = as_alpha(alpha)
    d = len(next(iter(alpha)))
    th = np.asarray(theta, dtype=float)
    if d == 1 and (th.ndim == 0 or th.shape[-1] != 1):
        th = th[..., None]
    out = np.zeros(th.shape[:-1], dtype=complex)
    for off, v in alpha.items():
        out += v * np.exp(1j * (th @ np.array(off, dtype=float)))
    return out


def symbol_analysis(alpha, points: int = 2 ** 14, keep_scan: bool = True) -> SymbolReport:
    """Minimum of ``|s|`` on a uniform torus grid of ``points`` nodes with a
    Lipschitz-certified lower bound, and the winding number for d = 1."""
    alpha = as_alpha(alpha)
    d = len(next(iter(alpha)))
    m = int(round(points ** (1.0 / d)))
    axis = -math.pi + 2 * math.pi * (np.arange(m) + 1) / m  # ]-pi, pi]
    grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1)
    s = symbol(alpha, grid)
    lip = float(sum(abs(v) * sum(abs(x) for x in off) for off, v in alpha.items()))
    mn = float(np.min(np.abs(s)))
    lower = mn - lip * math.pi / m
    if lower <= 0:
        raise SymbolVanishes(f"certified min |s| = {lower:.3g} is not positive")
    wind = raw = None
    if d == 1:
        ring = np.append(s, s[0])
        raw = float(np.sum(np.angle(ring[1:] / ring[:-1])) / (2 * math.pi))
        wind = int(round(raw))
        if abs(raw - wind) > 1e-6:
            raise AssertionError(f"winding {raw} is not an integer")
    if not keep_scan:
        return SymbolReport(mn, lower, lip, wind, raw)
    return SymbolReport(mn, lower, lip, wind, raw, axis if d == 1 else grid, s)


# ---------------------------------------------------------------------------
# inverse bound


@dataclass
class RowSumReport:
    norm: float
    bound: float | None
    identity_residual: float
    ok: bool | None


def inverse_rowsum(op: ToeplitzOperator, chunk: int = 512, policy: NumericPolicy = DEFAULT) -> RowSumReport:
    """Row-sum norm of ``alpha_0 * A^{-1}`` from an explicit LU inverse, the
    bound ``1 / (1 - alpha* / |alpha_0|)`` when it applies, and
    ``max |A B - I|``."""
    lu = op.lu()
    L = op.size
    rows = np.zeros(L)
    resid = 0.0
    for c0 in range(0, L, chunk):
        c1 = min(L, c0 + chunk)
        E = np.zeros((L, c1 - c0))
        E[np.arange(c0, c1), np.arange(c1 - c0)] = 1.0
        Bc = lu.solve(E)
        rows += np.sum(np.abs(Bc), axis=1)
        resid = max(resid, float(np.max(np.abs(op.matrix @ Bc - E))))
    a0 = abs(op.alpha0)
    norm = a0 * float(np.max(rows)) if a0 > 0 else float(np.max(rows))
    bound = None
    ok = None
    if op.diagonally_dominant:
        bound = 1.0 / (1.0 - op.alpha_star / a0)
        ok = norm <= bound * (1 + policy.audit_rtol)
    return RowSumReport(norm, bound, resid, ok)


# ---------------------------------------------------------------------------
# coupling transforms and densities


def transform_couplings(op: ToeplitzOperator, omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if omega.shape[0] != op.size:
        raise ValueError(f"expected {op.size} couplings, got {omega.shape[0]}")
    return op.matrix @ omega


def inverse_transform(op: ToeplitzOperator, eta: np.ndarray) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.shape[0] != op.size:
        raise ValueError(f"expected {op.size} values, got {eta.shape[0]}")
    return op.lu().solve(eta)


def common_density(op: ToeplitzOperator, f: Distribution, eta: np.ndarray) -> float:
    """``k(eta) = |det B| prod_k f((A^{-1} eta)_k)``."""
    omega = inverse_transform(op, eta)
    vals = f.density(omega)
    if np.any(vals == 0):
        return 0.0
    return float(math.exp(-op.log_abs_det() + float(np.sum(np.log(vals)))))


@dataclass
class PushforwardReport:
    max_z: float
    bins_used: int
    samples: int


def pushforward_check(op: ToeplitzOperator, f: Distribution, samples: int, bins: int, seed: int) -> PushforwardReport:
    """Histogram of ``eta = A omega`` (``omega`` i.i.d. ``f``) against
    ``k(eta)``, on bins whose corners and centre all give the same ``k``
    (so the expected count is exact for piecewise constant ``f``)."""
    rng = np.random.default_rng(seed)
    L = op.size
    omega = f.ppf(rng.random((samples, L)))
    eta = (op.matrix @ omega.T).T
    lo, hi = eta.min(axis=0), eta.max(axis=0)
    edges = [np.linspace(lo[i], hi[i], bins + 1) for i in range(L)]
    H, _ = np.histogramdd(eta, bins=edges)
    width = np.array([(hi[i] - lo[i]) / bins for i in range(L)])
    vol = float(np.prod(width))
    corners = np.array(np.meshgrid(*([[0, 1]] * L), indexing="ij")).reshape(L, -1).T
    zmax, used = 0.0, 0
    for idx in np.ndindex(*H.shape):
        base = np.array([edges[i][idx[i]] for i in range(L)])
        kc = common_density(op, f, base + 0.5 * width)
        # corners pulled inward by a hair so the bin interior is what is tested
        if kc == 0 or any(abs(common_density(op, f, base + width * (1e-9 + c * (1 - 2e-9))) - kc) > 1e-12 * kc
                          for c in corners):
            continue
        p = kc * vol
        expect = samples * p
        sd = math.sqrt(samples * p * (1 - p))
        zmax = max(zmax, abs(H[idx] - expect) / sd)
        used += 1
    return PushforwardReport(zmax, used, samples)


@dataclass
class ConditionalRow:
    eta_next: float
    k: float
    g: float
    rho: float
    status: str


def _line_integral(op: ToeplitzOperator, f: Distribution, eta: np.ndarray, j: int, nodes: int = 8) -> float:
    """``int k(eta + x e_j) dx``: piecewise smooth in ``x`` with breakpoints
    where some ``omega_k(x)`` crosses a knot of ``f``."""
    base = inverse_transform(op, eta)
    ej = np.zeros(op.size)
    ej[j] = 1.0
    col = inverse_transform(op, ej)
    knots = sorted({x for pc in f.pieces() for x in pc[:2]} | {a for a, _ in f.atoms()})
    lo_s, hi_s = f.support()
    xs = []
    for b, c in zip(base, col):
        if c != 0:
            xs.extend((t - b) / c for t in knots)
    xs = np.unique(np.array(xs))
    if xs.size < 2:
        return 0.0
    x0, w0 = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    det = math.exp(-op.log_abs_det())
    for a, b in zip(xs[:-1], xs[1:]):
        x = 0.5 * (b - a) * x0 + 0.5 * (a + b)
        om = base[None, :] + x[:, None] * col[None, :]
        dens = np.prod(f.density(om), axis=1)
        total += 0.5 * (b - a) * float(np.dot(w0, dens))
    return det * total


def conditional_density_probe(op: ToeplitzOperator, f: Distribution, j: int, grid: Sequence[float],
                              resolution: float = 1e-12) -> list[ConditionalRow]:
    """``rho_j = k / g_j`` at ``eta = y e_{j+1}`` for ``y`` on ``grid``, with the
    marginal ``g_j`` integrated exactly panel by panel over ``eta_j``."""
    if not 0 <= j < op.size - 1:
        raise IndexError("need 0 <= j < L - 1")
    out = []
    for y in grid:
        eta = np.zeros(op.size)
        eta[j + 1] = float(y)
        k = common_density(op, f, eta)
        g = _line_integral(op, f, eta, j)
        if g <= resolution:
            out.append(ConditionalRow(float(y), k, g, math.inf, "diverged"))
        else:
            out.append(ConditionalRow(float(y), k, g, k / g, "ok"))
    return out
