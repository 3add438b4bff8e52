"""Empirical Wegner estimates and the perturbation audits behind them.

The central quantity is ``E{Tr P_omega^l(I)}`` for ``I = [E - eps, E + eps)``,
estimated by Monte Carlo over disorder trials and fitted on log-log axes
against ``|I|`` and ``|Lambda|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .artifacts import write_csv, write_json
from .disorder import Distribution, holder_modulus, sample_couplings, site_uniforms
from .ids import EnsembleTable, grid_counts
from .lattice import (
    BC,
    BoxSpec,
    HamiltonianMatrix,
    assemble_alloy_potential,
    build_hamiltonian,
    convolve_on_box,
    periodic_background,
)
from .model import AlloyModel
from .parallel import ordered_map
from .policy import DEFAULT, NumericPolicy
from .spectra import count_below, eigenvalues


class EnergyOutsideSpectrum(ValueError):
    pass


class DegenerateLevel(RuntimeError):
    pass


def interval_trace(H: HamiltonianMatrix, E1: float, E2: float, policy: NumericPolicy = DEFAULT) -> int:
    """``Tr P([E1, E2))`` as a difference of strict counts."""
    if E2 < E1:
        raise ValueError("need E1 <= E2")
    c = count_below(H, np.array([E1, E2]), policy)
    return int(c[1] - c[0])


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    energy: float
    eps: np.ndarray
    scales: np.ndarray
    dimension: int
    trials: int
    mean_trace: np.ndarray  # (n_eps, n_scales)
    stderr: np.ndarray
    hit_prob: np.ndarray
    a: float = math.nan
    a_ci: tuple[float, float] = (math.nan, math.nan)
    b: float = math.nan
    b_ci: tuple[float, float] = (math.nan, math.nan)
    residuals: np.ndarray | None = None
    C_W_hat: float = math.nan
    C_ref: float = math.nan
    degenerate: bool = False
    polynomial: bool = True
    seed: int = 0
    fingerprint: str = ""

    def rows(self):
        return [(e, int(l), self.mean_trace[i, j], self.stderr[i, j])
                for i, e in enumerate(self.eps) for j, l in enumerate(self.scales)]

    def summary(self) -> dict:
        return {
            "energy": self.energy, "a": self.a, "a_ci": list(self.a_ci), "b": self.b, "b_ci": list(self.b_ci),
            "C_W_hat": self.C_W_hat, "C_ref": self.C_ref, "degenerate": self.degenerate,
            "polynomial": self.polynomial, "trials": self.trials, "seed": self.seed,
            "fingerprint": self.fingerprint,
            "max_abs_residual": None if self.residuals is None else float(np.max(np.abs(self.residuals))),
        }

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        write_csv(path, ["epsilon", "scale", "mean_trace", "stderr"], self.rows())
        write_json(path.with_suffix(".json"), self.summary())
        return path


def reference_constant(model: AlloyModel) -> float:
    """``||f||_inf / (|alpha_0| - alpha*)``, i.e. ``||f||_inf / (1 - alpha*)``
    once ``alpha_0`` is normalised to one."""
    a0, astar = abs(model.profile.alpha_zero), model.profile.alpha_star
    if a0 <= astar:
        return math.inf
    return model.disorder.distribution.sup_density() / (a0 - astar)


def _ols(X: np.ndarray, y: np.ndarray, level: float = 0.95):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    dof = max(len(y) - X.shape[1], 1)
    s2 = float(res @ res) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    tq = stats.t.ppf(0.5 + level / 2, dof)
    half = tq * np.sqrt(np.diag(cov))
    return coef, half, res


def wegner_scaling(
    model: AlloyModel,
    E: float,
    eps: Sequence[float],
    scales: Sequence[int],
    trials: int,
    seed: int,
    workers: int | None = 1,
    policy: NumericPolicy = DEFAULT,
    exponent_tol: float = 0.15,
) -> ScalingReport:
    """Monte Carlo ``E{Tr P([E - eps, E + eps))}`` on an (eps, l) grid with
    joint log-log fit ``log T = a log(2 eps) + b log|Lambda| + c``."""
    eps = np.asarray(sorted(eps), dtype=float)
    scales = np.asarray(scales, dtype=int)
    if eps.size < 2 or eps[0] <= 0:
        raise ValueError("need at least two positive eps values")
    grid = np.concatenate([E - eps, E + eps])
    ne = eps.size
    mean = np.zeros((ne, scales.size))
    se = np.zeros_like(mean)
    hit = np.zeros_like(mean)
    vols = []
    for j, l in enumerate(scales):
        box = model.box(int(l))
        vols.append(box.volume)

        def one(t, box=box):
            c = grid_counts(model.hamiltonian(box, seed, t), grid, policy)
            return c[ne:] - c[:ne]

        T = np.array(ordered_map(one, range(trials), workers), dtype=float)
        mean[:, j] = T.mean(axis=0)
        se[:, j] = T.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else 0.0
        hit[:, j] = (T > 0).mean(axis=0)
    rep = ScalingReport(E, eps, scales, model.dimension, trials, mean, se, hit, seed=seed,
                        fingerprint=model.fingerprint(), C_ref=reference_constant(model))
    vols = np.asarray(vols)
    rep.C_W_hat = float(np.max(mean / (2 * eps[:, None] * vols[None, :])))
    if model.deterministic:
        rep.degenerate = True
        rep.polynomial = False
        return rep
    if not np.any(mean > 0):
        raise EnergyOutsideSpectrum(f"no eigenvalues near E={E} on the whole grid")
    ok = mean > 0
    le = np.broadcast_to(np.log(2 * eps)[:, None], mean.shape)[ok]
    lv = np.broadcast_to(np.log(vols)[None, :], mean.shape)[ok]
    X = np.column_stack([le, lv, np.ones(le.size)])
    coef, half, res = _ols(X, np.log(mean[ok]))
    rep.a, rep.b = float(coef[0]), float(coef[1])
    rep.a_ci = (rep.a - half[0], rep.a + half[0])
    rep.b_ci = (rep.b - half[1], rep.b + half[1])
    rep.residuals = res
    rep.polynomial = bool(ok.all() and abs(rep.a - 1.0) <= exponent_tol)
    return rep


# ---------------------------------------------------------------------------
# density of states


@dataclass
class DOSReport:
    energies: np.ndarray
    dos: np.ndarray
    dos_stderr: np.ndarray
    sup: float
    bound: float | None
    ok: bool
    noisy: bool


def dos_estimate(table: EnsembleTable, bound: float | None = None, E2: float | None = None,
                 tolerance: float = 0.1) -> DOSReport:
    """Central differences of the mean IDS, sup over ``E <= E2``, checked
    against ``bound * (1 + tolerance)`` when a bound is given."""
    E = np.asarray(table.energies, dtype=float)
    if E.size < 3:
        raise ValueError("need at least three grid points")
    h = np.diff(E)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform")
    dos = np.gradient(table.mean, h[0])
    var = table.variance / max(table.count, 1)
    vse = np.empty_like(dos)
    vse[1:-1] = np.sqrt(var[2:] + var[:-2]) / (2 * h[0])
    vse[0] = np.sqrt(var[1] + var[0]) / h[0]
    vse[-1] = np.sqrt(var[-1] + var[-2]) / h[0]
    sel = E <= (E2 if E2 is not None else np.inf)
    sup = float(np.max(dos[sel])) if np.any(sel) else 0.0
    noisy = bool(np.median(vse) > 0.5 * max(np.median(np.abs(dos)), np.finfo(float).tiny))
    ok = True if bound is None else sup <= bound * (1 + tolerance)
    return DOSReport(E, dos, vse, sup, bound, ok, noisy)


# ---------------------------------------------------------------------------
# switch function


@dataclass(frozen=True)
class SwitchFunction:
    """Non-decreasing ``rho`` with ``rho = -1`` on ``]-inf, -eps]`` and
    ``rho = 0`` on ``[eps, inf[``, built from the quintic smoothstep.

    The steepest slope is ``15/16 / eps``, below the required ``1 / eps``.
    """

    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def _t(self, x):
        return np.clip((np.asarray(x, dtype=float) + self.eps) / (2 * self.eps), 0.0, 1.0)

    def __call__(self, x):
        t = self._t(x)
        return -1.0 + t ** 3 * (10 - 15 * t + 6 * t * t)

    def derivative(self, x):
        t = self._t(x)
        return 30 * t * t * (1 - t) ** 2 / (2 * self.eps)

    def verify(self, n: int = 100001) -> tuple[bool, float]:
        x = np.linspace(-2 * self.eps, 2 * self.eps, n)
        y = self(x)
        # rounding in the polynomial can dip by an ulp near the plateaus
        mono = bool(np.all(np.diff(y) >= -4 * np.finfo(float).eps))
        dmax = float(np.max(self.derivative(x)))
        return mono and dmax <= 1 / self.eps, dmax


# ---------------------------------------------------------------------------
# Hellmann-Feynman


@dataclass
class HFResult:
    fd: float
    form: float
    abs_err: float
    rel_err: float
    level: int
    cluster: tuple[int, int]
    degenerate: bool


def _levels(H: HamiltonianMatrix, lo: int, hi: int) -> np.ndarray:
    return eigenvalues(H, subset=(lo, hi)).values


def hellmann_feynman_audit(H: HamiltonianMatrix, U: np.ndarray, n: int, step: float = 1e-5,
                           policy: NumericPolicy = DEFAULT) -> HFResult:
    """Central difference of ``lambda_n(H + t U)`` at ``t = 0`` against
    ``<psi_n, U psi_n>`` for a diagonal perturbation ``U``.

    If ``lambda_n`` is closer than ``10 * step * ||U||`` to a neighbour the
    whole cluster is used: the derivative of the cluster sum against the
    trace of ``U`` compressed to the cluster eigenspace.
    """
    U = np.asarray(U, dtype=float)
    N = H.n
    lo_i, hi_i = max(n - 1, 0), min(n + 1, N - 1)
    el = eigenvalues(H, vectors=True, subset=(lo_i, hi_i))
    unorm = float(np.max(np.abs(U))) if U.size else 0.0
    gap_min = 10 * step * max(unorm, np.finfo(float).tiny)
    # grow the cluster while neighbours are too close
    lo, hi = n, n
    while True:
        need_lo, need_hi = max(lo - 1, 0), min(hi + 1, N - 1)
        if need_lo < lo_i or need_hi > hi_i:
            lo_i, hi_i = max(need_lo - 2, 0), min(need_hi + 2, N - 1)
            el = eigenvalues(H, vectors=True, subset=(lo_i, hi_i))
        w = el.values
        grown = False
        if lo > 0 and w[lo - lo_i] - w[lo - 1 - lo_i] < gap_min:
            lo -= 1
            grown = True
        if hi < N - 1 and w[hi + 1 - lo_i] - w[hi - lo_i] < gap_min:
            hi += 1
            grown = True
        if not grown:
            break
    V = el.vectors[:, lo - lo_i: hi - lo_i + 1]
    form = float(np.sum(U[:, None] * V * V))
    plus = _levels(H.shifted(step * U), lo, hi).sum()
    minus = _levels(H.shifted(-step * U), lo, hi).sum()
    fd = float((plus - minus) / (2 * step))
    err = abs(fd - form)
    rel = err / abs(form) if form != 0 else err
    return HFResult(fd, form, err, rel, n, (lo, hi), hi > lo)


def site_perturbation(model: AlloyModel, box: BoxSpec, j: int) -> np.ndarray:
    """``u(. - j)`` restricted to the box (flat site order)."""
    e = np.zeros(box.n_sites)
    e[j] = 1.0
    return convolve_on_box(box, e.reshape(box.sides), model.profile.stencil()).reshape(-1)


def covering_audit(model: AlloyModel, box: BoxSpec, seed: int, trial: int, n: int) -> tuple[float, float]:
    """``sum_j <psi_n, u_j psi_n>`` over masked ``j`` and the covering
    constant ``kappa = min_x sum_j u(x - j)``."""
    H = model.hamiltonian(box, seed, trial)
    psi = eigenvalues(H, vectors=True, subset=(n, n)).vectors[:, 0]
    mask = model.disorder.mask.resolve(box)
    ind = np.ones(box.n_sites) if mask is None else mask.astype(float)
    cover = convolve_on_box(box, ind.reshape(box.sides), model.profile.stencil()).reshape(-1)
    return float(np.sum(cover * psi * psi)), float(cover.min())


# ---------------------------------------------------------------------------
# sparse potentials with attractive single-site profile


@dataclass
class SparseReport:
    status: str
    levels: int = 0
    min_slack: float = math.nan
    min_derivative_slack: float = math.nan
    violations: list = field(default_factory=list)


def sparse_lower_bound_audit(model: AlloyModel, box: BoxSpec, seed: int, trial: int, E_prime: float,
                             step: float = 1e-6, policy: NumericPolicy = DEFAULT) -> SparseReport:
    """For every level ``lambda_n <= E' < 0`` check
    ``sum_k omega_k <psi, -u_k psi> >= |E'|`` and
    ``-sum_k d lambda_n / d omega_k >= |E'| / omega_+``; the latter is also
    confirmed by a finite difference in a common shift of all couplings."""
    if E_prime >= 0:
        raise ValueError("E' must be negative")
    stencil = model.profile.stencil()
    if any(v > 0 for v in stencil.values()) or not any(v < 0 for v in stencil.values()):
        return SparseReport("skipped: profile is not attractive")
    dist = model.disorder.distribution
    w_lo, w_hi = dist.support()
    if w_lo < 0:
        raise ValueError("couplings must be non-negative")
    if model.background is not None and np.min(model.background) < 0:
        raise ValueError("background potential must be non-negative")
    w = sample_couplings(model.disorder, box, seed, trial)
    Vw = assemble_alloy_potential(w, model.profile, box).values
    V = Vw if model.background is None else Vw + periodic_background(np.asarray(model.background), box).values
    H = build_hamiltonian(box, V)
    el = eigenvalues(H, vectors=True)
    sel = np.flatnonzero(el.values <= E_prime)
    if sel.size == 0:
        return SparseReport("skipped: no eigenvalue below E'")
    mask = w.mask if w.mask is not None else np.ones(box.n_sites, dtype=bool)
    Usum = convolve_on_box(box, mask.astype(float).reshape(box.sides), stencil).reshape(-1)
    rep = SparseReport("ok", int(sel.size))
    slack, dslack = [], []
    for k in sel:
        psi = el.vectors[:, k]
        s = float(np.sum(-Vw * psi * psi))
        D = float(np.sum(-Usum * psi * psi))
        lp = _levels(H.shifted(step * Usum), k, k)[0]
        lm = _levels(H.shifted(-step * Usum), k, k)[0]
        fd = -(lp - lm) / (2 * step)
        slack.append(s - abs(E_prime))
        dslack.append(min(D, fd) - abs(E_prime) / w_hi)
        if not policy.leq(abs(E_prime), s, abs(E_prime)):
            rep.violations.append(("coupling_sum", int(k), s))
        if not policy.leq(abs(E_prime) / w_hi, min(D, fd) + 1e-6 * abs(D), abs(E_prime)):
            rep.violations.append(("derivative", int(k), D, fd))
    rep.min_slack = float(min(slack))
    rep.min_derivative_slack = float(min(dslack))
    if rep.violations:
        rep.status = "violated"
    return rep


# ---------------------------------------------------------------------------
# long-range profiles


@dataclass
class TailReport:
    sup_shift: float
    sup_potential_diff: float
    tail_sum_bound: float
    bound: float
    ok: bool


def tail_constant(model: AlloyModel) -> float:
    """``c`` in ``|V_omega - V_omega'| <= c r^{-(m-d)}`` on ``Lambda_l`` when
    the couplings agree on ``Lambda_{l+r}``.

    With ``|u(y)| <= C (1+|y|^2)^{-m/2}``, coupling range ``W`` and
    disagreeing sites at sup-distance ``s >= r/2``:
    ``sum_{|y|_inf >= s} |u(y)| <= C 2d 3^{d-1} (1 + 1/(m-d)) s^{-(m-d)}``.
    """
    if model.profile.decay is None:
        raise ValueError("profile has no recorded decay (C, m)")
    C, m = model.profile.decay
    d = model.dimension
    if m <= d:
        raise ValueError("need m > d")
    lo, hi = model.disorder.distribution.support()
    return (hi - lo) * C * 2 * d * 3 ** (d - 1) * (1 + 1 / (m - d)) * 2 ** (m - d)


def tail_perturbation_audit(model: AlloyModel, l: int, r: int, seed: int, trial: int = 0,
                            policy: NumericPolicy = DEFAULT) -> TailReport:
    if r < 1:
        raise ValueError("r must be >= 1")
    stencil = model.profile.stencil()
    R = max(max(abs(c) for c in off) for off in stencil) if stencil else 0
    d = model.dimension
    M = r // 2  # agreement margin: couplings agree on a cube of side l + 2M <= l + r
    L = l + 2 * (M + R + 1)
    big = BoxSpec((L,) * d, model.spacing)
    w1 = sample_couplings(model.disorder, big, seed, 2 * trial).values.reshape(big.sides)
    w2 = sample_couplings(model.disorder, big, seed, 2 * trial + 1).values.reshape(big.sides)
    off = R + 1
    inner = tuple(slice(off, off + l + 2 * M) for _ in range(d))
    w2 = w2.copy()
    w2[inner] = w1[inner]
    core = tuple(slice(off + M, off + M + l) for _ in range(d))
    V1 = convolve_on_box(big, w1, stencil)[core].reshape(-1)
    V2 = convolve_on_box(big, w2, stencil)[core].reshape(-1)
    box = BoxSpec((l,) * d, model.spacing, model.bc)
    e1 = eigenvalues(build_hamiltonian(box, V1), policy=policy).values
    e2 = eigenvalues(build_hamiltonian(box, V2), policy=policy).values
    shift = float(np.max(np.abs(e1 - e2)))
    vdiff = float(np.max(np.abs(V1 - V2)))
    lo, hi = model.disorder.distribution.support()
    s = M + 1
    tail = (hi - lo) * sum(abs(v) for o, v in stencil.items() if max(abs(c) for c in o) >= s)
    bound = tail_constant(model) * r ** (-(model.profile.decay[1] - d)) if model.profile.decay else tail
    slack = policy.audit_rtol * max(1.0, np.max(np.abs(e1))) + policy.audit_atol
    ok = shift <= min(bound, tail) + slack and vdiff <= min(bound, tail) + slack
    return TailReport(shift, vdiff, tail, bound, bool(ok))


# ---------------------------------------------------------------------------
# Hölder-continuous coupling laws


@dataclass
class HolderRow:
    width: float
    scale: int
    p_hat: float
    p_lo: float
    p_hi: float
    mean_trace: float
    s_width: float
    ratio: float  # p_hat / (s(|I|) l^{2d})


def holder_wegner_audit(model: AlloyModel, E: float, widths: Sequence[float], scales: Sequence[int],
                        trials: int, seed: int, workers: int | None = 1,
                        policy: NumericPolicy = DEFAULT) -> list[HolderRow]:
    """Empirical ``P{sigma(H) cap I != 0}`` for ``I = [E - w/2, E + w/2)``
    with Wilson intervals, next to ``s(|I|)`` from the coupling law."""
    widths = np.asarray(widths, dtype=float)
    grid = np.concatenate([E - widths / 2, E + widths / 2])
    nw = widths.size
    rows = []
    for l in scales:
        box = model.box(int(l))

        def one(t, box=box):
            c = grid_counts(model.hamiltonian(box, seed, t), grid, policy)
            return c[nw:] - c[:nw]

        T = np.array(ordered_map(one, range(trials), workers))
        for i, wdt in enumerate(widths):
            k = int(np.sum(T[:, i] > 0))
            lo, hi = wilson_interval(k, trials)
            s = holder_modulus(model.disorder.distribution, float(wdt))
            denom = s * float(l) ** (2 * model.dimension)
            rows.append(HolderRow(float(wdt), int(l), k / trials, lo, hi, float(T[:, i].mean()), s,
                                  (k / trials) / denom if denom > 0 else math.inf))
    return rows


# ---------------------------------------------------------------------------
# small-support single-site potentials, continuum approximation in 1D


def continuum_box_1d(length: int, m: int) -> BoxSpec:
    """Dirichlet box approximating ``[0, length]`` with spacing ``1/m``;
    site ``i`` sits at ``x_i = (i + 1) / m``."""
    return BoxSpec((length * m - 1,), 1.0 / m, BC.DIRICHLET)


def continuum_alloy_1d(dist: Distribution, length: int, m: int, seed: int, trial: int,
                       support: float = 1.0) -> HamiltonianMatrix:
    """``-d^2/dx^2 + sum_k omega_k chi_[k, k+support)`` on ``[0, length]``."""
    box = continuum_box_1d(length, m)
    x = (np.arange(box.n_sites) + 1) / m
    w = dist.ppf(site_uniforms(seed, trial, length))
    cell = np.minimum(np.floor(x + 1e-12).astype(int), length - 1)
    frac = x - cell
    V = np.where(frac < support - 1e-12, w[cell], 0.0)
    return build_hamiltonian(box, V)


@dataclass
class SmallSupportReport:
    min_ratio: float
    level: int
    cell: int
    levels: int


def _trap_weights(x: np.ndarray, a: float, b: float, tol: float) -> np.ndarray:
    w = ((x > a + tol) & (x < b - tol)).astype(float)
    w[np.abs(x - a) <= tol] = 0.5
    w[np.abs(x - b) <= tol] = 0.5
    return w


def small_support_mass_audit(H: HamiltonianMatrix, s: float, window: tuple[float, float],
                             policy: NumericPolicy = DEFAULT) -> SmallSupportReport:
    """``min int_{Lambda_s(k)} |psi|^2 / int_{Lambda_1(k)} |psi|^2`` over
    eigenfunctions with eigenvalue in ``window`` and unit cells ``k``.

    ``Lambda_s(k)`` is the centred sub-interval of length ``s``; integrals
    use the trapezoid rule on the lattice (``psi = 0`` outside).
    """
    box = H.box
    if box is None or box.dimension != 1:
        raise ValueError("needs a 1D box")
    h = box.spacing
    if not 0 < s <= 1:
        raise ValueError("s must lie in (0, 1]")
    if s / h < 2:
        raise ValueError(f"window of length {s} is unresolvable at h={h}")
    x = (np.arange(box.n_sites) + 1) * h
    length = int(round((box.n_sites + 1) * h))
    el = eigenvalues(H, vectors=True)
    sel = np.flatnonzero((el.values >= window[0]) & (el.values < window[1]))
    if sel.size == 0:
        raise ValueError("no eigenvalue in the window")
    tol = 1e-9 * h
    best = (math.inf, -1, -1)
    P = el.vectors[:, sel] ** 2
    for k in range(length):
        full = _trap_weights(x, k, k + 1, tol) @ P
        part = _trap_weights(x, k + 0.5 - s / 2, k + 0.5 + s / 2, tol) @ P
        r = np.where(full > 0, part / np.where(full > 0, full, 1.0), np.inf)
        i = int(np.argmin(r))
        if r[i] < best[0]:
            best = (float(r[i]), int(sel[i]), k)
    return SmallSupportReport(best[0], best[1], best[2], int(sel.size))
