"""Spectral averaging, Stone's formula, Green's function decay and the
double-well resonance experiment, all on finite matrices.

Integrals over the coupling ``zeta`` are done with Gauss-Legendre panels and
carry an explicit error budget: the truncation tail bounded through
``||(H + zeta W - z)^{-1}|| <= 1/|Im z|`` plus an a-posteriori quadrature
estimate from comparing two panel refinements.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .disorder import Distribution
from .lattice import BC, BoxSpec, HamiltonianMatrix, build_hamiltonian
from .model import AlloyModel
from .parallel import ordered_map
from .policy import DEFAULT, NumericPolicy
from .spectra import SingularShift, count_below, eigenvalues, shifted_solve, singular_values
from .wegner import wilson_interval

log = logging.getLogger(__name__)


class PreconditionError(ValueError):
    pass


class Resonance(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    Z: float = 1e4
    nodes: int = 32
    rule: str = "gauss"
    panels: int = 8
    max_panels: int = 4096
    tail_accounting: bool = True

    def __post_init__(self):
        if not self.Z > 0:
            raise ValueError("truncation radius must be positive")
        if self.nodes < 16:
            raise ValueError("need at least 16 nodes")
        if self.rule not in ("gauss", "trapezoid"):
            raise ValueError(f"unknown rule {self.rule!r}")


def _rule(spec: QuadratureSpec, a: float, b: float):
    if spec.rule == "gauss":
        x, w = np.polynomial.legendre.leggauss(spec.nodes)
        return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w
    x = np.linspace(a, b, spec.nodes)
    w = np.full(spec.nodes, (b - a) / (spec.nodes - 1))
    w[[0, -1]] *= 0.5
    return x, w


def _adaptive(f, breaks: Sequence[float], spec: QuadratureSpec, tol: float):
    """Integrate a vectorised ``f`` over consecutive ``breaks`` by panel
    bisection; returns ``(value, error_estimate)``."""
    stack = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            stack.append((a, b))
    total, err = 0.0 + 0.0j, 0.0
    work = []
    for a, b in stack:
        x, w = _rule(spec, a, b)
        work.append((a, b, complex(np.dot(w, f(x)))))
    budget = spec.max_panels
    while work:
        a, b, coarse = work.pop()
        m = 0.5 * (a + b)
        x1, w1 = _rule(spec, a, m)
        x2, w2 = _rule(spec, m, b)
        left = complex(np.dot(w1, f(x1)))
        right = complex(np.dot(w2, f(x2)))
        fine = left + right
        e = abs(fine - coarse)
        span = max(breaks[-1] - breaks[0], np.finfo(float).tiny)
        if e <= tol * (b - a) / span or budget <= 0 or b - a < 1e-14 * span:
            total += fine
            err += e
        else:
            budget -= 2
            work.append((a, m, left))
            work.append((m, b, right))
    return total, err


def _check_j(W: np.ndarray, J: np.ndarray, policy: NumericPolicy):
    if not (np.allclose(W, W.T) and np.allclose(J, J.T)):
        raise PreconditionError("W and J must be symmetric")
    scale = max(np.linalg.norm(W, 2), 1.0)
    if np.linalg.eigvalsh(J).min() < -policy.rank_rtol * scale:
        raise PreconditionError("J must be non-negative")
    if np.linalg.eigvalsh(W - J @ J).min() < -policy.rank_rtol * scale:
        raise PreconditionError("J^2 <= W is violated")


# ---------------------------------------------------------------------------
# resolvent average


@dataclass
class AverageResult:
    value: complex
    tail_bound: float
    quad_error: float
    bound: float
    ok: bool
    reference: complex | None = None


def resolvent_average(H: np.ndarray, W: np.ndarray, J: np.ndarray, z: complex, t: float, phi: np.ndarray,
                      quad: QuadratureSpec = QuadratureSpec(), policy: NumericPolicy = DEFAULT) -> AverageResult:
    """``int <phi, J (H + zeta W - z)^{-1} J phi> dzeta / (1 + t zeta^2)``
    over ``[-Z, Z]`` with a certified tail; verdict ``|value| <= pi + error``.

    ``reference`` is the closed contour value
    ``(pi / sqrt t) <phi, K(i / sqrt t, z) phi>``.
    """
    H, W, J = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (H, W, J))
    phi = np.atleast_1d(np.asarray(phi, dtype=complex))
    if not z.imag < 0:
        raise PreconditionError("need Im z < 0")
    if not t > 0:
        raise PreconditionError("need t > 0")
    if abs(np.linalg.norm(phi) - 1) > 1e-12:
        raise PreconditionError("phi must be normalised")
    _check_j(W, J, policy)
    n = H.shape[0]
    Jphi = J @ phi
    eye = np.eye(n)
    st = math.sqrt(t)

    def g(zeta):
        A = H[None] + zeta[:, None, None] * W[None] - z * eye[None]
        x = np.linalg.solve(A, np.broadcast_to(Jphi, (zeta.size, n))[..., None])[..., 0]
        return x @ Jphi.conj()

    # substitute zeta = tan(theta) / sqrt(t): dzeta / (1 + t zeta^2) = dtheta / sqrt(t)
    def f(theta):
        return g(np.tan(theta) / st) / st

    th = math.atan(st * quad.Z)
    breaks = np.linspace(-th, th, quad.panels + 1)
    jn = np.linalg.norm(J, 2)
    value, qerr = _adaptive(f, breaks, quad, policy.quad_tol)
    tail = jn * jn / abs(z.imag) * 2 * (math.pi / 2 - th) / st if quad.tail_accounting else 0.0
    K = np.linalg.solve(H + (1j / st) * W - z * eye, Jphi)
    ref = (math.pi / st) * (Jphi.conj() @ K)
    return AverageResult(complex(value), tail, qerr, math.pi, abs(value) <= math.pi + tail + qerr, complex(ref))


# ---------------------------------------------------------------------------
# projection average


def _count_in(H: np.ndarray, W: np.ndarray, zeta: float, E: float) -> int:
    return int(np.sum(np.linalg.eigvalsh(H + zeta * W) < E))


def _crossings(H, W, E, lo, hi, tol) -> list[float]:
    """Points in ``[lo, hi]`` where ``#{lambda(H + zeta W) < E}`` changes."""
    out = []
    stack = [(lo, hi, _count_in(H, W, lo, E), _count_in(H, W, hi, E))]
    while stack:
        a, b, ca, cb = stack.pop()
        if ca == cb:
            continue
        if b - a <= tol:
            out.append(0.5 * (a + b))
            continue
        m = 0.5 * (a + b)
        cm = _count_in(H, W, m, E)
        stack.append((a, m, ca, cm))
        stack.append((m, b, cm, cb))
    return sorted(out)


def projection_average(H: np.ndarray, W: np.ndarray, J: np.ndarray, interval: tuple[float, float],
                       rho: Distribution, psi: np.ndarray, quad: QuadratureSpec = QuadratureSpec(nodes=16, panels=1),
                       policy: NumericPolicy = DEFAULT) -> AverageResult:
    """``int rho(zeta) <psi, J P(zeta, I) J psi> dzeta`` with ``P(zeta, I)`` the
    spectral projection of ``H + zeta W`` on ``I = [a, b)``; verdict against
    ``||rho||_inf |I|``. Panels break at every eigenvalue crossing of the
    interval ends and at the density knots."""
    H, W, J = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (H, W, J))
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    a, b = interval
    if b < a:
        raise ValueError("need a <= b")
    if abs(np.linalg.norm(psi) - 1) > 1e-12:
        raise PreconditionError("psi must be normalised")
    if np.linalg.eigvalsh(W).min() < -policy.rank_rtol * max(np.linalg.norm(W, 2), 1.0):
        raise PreconditionError("W must be non-negative")
    _check_j(W, J, policy)
    sup = rho.sup_density()
    if not math.isfinite(sup):
        raise PreconditionError("rho has atoms; the average needs a bounded density")
    bound = sup * (b - a)
    if b == a:
        return AverageResult(0.0, 0.0, 0.0, bound, True)
    lo, hi = rho.support()
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise PreconditionError("rho must have compact support")
    knots = sorted({x for pc in rho.pieces() for x in pc[:2]})
    span = hi - lo
    tol = 1e-13 * max(span, 1.0)
    cuts = _crossings(H, W, a, lo, hi, tol) + _crossings(H, W, b, lo, hi, tol)
    breaks = np.unique(np.array(knots + cuts + [lo, hi]))
    Jpsi = J @ psi

    def f(zeta):
        out = np.empty(zeta.size)
        dens = rho.density(zeta)
        for i, zt in enumerate(zeta):
            w, V = np.linalg.eigh(H + zt * W)
            sel = (w >= a) & (w < b)
            c = V[:, sel].T @ Jpsi
            out[i] = dens[i] * float(c @ c)
        return out

    value, qerr = _adaptive(f, breaks, quad, policy.quad_tol)
    # crossing points are located to within tol; each misplaced sliver can
    # carry at most sup * ||J psi||^2 * tol
    qerr += len(cuts) * sup * float(Jpsi @ Jpsi) * tol
    v = float(value.real)
    return AverageResult(v, 0.0, qerr, bound, v <= bound + qerr + policy.audit_atol)


# ---------------------------------------------------------------------------
# Stone's formula


@dataclass
class StoneReport:
    deltas: np.ndarray
    errors: np.ndarray
    matrices: list
    endpoint_hit: bool
    monotone: bool
    C_hat: float


def stone_projection(H: np.ndarray, E1: float, E2: float, deltas: Sequence[float],
                     policy: NumericPolicy = DEFAULT) -> StoneReport:
    """``f_delta(H)`` with ``f_delta(x) = (arctan((x-E1)/delta) - arctan((x-E2)/delta)) / pi``
    against the limit ``(P[E1,E2] + P(]E1,E2[)) / 2``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0):
        raise ValueError("delta must be positive")
    w, V = np.linalg.eigh(H)
    tol = policy.cluster_rtol * max(np.max(np.abs(w)), 1.0)
    at1 = np.abs(w - E1) <= tol
    at2 = np.abs(w - E2) <= tol
    hit = bool(np.any(at1 | at2))
    if hit:
        log.info("stone_projection: eigenvalue on an interval end; half weight used")
    target = ((w > E1) & (w < E2)).astype(float)
    target[at1 | at2] = 0.5
    errs, mats = [], []
    for d in deltas:
        fv = (np.arctan((w - E1) / d) - np.arctan((w - E2) / d)) / math.pi
        mats.append((V * fv) @ V.T)
        errs.append(float(np.max(np.abs(fv - target))))
    errs = np.asarray(errs)
    order = np.argsort(-deltas)
    mono = bool(np.all(np.diff(errs[order]) <= policy.audit_atol))
    return StoneReport(deltas, errs, mats, hit, mono, float(np.max(errs / deltas)))


# ---------------------------------------------------------------------------
# Green's function decay


@dataclass
class GreenReport:
    norm: float
    gamma_hat: float
    distance: float
    spectral_bound_ok: bool

    def regular(self, gamma: float, l: int) -> bool:
        return self.norm <= math.exp(-gamma * l)


def belt_and_core(box: BoxSpec) -> tuple[np.ndarray, np.ndarray]:
    """Site sets of ``Lambda_{l-1} minus Lambda_{l-3}`` and ``Lambda_{l/3}``
    for a cube of side ``l`` centred at its midpoint."""
    l = box.sides[0]
    if any(s != l for s in box.sides) or l % 6:
        raise ValueError("needs a cube with side in 6N")
    r = np.max(np.abs(box.coords() - (l - 1) / 2), axis=1)
    belt = np.flatnonzero((r < (l - 1) / 2) & (r >= (l - 3) / 2))
    core = np.flatnonzero(r < l / 6)
    return belt, core


def green_decay(H: HamiltonianMatrix, E: float, policy: NumericPolicy = DEFAULT) -> GreenReport:
    """``||chi_out (H - E)^{-1} chi_in||`` with ``gamma_hat = -log(norm) / l``."""
    box = H.box
    belt, core = belt_and_core(box)
    w = eigenvalues(H, policy=policy).values
    dist = float(np.min(np.abs(w - E)))
    if dist <= policy.cluster_rtol * max(H.norm_bound(), 1.0):
        raise Resonance(f"E={E} is numerically an eigenvalue")
    rhs = np.zeros((H.n, core.size))
    rhs[core, np.arange(core.size)] = 1.0
    try:
        G = shifted_solve(H, E, rhs, policy)
    except SingularShift as exc:
        raise Resonance(str(exc)) from exc
    norm = float(singular_values(G[belt])[0])
    l = box.sides[0]
    gamma = -math.log(norm) / l if norm > 0 else math.inf
    ok = norm <= (1 + policy.audit_rtol) / dist
    if not ok:
        raise AssertionError(f"green_decay: norm {norm} exceeds 1/dist {1 / dist}")
    return GreenReport(norm, gamma, dist, ok)


@dataclass
class RegularityReport:
    p_hat: float
    lo: float
    hi: float
    regular: int
    trials: int
    resonant: int


def regularity_probability(model: AlloyModel, E: float, gamma: float, l: int, trials: int, seed: int,
                           workers: int | None = 1, policy: NumericPolicy = DEFAULT) -> RegularityReport:
    box = model.box(l)

    def one(t):
        try:
            return 1 if green_decay(model.hamiltonian(box, seed, t), E, policy).regular(gamma, l) else 0
        except Resonance:
            return -1

    res = np.array(ordered_map(one, range(trials), workers))
    k = int(np.sum(res == 1))
    lo, hi = wilson_interval(k, trials)
    return RegularityReport(k / trials, lo, hi, k, trials, int(np.sum(res == -1)))


@dataclass
class DistanceRow:
    scale: int
    threshold: float
    p_hat: float
    lo: float
    hi: float


def eigenvalue_distance_tail(model: AlloyModel, E: float, scales: Sequence[int], beta: float, gamma: float,
                             trials: int, seed: int, workers: int | None = 1,
                             policy: NumericPolicy = DEFAULT) -> tuple[list[DistanceRow], float]:
    """``P{d(sigma(H^l), E) <= exp(-gamma l^beta)}`` per scale and the slope
    ``alpha_hat`` of ``-log P`` against ``l^beta`` (NaN if fewer than two
    non-zero estimates)."""
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    rows = []
    for l in scales:
        box = model.box(int(l))
        delta = math.exp(-gamma * float(l) ** beta)
        grid = np.array([E - delta, np.nextafter(E + delta, np.inf)])

        def one(t, box=box, grid=grid):
            c = count_below(model.hamiltonian(box, seed, t), grid, policy)
            return int(c[1] - c[0] > 0)

        k = int(np.sum(ordered_map(one, range(trials), workers)))
        lo, hi = wilson_interval(k, trials)
        rows.append(DistanceRow(int(l), delta, k / trials, lo, hi))
    pos = [(float(r.scale) ** beta, -math.log(r.p_hat)) for r in rows if r.p_hat > 0]
    alpha = math.nan
    if len(pos) >= 2:
        x, y = np.array(pos).T
        alpha = float(np.polyfit(x, y, 1)[0])
    return rows, alpha


# ---------------------------------------------------------------------------
# double well


@dataclass
class SpencerReport:
    rho: int
    splitting: float
    amp_product: float
    amp_products: tuple[float, float]
    sigma_distance: float
    mass_ratio: float
    mirror_defect: float
    energies: tuple[float, float]


def _well_sites(start: int, width: int) -> np.ndarray:
    return np.arange(start, start + width)


def spencer_double_well(depth: float, width: int, rho: int, mode: str = "symmetric", detuning: float = 0.0,
                        margin: int | None = None, policy: NumericPolicy = DEFAULT) -> SpencerReport:
    """Two square wells of depth ``depth`` and ``width`` sites whose centres
    are ``rho`` apart, on a 1D Dirichlet chain with ``margin`` free sites on
    either side.

    ``mode``: ``"symmetric"`` (second well is the mirror image of the first),
    ``"detuned"`` (second well deeper by ``detuning >= exp(-sqrt(rho))``) or
    ``"single"`` (second well absent; amplitudes there are the tail of the
    first). Amplitudes are ``max |psi|`` over a well's sites.
    """
    if rho < 2 * width:
        raise ValueError(f"wells overlap: rho={rho} < 2 * width={2 * width}")
    if mode == "detuned" and detuning < math.exp(-math.sqrt(rho)):
        raise ValueError("detuning must be at least exp(-sqrt(rho))")
    if mode not in ("symmetric", "detuned", "single"):
        raise ValueError(f"unknown mode {mode!r}")
    margin = 4 * width if margin is None else margin
    n = 2 * margin + rho + width
    box = BoxSpec((n,), bc=BC.DIRICHLET)
    s1 = _well_sites(margin, width)
    s2 = _well_sites(margin + rho, width)
    V1 = np.zeros(n)
    V1[s1] = -depth
    V2 = V1[::-1].copy()  # exact mirror image of well 1
    assert np.array_equal(np.flatnonzero(V2), s2)
    if mode == "detuned":
        V2[s2] -= detuning
    elif mode == "single":
        V2[:] = 0.0
    V = V1 + V2
    el = eigenvalues(build_hamiltonian(box, V), vectors=True, subset=(0, 1), policy=policy)
    amps = []
    for k in range(2):
        psi = el.vectors[:, k]
        amps.append(float(np.max(np.abs(psi[s1])) * np.max(np.abs(psi[s2]))))
    psi0 = el.vectors[:, 0]
    m1, m2 = float(np.sum(psi0[s1] ** 2)), float(np.sum(psi0[s2] ** 2))
    mass_ratio = max(m1, m2) / max(min(m1, m2), np.finfo(float).tiny)
    w1 = eigenvalues(build_hamiltonian(box, V1), policy=policy).values
    w2 = eigenvalues(build_hamiltonian(box, V2), policy=policy).values
    # the wells only create eigenvalues below the free band [0, 4]
    b1, b2 = w1[w1 < 0], w2[w2 < 0]
    sd = float(np.min(np.abs(b1[:, None] - b2[None, :]))) if b1.size and b2.size else math.inf
    mirror = float(np.max(np.abs(V - V[::-1]))) if mode == "symmetric" else math.nan
    return SpencerReport(rho, float(el.values[1] - el.values[0]), amps[0], (amps[0], amps[1]), sd, mass_ratio,
                         mirror, (float(el.values[0]), float(el.values[1])))


def spencer_scan(depth: float, width: int, rhos: Sequence[int], mode: str = "symmetric", detuning: float = 0.0,
                 margin: int | None = None) -> list[SpencerReport]:
    return [spencer_double_well(depth, width, int(r), mode, detuning, margin) for r in rhos]
