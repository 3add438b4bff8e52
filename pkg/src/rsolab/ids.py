"""Finite-volume integrated density of states and its diagnostics.

``N(E) = #{lambda_n < E} / |Lambda|`` with ``|Lambda| = n_sites * h^d``.
Ensembles average ``N`` over disorder trials; the tables keep the count,
mean and sum of squared deviations so they can be merged exactly (Chan's
parallel update) in a fixed order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .artifacts import write_csv, write_json
from .disorder import percolation_cluster
from .lattice import BC, BoxSpec, HamiltonianMatrix, build_cluster_hamiltonian, build_hamiltonian
from .model import AlloyModel
from .parallel import ordered_map
from .policy import DEFAULT, NumericPolicy
from .spectra import count_below, eigenvalues

log = logging.getLogger(__name__)

# below this size a dense eigensolve is cheaper than repeated inertia counts
DENSE_COUNT_CUTOFF = 1500


class GridTooCoarse(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CountingFunction:
    values: np.ndarray
    volume: float

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not self.volume > 0:
            raise ValueError("volume must be positive")

    def counts(self, E) -> np.ndarray:
        return np.searchsorted(self.values, E, side="left")

    def __call__(self, E):
        c = self.counts(E)
        return c / self.volume

    def interval_count(self, E1: float, E2: float) -> int:
        if E2 < E1:
            raise ValueError("need E1 <= E2")
        return int(self.counts(E2) - self.counts(E1))


def counting_function(H: HamiltonianMatrix, box: BoxSpec | None = None, policy: NumericPolicy = DEFAULT) -> CountingFunction:
    box = box if box is not None else H.box
    volume = box.volume if box is not None else float(H.n)
    return CountingFunction(eigenvalues(H, policy=policy).values, volume)


def grid_counts(H: HamiltonianMatrix, grid: np.ndarray, policy: NumericPolicy = DEFAULT) -> np.ndarray:
    """Strict counts ``#{lambda < E}`` on a grid, by the cheapest exact route."""
    grid = np.asarray(grid, dtype=float)
    if H.n == 0:
        return np.zeros(grid.shape, dtype=np.int64)
    if H.bandwidth <= 1 or H.n > DENSE_COUNT_CUTOFF:
        return count_below(H, grid, policy)
    w = eigenvalues(H, policy=policy).values
    return np.searchsorted(w, grid, side="left")


def laplace_transform(cf: CountingFunction, t: float) -> float:
    """``|Lambda|^{-1} sum_n exp(-t lambda_n)``."""
    if not t > 0:
        raise ValueError("t must be positive")
    return float(np.sum(np.exp(-t * cf.values)) / cf.volume)


# ---------------------------------------------------------------------------
# ensemble tables


@dataclass(frozen=True, eq=False)
class EnsembleTable:
    energies: np.ndarray
    count: int
    mean: np.ndarray
    m2: np.ndarray
    seed: int = 0
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)
    samples: np.ndarray | None = None

    @classmethod
    def from_samples(cls, energies, samples, seed: int = 0, fingerprint: str = "", meta: dict | None = None,
                     keep_samples: bool = False) -> "EnsembleTable":
        S = np.asarray(samples, dtype=float)
        if S.ndim != 2 or S.shape[0] < 1:
            raise ValueError("samples must be (trials, energies) with trials >= 1")
        mean = S.mean(axis=0)
        m2 = ((S - mean) ** 2).sum(axis=0)
        return cls(np.asarray(energies, dtype=float), S.shape[0], mean, m2, seed, fingerprint,
                   dict(meta or {}), S if keep_samples else None)

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / (self.count - 1) if self.count > 1 else np.zeros_like(self.m2)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def stderr(self) -> np.ndarray:
        return self.std / np.sqrt(self.count)

    def merge(self, other: "EnsembleTable") -> "EnsembleTable":
        if not np.array_equal(self.energies, other.energies):
            raise ValueError("energy grids differ")
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * (nb / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (na * nb / n)
        return EnsembleTable(self.energies, n, mean, m2, self.seed, self.fingerprint, dict(self.meta))

    def rows(self):
        var = self.variance
        return [(e, m, v, self.count) for e, m, v in zip(self.energies, self.mean, var)]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        write_csv(path, ["energy", "mean", "variance", "trials"], self.rows())
        write_json(path.with_suffix(".json"), {"seed": self.seed, "fingerprint": self.fingerprint, **self.meta})
        return path

    def samples_to_csv(self, path: str | Path) -> Path:
        if self.samples is None:
            raise ValueError("table was built without samples")
        rows = [(t, e, v) for t in range(self.samples.shape[0]) for e, v in zip(self.energies, self.samples[t])]
        return write_csv(path, ["trial", "energy", "value"], rows)


def ids_ensemble(
    model: AlloyModel,
    scales: Sequence[int],
    trials: int,
    grid,
    seed: int,
    bc: BC | str | None = None,
    workers: int | None = 1,
    keep_samples: bool = False,
    policy: NumericPolicy = DEFAULT,
) -> dict[int, EnsembleTable]:
    """Mean and variance of ``N_omega^l`` on ``grid`` for every scale."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = np.asarray(grid, dtype=float)
    out = {}
    for l in scales:
        box = model.box(l, bc)

        def one(t, box=box):
            H = model.hamiltonian(box, seed, t)
            return grid_counts(H, grid, policy) / box.volume

        S = np.array(ordered_map(one, range(trials), workers))
        meta = {"scale": int(l), "bc": box.bc.value, "model": model.to_dict()}
        out[int(l)] = EnsembleTable.from_samples(grid, S, seed, model.fingerprint(), meta, keep_samples)
    return out


def central_sites(box: BoxSpec, inner: Sequence[int]) -> np.ndarray:
    """Flat indices of the centred sub-box with the given sides."""
    c = box.coords()
    sel = np.ones(box.n_sites, dtype=bool)
    for a, (L, m) in enumerate(zip(box.sides, inner)):
        if m > L:
            raise ValueError("inner box larger than the box")
        lo = (L - m) // 2
        sel &= (c[:, a] >= lo) & (c[:, a] < lo + m)
    return np.flatnonzero(sel)


def localized_trace(
    model: AlloyModel,
    inner: int,
    grid,
    seed: int,
    trials: int = 1,
    factor: int = 4,
    workers: int | None = 1,
    policy: NumericPolicy = DEFAULT,
) -> EnsembleTable:
    """``|Lambda_1|^{-1} Tr[chi_{Lambda_1} P(]-inf, E[)]`` on a box ``factor``
    times larger than the centred unit box ``Lambda_1``."""
    if factor < 4:
        raise ValueError("the enclosing box must be at least 4x larger")
    grid = np.asarray(grid, dtype=float)
    box = model.box(factor * inner)
    sites = central_sites(box, (inner,) * box.dimension)
    vol = len(sites) * box.spacing ** box.dimension

    def one(t):
        el = eigenvalues(model.hamiltonian(box, seed, t), vectors=True, policy=policy)
        w = np.sum(el.vectors[sites] ** 2, axis=0)
        cum = np.concatenate([[0.0], np.cumsum(w)])
        return cum[np.searchsorted(el.values, grid, side="left")] / vol

    S = np.array(ordered_map(one, range(trials), workers))
    meta = {"scale": int(inner), "enclosing": int(factor * inner), "estimator": "localized_trace"}
    return EnsembleTable.from_samples(grid, S, seed, model.fingerprint(), meta)


# ---------------------------------------------------------------------------
# bracketing and boundary conditions


@dataclass
class BracketingReport:
    n_energies: int
    violations: list = field(default_factory=list)
    # energies where the clamped stencil is not superadditive (informational)
    clamped_deficits: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _split_boxes(box: BoxSpec, axis: int, at: int):
    if not 0 < at < box.sides[axis]:
        raise ValueError("split must leave two non-empty sub-boxes")
    s1 = list(box.sides)
    s2 = list(box.sides)
    s1[axis] = at
    s2[axis] = box.sides[axis] - at
    c = box.coords()
    idx1 = np.flatnonzero(c[:, axis] < at)
    idx2 = np.flatnonzero(c[:, axis] >= at)
    return box.with_sides(s1), idx1, box.with_sides(s2), idx2


def bracketing_audit(
    model: AlloyModel,
    box: BoxSpec,
    axis: int,
    at: int,
    seed: int,
    trial: int = 0,
    policy: NumericPolicy = DEFAULT,
) -> BracketingReport:
    """Check Dirichlet superadditivity, Neumann subadditivity and ``F^N >= F^D``
    for one sample, at every energy where any counting function jumps.

    Superadditivity is checked for the bracketing Dirichlet stencil
    (``BC.DIRICHLET2``), applied alike to the box and to both pieces. The
    clamped stencil only enters the ``F^N >= F^D`` check; its failures of
    superadditivity are counted in ``clamped_deficits``.
    """
    V = model.potential(box.with_bc(BC.DIRICHLET), seed, trial).values
    b1, i1, b2, i2 = _split_boxes(box, axis, at)
    spec = {}
    for bc in (BC.DIRICHLET, BC.DIRICHLET2, BC.NEUMANN):
        whole = eigenvalues(build_hamiltonian(box.with_bc(bc), V), policy=policy).values
        p1 = eigenvalues(build_hamiltonian(b1.with_bc(bc), V[i1]), policy=policy).values
        p2 = eigenvalues(build_hamiltonian(b2.with_bc(bc), V[i2]), policy=policy).values
        spec[bc] = (whole, np.sort(np.concatenate([p1, p2])))
    allv = np.concatenate([a for pair in spec.values() for a in pair])
    scale = max(np.max(np.abs(allv)), 1.0)
    tau = policy.audit_rtol * scale + policy.audit_atol
    energies = np.unique(np.concatenate([allv, [allv.max() + 1.0]]))

    def F(vals, E):
        return np.searchsorted(vals, E, side="left")

    cw, cp = spec[BC.DIRICHLET]
    dw, dp = spec[BC.DIRICHLET2]
    nw, np_ = spec[BC.NEUMANN]
    rep = BracketingReport(energies.size)
    checks = [
        ("dirichlet_superadditive", dw, dp),  # F_D(whole) >= F_D(pieces)
        ("neumann_subadditive", np_, nw),  # F_N(pieces) >= F_N(whole)
        ("neumann_above_dirichlet", nw, cw),  # F_N >= F_D, clamped stencil
        ("neumann_above_dirichlet2", nw, dw),  # F_N >= F_D, bracketing stencil
    ]
    for name, big, small in checks:
        lhs = F(big, energies + tau)
        rhs = F(small, energies)
        for k in np.flatnonzero(lhs < rhs):
            rep.violations.append((name, float(energies[k]), int(lhs[k]), int(rhs[k])))
    rep.clamped_deficits = int(np.sum(F(cw, energies + tau) < F(cp, energies)))
    return rep


def bc_gap(
    model: AlloyModel,
    scales: Sequence[int],
    grid,
    trials: int,
    seed: int,
    workers: int | None = 1,
    policy: NumericPolicy = DEFAULT,
) -> dict[int, float]:
    """``sup_E |mean N^D - mean N^N|`` per scale (same couplings for both)."""
    D = ids_ensemble(model, scales, trials, grid, seed, BC.DIRICHLET, workers, policy=policy)
    N = ids_ensemble(model, scales, trials, grid, seed, BC.NEUMANN, workers, policy=policy)
    return {l: float(np.max(np.abs(D[l].mean - N[l].mean))) for l in D}


# ---------------------------------------------------------------------------
# percolation


@dataclass(frozen=True)
class Jump:
    energy: float
    size: float


def detect_jumps(table: EnsembleTable, threshold: float = 0.01, max_step: float = 0.01) -> list[Jump]:
    """Grid steps across which the mean IDS rises by at least ``threshold``.

    The reported energy is the midpoint of the step.
    """
    E = np.asarray(table.energies, dtype=float)
    if E.size < 2:
        raise GridTooCoarse("need at least two grid points")
    steps = np.diff(E)
    if np.any(steps <= 0):
        raise ValueError("grid must be strictly increasing")
    if steps.max() > max_step:
        raise GridTooCoarse(f"grid step {steps.max():.3g} exceeds {max_step:.3g}")
    inc = np.diff(table.mean)
    hits = np.flatnonzero(inc >= threshold)
    return [Jump(float(0.5 * (E[k] + E[k + 1])), float(inc[k])) for k in hits]


def percolation_ids(
    p: float,
    scales: Sequence[int],
    trials: int,
    grid,
    seed: int,
    d: int = 2,
    threshold: float = 0.01,
    workers: int | None = 1,
    keep_samples: bool = False,
    policy: NumericPolicy = DEFAULT,
) -> tuple[dict[int, EnsembleTable], dict[int, list[Jump]]]:
    """IDS of the graph Laplacian on boundary-connected percolation clusters,
    normalised by the full box site count."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    grid = np.asarray(grid, dtype=float)
    tables, jumps = {}, {}
    for l in scales:
        box = BoxSpec.cube(d, l, bc=BC.NEUMANN)

        def one(t, box=box):
            act = percolation_cluster(box, p, seed, t)
            if not act.retained.any():
                log.info("percolation: empty retained set (l=%d, trial=%d)", box.sides[0], t)
                return np.zeros(grid.size)
            H = build_cluster_hamiltonian(box, act.retained)
            return grid_counts(H, grid, policy) / box.volume

        S = np.array(ordered_map(one, range(trials), workers))
        meta = {"scale": int(l), "p": p, "dimension": d, "model": "site_percolation"}
        tab = EnsembleTable.from_samples(grid, S, seed, f"percolation-p{p}-d{d}", meta, keep_samples)
        tables[int(l)] = tab
        jumps[int(l)] = detect_jumps(tab, threshold, max_step=np.inf)
    return tables, jumps
