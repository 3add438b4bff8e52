"""Finite-volume lattice Schrödinger operators.

Sites of a box with ``sides = (n_1, ..., n_d)`` are enumerated in row-major
(C) order: the last axis varies fastest, so site ``x`` has flat index
``sum_a x_a * stride_a`` with ``stride_a = prod(sides[a+1:])``.

The kinetic part is the positive semidefinite graph Laplacian

    (H psi)(n) = h^-2 * sum_{m ~ n} (psi(n) - psi(m)) + V(n) psi(n)

with the boundary conditions

* Dirichlet: exterior sites are clamped to zero, so every site keeps the
  full degree ``2d`` on the diagonal;
* Dirichlet (bracketing): every edge leaving the box contributes
  ``2 psi(n)^2``, the smallest weight for which cutting a box into pieces
  can only raise eigenvalues, since ``(a - b)^2 <= 2a^2 + 2b^2``;
* Neumann: edges leaving the box are dropped (induced-subgraph Laplacian);
* Periodic: edges wrap around.

Matrices are kept in LAPACK-style lower banded storage,
``band[i - j, j] == H[i, j]`` for ``0 <= i - j <= bandwidth``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class BC(str, enum.Enum):
    DIRICHLET = "dirichlet"
    DIRICHLET2 = "dirichlet2"
    NEUMANN = "neumann"
    PERIODIC = "periodic"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BoxSpec:
    """Geometry of a finite box in Z^d (or h Z^d)."""

    sides: tuple[int, ...]
    spacing: float = 1.0
    bc: BC = BC.DIRICHLET

    def __post_init__(self):
        sides = tuple(int(s) for s in self.sides)
        if not 1 <= len(sides) <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {len(sides)}")
        if any(s <= 0 for s in sides):
            raise ValueError(f"sides must be positive, got {sides}")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "bc", BC(self.bc))

    @classmethod
    def cube(cls, d: int, l: int, spacing: float = 1.0, bc: BC | str = BC.DIRICHLET) -> "BoxSpec":
        return cls((l,) * d, spacing, BC(bc))

    @property
    def dimension(self) -> int:
        return len(self.sides)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.sides))

    @property
    def volume(self) -> float:
        """Physical volume ``n_sites * h^d`` used to normalise counting functions."""
        return self.n_sites * self.spacing ** self.dimension

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(int(np.prod(self.sides[a + 1:])) for a in range(self.dimension))

    def with_bc(self, bc: BC | str) -> "BoxSpec":
        return BoxSpec(self.sides, self.spacing, BC(bc))

    def with_sides(self, sides: Sequence[int]) -> "BoxSpec":
        return BoxSpec(tuple(sides), self.spacing, self.bc)

    def coords(self) -> np.ndarray:
        """Integer coordinates of all sites, shape ``(n_sites, d)``."""
        return np.stack(np.unravel_index(np.arange(self.n_sites), self.sides), axis=1)

    def boundary_mask(self) -> np.ndarray:
        """Sites with at least one lattice neighbour outside the box."""
        c = self.coords()
        mask = np.zeros(self.n_sites, dtype=bool)
        for a, s in enumerate(self.sides):
            mask |= (c[:, a] == 0) | (c[:, a] == s - 1)
        return mask

    def to_dict(self) -> dict:
        return {"sides": list(self.sides), "spacing": self.spacing, "bc": self.bc.value}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxSpec":
        return cls(tuple(d["sides"]), float(d.get("spacing", 1.0)), BC(d.get("bc", "dirichlet")))


@dataclass(frozen=True)
class PotentialField:
    """Real potential value per site, flat in row-major order."""

    box: BoxSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.box.n_sites:
            raise ValueError(f"potential has {v.size} values, box has {self.box.n_sites} sites")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential values must be finite")
        object.__setattr__(self, "values", _frozen(v.copy()))

    @classmethod
    def zeros(cls, box: BoxSpec) -> "PotentialField":
        return cls(box, np.zeros(box.n_sites))

    def __add__(self, other: "PotentialField") -> "PotentialField":
        if other.box.sides != self.box.sides:
            raise ValueError("potentials live on different boxes")
        return PotentialField(self.box, self.values + other.values)

    def grid(self) -> np.ndarray:
        return self.values.reshape(self.box.sides)

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "order": "C", "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialField":
        if d.get("order", "C") != "C":
            raise ValueError("only row-major (C) site order is supported")
        return cls(BoxSpec.from_dict(d["box"]), np.asarray(d["values"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "PotentialField":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Real symmetric banded matrix with a recorded spectral lower bound.

    ``sites`` lists the retained box sites when the operator lives on a
    subset of the box (percolation clusters); ``None`` means all sites.
    """

    box: BoxSpec | None
    band: np.ndarray
    lower_bound: float
    sites: np.ndarray | None = field(default=None)

    def __post_init__(self):
        band = np.asarray(self.band, dtype=float)
        if band.ndim != 2 or band.shape[0] < 1:
            raise ValueError("band storage must be 2-d with at least the diagonal row")
        object.__setattr__(self, "band", _frozen(band))
        if self.sites is not None:
            object.__setattr__(self, "sites", _frozen(np.asarray(self.sites, dtype=np.int64)))
        object.__setattr__(self, "lower_bound", float(self.lower_bound))

    @property
    def n(self) -> int:
        return self.band.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def bandwidth(self) -> int:
        return self.band.shape[0] - 1

    @property
    def diagonal(self) -> np.ndarray:
        return self.band[0]

    def tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        if self.bandwidth > 1:
            raise ValueError(f"matrix has bandwidth {self.bandwidth}, not tridiagonal")
        off = self.band[1, :-1] if self.bandwidth == 1 else np.zeros(max(self.n - 1, 0))
        return self.band[0].copy(), off.copy()

    def dense(self) -> np.ndarray:
        n, b = self.n, self.bandwidth
        M = np.zeros((n, n))
        for k in range(b + 1):
            idx = np.arange(n - k)
            M[idx + k, idx] = self.band[k, : n - k]
            M[idx, idx + k] = self.band[k, : n - k]
        return M

    def norm_bound(self) -> float:
        """Row-sum (infinity) norm, an upper bound on the spectral norm."""
        n, b = self.n, self.bandwidth
        rows = np.abs(self.band[0]).copy()
        for k in range(1, b + 1):
            a = np.abs(self.band[k, : n - k])
            rows[k:] += a
            rows[:-k] += a
        return float(rows.max()) if n else 0.0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        n, b = self.n, self.bandwidth
        y = self.band[0] * x
        for k in range(1, b + 1):
            a = self.band[k, : n - k]
            y[k:] += a * x[:-k]
            y[:-k] += a * x[k:]
        return y

    def shifted(self, diag: np.ndarray | float) -> "HamiltonianMatrix":
        """Return ``H + diag(diag)`` (a scalar shifts the whole diagonal)."""
        band = self.band.copy()
        d = np.broadcast_to(np.asarray(diag, dtype=float), (self.n,))
        band[0] += d
        return HamiltonianMatrix(self.box, band, self.lower_bound + float(np.min(d)) if self.n else 0.0, self.sites)

    @classmethod
    def from_dense(cls, M: np.ndarray, box: BoxSpec | None = None, lower_bound: float | None = None) -> "HamiltonianMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("matrix must be square")
        if not np.array_equal(M, M.T):
            raise ValueError("matrix must be exactly symmetric")
        n = M.shape[0]
        i, j = np.nonzero(np.tril(M, -1))
        b = int((i - j).max()) if i.size else 0
        band = np.zeros((b + 1, n))
        for k in range(b + 1):
            idx = np.arange(n - k)
            band[k, : n - k] = M[idx + k, idx]
        if lower_bound is None:
            # Gershgorin
            lower_bound = float(np.min(np.diag(M) - (np.abs(M).sum(axis=1) - np.abs(np.diag(M))))) if n else 0.0
        return cls(box, band, lower_bound)

    def to_dict(self) -> dict:
        return {
            "box": self.box.to_dict() if self.box is not None else None,
            "layout": "lower-band",
            "bandwidth": self.bandwidth,
            "band": self.band.tolist(),
            "lower_bound": self.lower_bound,
            "sites": self.sites.tolist() if self.sites is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HamiltonianMatrix":
        box = BoxSpec.from_dict(d["box"]) if d.get("box") else None
        sites = np.asarray(d["sites"]) if d.get("sites") is not None else None
        return cls(box, np.asarray(d["band"], dtype=float), float(d["lower_bound"]), sites)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "HamiltonianMatrix":
        return cls.from_dict(json.loads(s))


def lattice_edges(box: BoxSpec) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour pairs ``(i, j)`` inside the box, including wrap
    edges for periodic boundary conditions. Self-loops are omitted; a side
    of length 2 with periodic wrap yields the same pair twice."""
    idx = np.arange(box.n_sites).reshape(box.sides)
    src, dst = [], []
    for a, s in enumerate(box.sides):
        if s > 1:
            lo = np.take(idx, np.arange(s - 1), axis=a).reshape(-1)
            hi = np.take(idx, np.arange(1, s), axis=a).reshape(-1)
            src.append(lo)
            dst.append(hi)
            if box.bc is BC.PERIODIC:
                src.append(np.take(idx, [s - 1], axis=a).reshape(-1))
                dst.append(np.take(idx, [0], axis=a).reshape(-1))
    if not src:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(src), np.concatenate(dst)


def _assemble(n: int, diag: np.ndarray, i: np.ndarray, j: np.ndarray, w: float) -> np.ndarray:
    lo, hi = np.maximum(i, j), np.minimum(i, j)
    off = lo - hi
    b = int(off.max()) if off.size else 0
    band = np.zeros((b + 1, n))
    band[0] = diag
    np.add.at(band, (off, hi), -w)
    return band


def build_hamiltonian(box: BoxSpec, V: PotentialField | np.ndarray | None = None) -> HamiltonianMatrix:
    """Assemble ``-Delta_h + V`` on ``box``."""
    if V is None:
        v = np.zeros(box.n_sites)
    elif isinstance(V, PotentialField):
        if V.box.sides != box.sides:
            raise ValueError(f"potential box {V.box.sides} does not match {box.sides}")
        v = V.values
    else:
        v = PotentialField(box, V).values
    w = box.spacing ** -2
    i, j = lattice_edges(box)
    if box.bc in (BC.NEUMANN, BC.DIRICHLET2):
        deg = np.bincount(i, minlength=box.n_sites) + np.bincount(j, minlength=box.n_sites)
        if box.bc is BC.DIRICHLET2:
            deg = deg + 2 * (2 * box.dimension - deg)
    else:
        deg = np.full(box.n_sites, 2 * box.dimension)
        if box.bc is BC.PERIODIC:
            # a side of length one wraps onto itself: psi(n) - psi(n) = 0
            deg = deg - 2 * sum(1 for s in box.sides if s == 1)
    diag = w * deg + v
    band = _assemble(box.n_sites, diag, i, j, w)
    return HamiltonianMatrix(box, band, float(v.min()))


def build_cluster_hamiltonian(box: BoxSpec, keep: np.ndarray, V: np.ndarray | None = None) -> HamiltonianMatrix:
    """Graph Laplacian of the subgraph induced by ``keep`` (plus ``V``).

    This is the finite-difference operator restricted to the retained
    sites, with no contribution from removed neighbours.
    """
    keep = np.asarray(keep, dtype=bool).reshape(-1)
    if keep.size != box.n_sites:
        raise ValueError("mask does not match box")
    sites = np.flatnonzero(keep)
    m = sites.size
    relabel = np.full(box.n_sites, -1, dtype=np.int64)
    relabel[sites] = np.arange(m)
    i, j = lattice_edges(box.with_bc(BC.NEUMANN if box.bc is BC.DIRICHLET else box.bc))
    ok = keep[i] & keep[j]
    i, j = relabel[i[ok]], relabel[j[ok]]
    w = box.spacing ** -2
    deg = np.bincount(i, minlength=m) + np.bincount(j, minlength=m)
    v = np.zeros(m) if V is None else np.asarray(V, dtype=float).reshape(-1)[sites]
    band = _assemble(m, w * deg + v, i, j, w)
    return HamiltonianMatrix(box, band, float(v.min()) if m else 0.0, sites)


def _shift_add(target: np.ndarray, source: np.ndarray, offset: Sequence[int], periodic: bool) -> None:
    """``target[x + offset] += source[x]`` with truncation (or wrap)."""
    if periodic:
        target += np.roll(source, shift=tuple(offset), axis=tuple(range(source.ndim)))
        return
    src, dst = [], []
    for o, s in zip(offset, source.shape):
        if abs(o) >= s:
            return
        if o >= 0:
            src.append(slice(0, s - o))
            dst.append(slice(o, s))
        else:
            src.append(slice(-o, s))
            dst.append(slice(0, s + o))
    target[tuple(dst)] += source[tuple(src)]


def convolve_on_box(box: BoxSpec, weights: np.ndarray, stencil: dict[tuple[int, ...], float]) -> np.ndarray:
    """``out(x) = sum_k weights(k) * stencil(x - k)`` over the box."""
    src = np.asarray(weights, dtype=float).reshape(box.sides)
    out = np.zeros(box.sides)
    periodic = box.bc is BC.PERIODIC
    for off, val in stencil.items():
        if val != 0.0:
            _shift_add(out, val * src, off, periodic)
    return out.reshape(-1)


def assemble_alloy_potential(couplings, profile, box: BoxSpec) -> PotentialField:
    """``V(x) = sum_k omega_k u(x - k)`` with ``u`` the profile stencil.

    Couplings outside the field's mask contribute nothing; contributions that
    land outside the box are truncated (wrapped for periodic boxes).
    """
    stencil = profile.stencil()
    if not stencil:
        raise ValueError("empty single-site profile")
    if len(next(iter(stencil))) != box.dimension:
        raise ValueError("profile dimension does not match box")
    w = np.asarray(couplings.values, dtype=float)
    if w.size != box.n_sites:
        raise ValueError("coupling field does not match box")
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite coupling")
    if couplings.mask is not None:
        w = np.where(couplings.mask, w, 0.0)
    return PotentialField(box, convolve_on_box(box, w, stencil))


def periodic_background(unit_cell_values: Iterable | np.ndarray, box: BoxSpec) -> PotentialField:
    """Tile a unit cell of potential values over the box.

    A cell with fewer axes than the box is broadcast over the leading axes;
    for periodic boxes the cell must divide every side.
    """
    cell = np.asarray(unit_cell_values, dtype=float)
    if cell.size == 0:
        raise ValueError("empty unit cell")
    while cell.ndim < box.dimension:
        cell = cell[np.newaxis]
    if cell.ndim != box.dimension:
        raise ValueError("unit cell has more axes than the box")
    if box.bc is BC.PERIODIC and any(s % c for s, c in zip(box.sides, cell.shape)):
        raise ValueError(f"cell {cell.shape} does not divide periodic box {box.sides}")
    reps = [-(-s // c) for s, c in zip(box.sides, cell.shape)]
    tiled = np.tile(cell, reps)[tuple(slice(0, s) for s in box.sides)]
    return PotentialField(box, tiled.reshape(-1))


def dirichlet_1d_spectrum(n: int) -> np.ndarray:
    k = np.arange(1, n + 1)
    return 2.0 - 2.0 * np.cos(k * np.pi / (n + 1))


def neumann_1d_spectrum(n: int) -> np.ndarray:
    k = np.arange(n)
    return 2.0 - 2.0 * np.cos(k * np.pi / n)


def kronecker_sum_spectrum(*spectra: np.ndarray) -> np.ndarray:
    total = np.zeros(1)
    for s in spectra:
        total = (total[:, None] + np.asarray(s)[None, :]).reshape(-1)
    return np.sort(total)
