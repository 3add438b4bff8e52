"""Seedable coupling fields, single-site profiles and percolation samples.

Random numbers come from the counter-based Philox generator keyed by
``(master_seed, trial_index)``. Site ``k`` always consumes the ``k``-th
64-bit word of the stream and every law is sampled by inverse transform, so
a given ``(seed, trial, site)`` maps to the same value on every platform and
independently of how trials are scheduled.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import BC, BoxSpec

STREAM_COUPLINGS = 0
STREAM_PERCOLATION = 1
STREAM_AUX = 2

_MASK64 = (1 << 64) - 1


def philox(master_seed: int, trial_index: int, stream: int = STREAM_COUPLINGS) -> np.random.Generator:
    """Generator for one ``(seed, trial, stream)`` triple."""
    if master_seed < 0 or trial_index < 0:
        raise ValueError("seed and trial index must be non-negative")
    key = np.array([master_seed & _MASK64, trial_index & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def site_uniforms(master_seed: int, trial_index: int, n: int, stream: int = STREAM_COUPLINGS) -> np.ndarray:
    return philox(master_seed, trial_index, stream).random(n)


# ---------------------------------------------------------------------------
# single-site laws


class Distribution:
    """Base class of the coupling laws.

    Laws other than :class:`Laplace` are represented as a finite list of atoms
    plus a piecewise-linear density, which keeps window masses, the Hölder
    modulus and inverse CDFs exact.
    """

    kind: str = ""

    def atoms(self) -> list[tuple[float, float]]:
        return []

    def pieces(self) -> list[tuple[float, float, float, float]]:
        """Linear density pieces ``(x0, x1, f0, f1)`` with disjoint supports."""
        return []

    # derived quantities -----------------------------------------------------

    def support(self) -> tuple[float, float]:
        xs = [a for a, _ in self.atoms()] + [p for pc in self.pieces() for p in pc[:2]]
        return min(xs), max(xs)

    def total_mass(self) -> float:
        return sum(m for _, m in self.atoms()) + sum(0.5 * (x1 - x0) * (f0 + f1) for x0, x1, f0, f1 in self.pieces())

    def sup_density(self) -> float:
        if any(m > 0 for _, m in self.atoms()):
            return math.inf
        return max((max(f0, f1) for *_, f0, f1 in self.pieces()), default=0.0)

    def total_variation(self) -> float:
        """Total variation of the density (jumps at piece ends included)."""
        if self.atoms():
            return math.inf
        pts: dict[float, float] = {}
        var = 0.0
        for x0, x1, f0, f1 in sorted(self.pieces()):
            var += abs(f1 - f0)
            pts[x0] = pts.get(x0, 0.0) - f0
            pts[x1] = pts.get(x1, 0.0) + f1
        # a jump at a knot is |left limit - right limit|
        return var + sum(abs(v) for v in pts.values())

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for x0, x1, f0, f1 in self.pieces():
            inside = (x >= x0) & (x < x1)
            out = np.where(inside, f0 + (f1 - f0) * (x - x0) / (x1 - x0), out)
        return out

    def mass(self, a: float, b: float) -> float:
        """``mu([a, b])`` for the closed interval."""
        if b < a:
            return 0.0
        total = sum(m for x, m in self.atoms() if a <= x <= b)
        for x0, x1, f0, f1 in self.pieces():
            lo, hi = max(a, x0), min(b, x1)
            if hi > lo:
                slope = (f1 - f0) / (x1 - x0)
                flo = f0 + slope * (lo - x0)
                fhi = f0 + slope * (hi - x0)
                total += 0.5 * (hi - lo) * (flo + fhi)
        return total

    def cdf(self, x: float) -> float:
        lo, _ = self.support()
        return self.mass(lo - 1.0, x)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        """Generalised inverse ``inf{x : F(x) >= u}``, vectorised."""
        u = np.asarray(u, dtype=float)
        segs: list[tuple[str, tuple, float]] = []
        for x, m in self.atoms():
            segs.append(("atom", (x,), m))
        for pc in self.pieces():
            x0, x1, f0, f1 = pc
            segs.append(("lin", pc, 0.5 * (x1 - x0) * (f0 + f1)))
        segs.sort(key=lambda s: s[1][0])
        out = np.full(u.shape, segs[-1][1][1] if segs[-1][0] == "lin" else segs[-1][1][0])
        done = np.zeros(u.shape, dtype=bool)
        acc = 0.0
        for kind, par, m in segs:
            if m <= 0:
                continue
            sel = ~done & (u <= acc + m)
            if np.any(sel):
                if kind == "atom":
                    out[sel] = par[0]
                else:
                    x0, x1, f0, f1 = par
                    r = u[sel] - acc
                    w = x1 - x0
                    slope = (f1 - f0) / w
                    if abs(slope) < 1e-300:
                        t = r / f0
                    else:
                        # f0 t + slope t^2 / 2 = r, stable root
                        disc = np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * r, 0.0))
                        den = f0 + disc
                        t = np.where(den > 0, 2.0 * r / np.where(den > 0, den, 1.0), 0.0)
                    out[sel] = np.clip(x0 + t, x0, x1)
                done |= sel
            acc += m
        return out

    def mean(self) -> float:
        s = sum(x * m for x, m in self.atoms())
        for x0, x1, f0, f1 in self.pieces():
            # integral of x (f0 + slope (x - x0)) over [x0, x1]
            w = x1 - x0
            s += f0 * (x1 ** 2 - x0 ** 2) / 2 + (f1 - f0) / w * (w ** 3 / 3 + x0 * w ** 2 / 2)
        return s

    def is_degenerate(self) -> bool:
        lo, hi = self.support()
        return lo == hi

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(Distribution):
    a: float = 0.0
    b: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.b < self.a:
            raise ValueError(f"invalid uniform interval [{self.a}, {self.b}]")

    def atoms(self):
        return [(self.a, 1.0)] if self.a == self.b else []

    def pieces(self):
        if self.a == self.b:
            return []
        f = 1.0 / (self.b - self.a)
        return [(self.a, self.b, f, f)]

    def ppf(self, u):
        return self.a + (self.b - self.a) * np.asarray(u, dtype=float)

    def mean(self):
        return 0.5 * (self.a + self.b)

    def to_dict(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Bernoulli(Distribution):
    """Value ``q_a`` with probability ``p``, ``q_b`` otherwise."""

    p: float = 0.5
    q_a: float = 1.0
    q_b: float = 0.0
    kind = "bernoulli"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Bernoulli p must lie in [0, 1], got {self.p}")

    def atoms(self):
        if self.q_a == self.q_b:
            return [(self.q_a, 1.0)]
        return [(self.q_a, self.p), (self.q_b, 1.0 - self.p)]

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where(u < self.p, self.q_a, self.q_b)

    def is_degenerate(self):
        return self.q_a == self.q_b or self.p in (0.0, 1.0)

    def to_dict(self):
        return {"kind": "bernoulli", "p": self.p, "q_a": self.q_a, "q_b": self.q_b}


@dataclass(frozen=True)
class PiecewiseDensity(Distribution):
    """Density given by a knot table.

    ``kind == "linear"``: ``values[i]`` is the density at ``knots[i]`` and the
    density is linear in between (trapezoids). ``kind == "step"``:
    ``values[i]`` is the constant density on ``[knots[i], knots[i+1])``.
    """

    knots: tuple[float, ...] = (0.0, 1.0)
    values: tuple[float, ...] = (1.0, 1.0)
    shape: str = "linear"
    kind = "piecewise"

    def __post_init__(self):
        k = tuple(float(x) for x in self.knots)
        v = tuple(float(x) for x in self.values)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        if any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("knots must be strictly increasing")
        want = len(k) if self.shape == "linear" else len(k) - 1
        if self.shape not in ("linear", "step") or len(v) != want:
            raise ValueError("values do not match the knot table")
        if any(x < 0 for x in v):
            raise ValueError("density values must be non-negative")
        if abs(self.total_mass() - 1.0) > 1e-12:
            raise ValueError(f"density integrates to {self.total_mass()!r}, not 1")

    @classmethod
    def trapezoid(cls, a: float, b: float, c: float, d: float) -> "PiecewiseDensity":
        """Trapezoid rising on [a, b], flat on [b, c], falling on [c, d]."""
        h = 2.0 / ((d - a) + (c - b))
        return cls((a, b, c, d), (0.0, h, h, 0.0), "linear")

    def pieces(self):
        k, v = self.knots, self.values
        if self.shape == "linear":
            return [(k[i], k[i + 1], v[i], v[i + 1]) for i in range(len(k) - 1)]
        return [(k[i], k[i + 1], v[i], v[i]) for i in range(len(k) - 1)]

    def to_dict(self):
        return {"kind": "piecewise", "knots": list(self.knots), "values": list(self.values), "shape": self.shape}


@dataclass(frozen=True)
class Laplace(Distribution):
    """Density ``exp(-|x - loc| / scale) / (2 scale)``."""

    scale: float = 1.0
    loc: float = 0.0
    kind = "laplace"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"Laplace scale must be positive, got {self.scale}")

    def support(self):
        return -math.inf, math.inf

    def total_mass(self):
        return 1.0

    def sup_density(self):
        return 0.5 / self.scale

    def total_variation(self):
        return 1.0 / self.scale

    def density(self, x):
        return np.exp(-np.abs(np.asarray(x, dtype=float) - self.loc) / self.scale) / (2 * self.scale)

    def cdf(self, x):
        z = (x - self.loc) / self.scale
        return 0.5 * math.exp(z) if z < 0 else 1.0 - 0.5 * math.exp(-z)

    def mass(self, a, b):
        return 0.0 if b < a else self.cdf(b) - self.cdf(a)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(u < 0.5, self.loc + self.scale * np.log(2 * u),
                            self.loc - self.scale * np.log(2 * (1 - u)))

    def mean(self):
        return self.loc

    def is_degenerate(self):
        return False

    def to_dict(self):
        return {"kind": "laplace", "scale": self.scale, "loc": self.loc}


@dataclass(frozen=True)
class LocallyContinuous(Distribution):
    """Point mass ``atom_mass`` at ``atom <= omega_c`` plus a uniform density
    of total mass ``1 - atom_mass`` on ``[omega_c, omega_plus]``."""

    atom: float = 0.0
    atom_mass: float = 0.5
    omega_c: float = 0.5
    omega_plus: float = 1.0
    kind = "locally_continuous"

    def __post_init__(self):
        if not 0.0 <= self.atom_mass < 1.0:
            raise ValueError("atom mass must lie in [0, 1)")
        if not self.atom <= self.omega_c < self.omega_plus:
            raise ValueError("need atom <= omega_c < omega_plus")

    def atoms(self):
        return [(self.atom, self.atom_mass)] if self.atom_mass > 0 else []

    def pieces(self):
        f = (1.0 - self.atom_mass) / (self.omega_plus - self.omega_c)
        return [(self.omega_c, self.omega_plus, f, f)]

    def to_dict(self):
        return {"kind": "locally_continuous", "atom": self.atom, "atom_mass": self.atom_mass,
                "omega_c": self.omega_c, "omega_plus": self.omega_plus}


_KINDS = {
    "uniform": lambda d: Uniform(float(d["a"]), float(d["b"])),
    "bernoulli": lambda d: Bernoulli(float(d["p"]), float(d.get("q_a", 1.0)), float(d.get("q_b", 0.0))),
    "piecewise": lambda d: PiecewiseDensity(tuple(d["knots"]), tuple(d["values"]), d.get("shape", "linear")),
    "laplace": lambda d: Laplace(float(d["scale"]), float(d.get("loc", 0.0))),
    "locally_continuous": lambda d: LocallyContinuous(float(d["atom"]), float(d["atom_mass"]),
                                                      float(d["omega_c"]), float(d["omega_plus"])),
}


def distribution_from_dict(d: dict) -> Distribution:
    try:
        make = _KINDS[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown distribution kind {d.get('kind')!r}") from None
    return make(d)


# ---------------------------------------------------------------------------
# masks, specs, profiles


@dataclass(frozen=True)
class Mask:
    """Which sites carry a coupling constant.

    ``kind``: ``"full"``; ``"sublattice"`` (sites with every coordinate a
    multiple of ``step``); ``"surface"`` (the layer ``x_axis == 0``);
    ``"sites"`` (explicit flat indices).
    """

    kind: str = "full"
    step: int = 2
    axis: int = 0
    sites: tuple[int, ...] = ()

    def resolve(self, box: BoxSpec) -> np.ndarray | None:
        if self.kind == "full":
            return None
        c = box.coords()
        if self.kind == "sublattice":
            return np.all(c % self.step == 0, axis=1)
        if self.kind == "surface":
            return c[:, self.axis] == 0
        if self.kind == "sites":
            m = np.zeros(box.n_sites, dtype=bool)
            m[list(self.sites)] = True
            return m
        raise ValueError(f"unknown mask kind {self.kind!r}")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "sublattice":
            d["step"] = self.step
        elif self.kind == "surface":
            d["axis"] = self.axis
        elif self.kind == "sites":
            d["sites"] = list(self.sites)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Mask":
        return cls(d.get("kind", "full"), int(d.get("step", 2)), int(d.get("axis", 0)), tuple(d.get("sites", ())))


@dataclass(frozen=True)
class DisorderSpec:
    distribution: Distribution
    mask: Mask = field(default_factory=Mask)

    @property
    def iid(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {"distribution": self.distribution.to_dict(), "mask": self.mask.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DisorderSpec":
        return cls(distribution_from_dict(d["distribution"]), Mask.from_dict(d.get("mask", {})))


@dataclass(frozen=True)
class SingleSiteProfile:
    """``u(x) = sum_{g in offsets} alpha_g w(x - g)`` with a finite base stencil ``w``.

    ``decay`` optionally records ``(C, m)`` with ``|u(x)| <= C (1+|x|^2)^(-m/2)``.
    """

    offsets: tuple[tuple[int, ...], ...]
    alpha: tuple[float, ...]
    base: tuple[tuple[tuple[int, ...], float], ...] | None = None
    decay: tuple[float, float] | None = None

    def __post_init__(self):
        offs = tuple(tuple(int(c) for c in o) for o in self.offsets)
        if not offs:
            raise ValueError("profile needs at least one offset")
        if len(self.alpha) != len(offs):
            raise ValueError("one coefficient per offset required")
        if len({len(o) for o in offs}) != 1:
            raise ValueError("offsets of mixed dimension")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.base is not None:
            object.__setattr__(self, "base", tuple((tuple(int(c) for c in o), float(w)) for o, w in self.base))

    @classmethod
    def site(cls, d: int, value: float = 1.0) -> "SingleSiteProfile":
        return cls(((0,) * d,), (value,))

    @classmethod
    def from_stencil(cls, stencil: dict) -> "SingleSiteProfile":
        items = sorted(stencil.items())
        return cls(tuple(o for o, _ in items), tuple(v for _, v in items))

    @classmethod
    def power_law(cls, d: int, m: float, C: float = 1.0, radius: int = 8) -> "SingleSiteProfile":
        """``u(x) = C (1+|x|^2)^(-m/2)`` truncated to ``|x|_inf <= radius``."""
        rng = range(-radius, radius + 1)
        offs = [tuple(o) for o in np.array(np.meshgrid(*([list(rng)] * d), indexing="ij")).reshape(d, -1).T]
        vals = [C * (1.0 + float(np.dot(o, o))) ** (-m / 2) for o in offs]
        return cls(tuple(offs), tuple(vals), decay=(C, m))

    @property
    def dimension(self) -> int:
        return len(self.offsets[0])

    @property
    def alpha_zero(self) -> float:
        zero = (0,) * self.dimension
        return sum(a for o, a in zip(self.offsets, self.alpha) if o == zero)

    @property
    def alpha_star(self) -> float:
        zero = (0,) * self.dimension
        return sum(abs(a) for o, a in zip(self.offsets, self.alpha) if o != zero)

    def alpha_map(self) -> dict[tuple[int, ...], float]:
        out: dict[tuple[int, ...], float] = {}
        for o, a in zip(self.offsets, self.alpha):
            out[o] = out.get(o, 0.0) + a
        return out

    def stencil(self) -> dict[tuple[int, ...], float]:
        base = self.base if self.base is not None else (((0,) * self.dimension, 1.0),)
        out: dict[tuple[int, ...], float] = {}
        for g, a in zip(self.offsets, self.alpha):
            for b, w in base:
                key = tuple(x + y for x, y in zip(g, b))
                out[key] = out.get(key, 0.0) + a * w
        return {k: v for k, v in out.items() if v != 0.0}

    def is_nonnegative(self) -> bool:
        return all(v >= 0 for v in self.stencil().values())

    def diameter(self) -> int:
        s = np.array(list(self.stencil().keys()))
        return int(np.max(np.abs(s))) if s.size else 0

    def to_dict(self) -> dict:
        d: dict = {"offsets": [list(o) for o in self.offsets], "alpha": list(self.alpha)}
        if self.base is not None:
            d["base"] = [[list(o), w] for o, w in self.base]
        if self.decay is not None:
            d["decay"] = list(self.decay)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SingleSiteProfile":
        base = tuple((tuple(o), float(w)) for o, w in d["base"]) if d.get("base") else None
        decay = tuple(d["decay"]) if d.get("decay") else None
        return cls(tuple(tuple(o) for o in d["offsets"]), tuple(d["alpha"]), base, decay)


@dataclass(frozen=True, eq=False)
class CouplingField:
    values: np.ndarray
    mask: np.ndarray | None
    master_seed: int
    trial_index: int

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def sample_couplings(spec: DisorderSpec, box: BoxSpec, master_seed: int, trial_index: int) -> CouplingField:
    """i.i.d. couplings on the box sites, zero outside the mask."""
    u = site_uniforms(master_seed, trial_index, box.n_sites, STREAM_COUPLINGS)
    w = np.asarray(spec.distribution.ppf(u), dtype=float)
    mask = spec.mask.resolve(box)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    return CouplingField(w, mask, master_seed, trial_index)


# ---------------------------------------------------------------------------
# Hölder modulus


def holder_modulus(dist: Distribution | DisorderSpec, eps: float) -> float:
    """``s(eps) = sup{ mu([a, b]) : b - a <= eps }``, exact for table laws."""
    if isinstance(dist, DisorderSpec):
        dist = dist.distribution
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if isinstance(dist, Laplace):
        return dist.mass(dist.loc - eps / 2, dist.loc + eps / 2)
    if isinstance(dist, Uniform) and dist.a < dist.b:
        return min(eps / (dist.b - dist.a), 1.0)
    if not isinstance(dist, (Bernoulli, PiecewiseDensity, LocallyContinuous, Uniform)):
        raise TypeError(f"unsupported distribution {type(dist).__name__}")
    pts = sorted({x for x, _ in dist.atoms()} | {x for pc in dist.pieces() for x in pc[:2]})
    cands = set(pts) | {x - eps for x in pts}
    # interior stationary points: f(a + eps) = f(a) with f linear between knots
    grid = sorted(cands)
    for lo, hi in zip(grid, grid[1:]):
        g_lo = _dens_right(dist, lo + eps) - _dens_right(dist, lo)
        g_hi = _dens_left(dist, hi + eps) - _dens_left(dist, hi)
        if g_lo * g_hi < 0:
            cands.add(lo + (hi - lo) * g_lo / (g_lo - g_hi))
    return max(dist.mass(a, a + eps) for a in cands)


def _dens_right(dist: Distribution, x: float) -> float:
    for x0, x1, f0, f1 in dist.pieces():
        if x0 <= x < x1:
            return f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    return 0.0


def _dens_left(dist: Distribution, x: float) -> float:
    for x0, x1, f0, f1 in dist.pieces():
        if x0 < x <= x1:
            return f0 + (f1 - f0) * (x - x0) / (x1 - x0)
    return 0.0


# ---------------------------------------------------------------------------
# percolation


class UnionFind:
    """Disjoint sets over ``0..n-1`` with union by size and path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


@dataclass(frozen=True, eq=False)
class ActiveSiteSet:
    box: BoxSpec
    active: np.ndarray
    retained: np.ndarray
    master_seed: int = 0
    trial_index: int = 0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.retained)

    @property
    def fraction(self) -> float:
        return float(self.retained.mean())

    def certify(self) -> bool:
        """Breadth-first check that every retained site reaches the boundary
        through active sites, and that no boundary-connected active site is
        missing."""
        return bool(np.array_equal(flood_fill_boundary(self.box, self.active), self.retained))


def _open_edges(box: BoxSpec, active: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    from .lattice import lattice_edges

    i, j = lattice_edges(box.with_bc(BC.NEUMANN))
    ok = active[i] & active[j]
    return i[ok], j[ok]


def percolation_cluster(box: BoxSpec, p: float, master_seed: int, trial_index: int) -> ActiveSiteSet:
    """Site percolation sample; keep active clusters touching the box boundary."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    u = site_uniforms(master_seed, trial_index, box.n_sites, STREAM_PERCOLATION)
    active = u < p
    n = box.n_sites
    uf = UnionFind(n + 1)  # node n is the boundary
    ei, ej = _open_edges(box, active)
    for a, b in zip(ei.tolist(), ej.tolist()):
        uf.union(a, b)
    for s in np.flatnonzero(active & box.boundary_mask()).tolist():
        uf.union(s, n)
    root = uf.find(n)
    retained = np.fromiter((active[s] and uf.find(s) == root for s in range(n)), dtype=bool, count=n)
    return ActiveSiteSet(box, active, retained, master_seed, trial_index)


def flood_fill_boundary(box: BoxSpec, active: np.ndarray) -> np.ndarray:
    """Breadth-first flood fill from the active boundary sites."""
    active = np.asarray(active, dtype=bool)
    sides = box.sides
    strides = box.strides
    coords = box.coords()
    seen = np.zeros(box.n_sites, dtype=bool)
    queue = deque(np.flatnonzero(active & box.boundary_mask()).tolist())
    for s in queue:
        seen[s] = True
    while queue:
        s = queue.popleft()
        c = coords[s]
        for a in range(len(sides)):
            for step in (-1, 1):
                x = c[a] + step
                if 0 <= x < sides[a]:
                    t = s + step * strides[a]
                    if active[t] and not seen[t]:
                        seen[t] = True
                        queue.append(t)
    return seen
