"""Alloy-type random operators ``-Delta + V_per + sum_k omega_k u(. - k)``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .disorder import DisorderSpec, Mask, SingleSiteProfile, Uniform, sample_couplings
from .lattice import (
    BC,
    BoxSpec,
    HamiltonianMatrix,
    PotentialField,
    assemble_alloy_potential,
    build_hamiltonian,
    periodic_background,
)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AlloyModel:
    disorder: DisorderSpec
    dimension: int = 1
    profile: SingleSiteProfile | None = None
    background: tuple | None = None
    spacing: float = 1.0
    bc: BC = BC.DIRICHLET

    def __post_init__(self):
        object.__setattr__(self, "bc", BC(self.bc))
        if self.profile is None:
            object.__setattr__(self, "profile", SingleSiteProfile.site(self.dimension))
        if self.profile.dimension != self.dimension:
            raise ValueError("profile dimension does not match the model")

    @classmethod
    def anderson(cls, d: int = 1, a: float = 0.0, b: float = 1.0, bc: BC | str = BC.DIRICHLET) -> "AlloyModel":
        return cls(DisorderSpec(Uniform(a, b)), d, bc=BC(bc))

    @classmethod
    def free(cls, d: int = 1, bc: BC | str = BC.DIRICHLET) -> "AlloyModel":
        return cls(DisorderSpec(Uniform(0.0, 0.0)), d, bc=BC(bc))

    @property
    def deterministic(self) -> bool:
        return self.disorder.distribution.is_degenerate()

    def box(self, size: int | Sequence[int], bc: BC | str | None = None) -> BoxSpec:
        sides = (size,) * self.dimension if np.isscalar(size) else tuple(size)
        return BoxSpec(sides, self.spacing, BC(bc) if bc is not None else self.bc)

    def potential(self, box: BoxSpec, master_seed: int, trial_index: int) -> PotentialField:
        w = sample_couplings(self.disorder, box, master_seed, trial_index)
        V = assemble_alloy_potential(w, self.profile, box)
        if self.background is not None:
            V = V + periodic_background(np.asarray(self.background, dtype=float), box)
        return V

    def hamiltonian(self, box: BoxSpec, master_seed: int, trial_index: int) -> HamiltonianMatrix:
        return build_hamiltonian(box, self.potential(box, master_seed, trial_index))

    def with_bc(self, bc: BC | str) -> "AlloyModel":
        return AlloyModel(self.disorder, self.dimension, self.profile, self.background, self.spacing, BC(bc))

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "disorder": self.disorder.to_dict(),
            "profile": self.profile.to_dict(),
            "background": None if self.background is None else np.asarray(self.background).tolist(),
            "spacing": self.spacing,
            "bc": self.bc.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlloyModel":
        dim = int(d.get("dimension", 1))
        prof = d.get("profile")
        bg = d.get("background")
        return cls(
            DisorderSpec.from_dict(d["disorder"]),
            dim,
            SingleSiteProfile.from_dict(prof) if prof else None,
            tuple(np.asarray(bg, dtype=float).tolist()) if bg is not None else None,
            float(d.get("spacing", 1.0)),
            BC(d.get("bc", "dirichlet")),
        )

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())
