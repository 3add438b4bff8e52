"""Centralised numerical tolerances.

Every tolerance used by the engines and audits is read from a
:class:`NumericPolicy` instance so tests can tighten or loosen them in one
place. The module-level ``DEFAULT`` is what all functions use when no policy
is passed explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class NumericPolicy:
    # eigenvalue clustering threshold, relative to ||H||
    cluster_rtol: float = 1e-9
    # dense eigensolver size cap
    dense_cap: int = 4096
    # residual tolerance for returned eigenpairs, relative to ||H||
    eig_residual_rtol: float = 1e-10
    # orthonormality tolerance of eigenvector matrices
    orthonormal_tol: float = 1e-10
    # relative size of the pivot perturbation in inertia counts
    pivot_rtol: float = EPS
    # perturbation retries before count_below gives up
    pivot_retries: int = 4
    # inverse iteration
    inverse_iter_max: int = 50
    # rank decisions, relative to the operator norm
    rank_rtol: float = 1e-10
    # slack allowed in exact-arithmetic inequalities evaluated in floating point
    audit_rtol: float = 1e-10
    audit_atol: float = 1e-12
    # quadrature convergence target for spectral averaging
    quad_tol: float = 1e-8
    # residual target for shifted solves
    solve_rtol: float = 1e-10

    def with_overrides(self, **kw) -> "NumericPolicy":
        unknown = set(kw) - set(self.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown policy fields: {sorted(unknown)}")
        return replace(self, **kw)

    def leq(self, lhs: float, rhs: float, scale: float = 1.0) -> bool:
        """``lhs <= rhs`` up to the audit slack."""
        return lhs <= rhs + self.audit_rtol * max(abs(rhs), abs(scale)) + self.audit_atol


DEFAULT = NumericPolicy()
