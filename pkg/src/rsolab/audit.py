"""Randomised audit of the hard invariants under a wall-clock budget.

Each suite draws its instances from ``numpy.random.default_rng([seed,
suite_id, trial])`` so any failing case is reproduced exactly from the
printed ``{"suite", "seed", "trial"}`` triple by :func:`replay`.

Every check is phrased as ``lhs <= rhs`` with ``lhs >= 0``. Fault injection
replaces ``rhs`` by ``rhs / 2 - 1``, which makes every check of a faulted
suite fail; this exercises the reporting path end to end.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .averaging import QuadratureSpec, projection_average, resolvent_average
from .disorder import Bernoulli, DisorderSpec, PiecewiseDensity, SingleSiteProfile, Uniform
from .ids import bracketing_audit
from .model import AlloyModel
from .policy import DEFAULT, NumericPolicy
from .ssf import interlacing_audit, krein_audit, optssf_audit, random_pair, ssf_bounds_audit
from .toeplitz import inverse_rowsum, toeplitz_matrix

SUITES = ("bracketing", "ssf", "averaging", "toeplitz", "interlacing")

Check = tuple[str, float, float]  # (name, lhs, rhs)


def _rng(seed: int, suite: str, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), SUITES.index(suite), int(trial)])


def random_alloy_instance(rng: np.random.Generator, max_side: int = 16) -> tuple[AlloyModel, tuple[int, ...], int, int]:
    """Random alloy model with ``d <= 2`` and sides ``<= max_side``, plus a
    split ``(axis, at)``."""
    d = int(rng.integers(1, 3))
    sides = tuple(int(s) for s in rng.integers(2, max_side + 1, size=d))
    kind = int(rng.integers(3))
    if kind == 0:
        a = float(rng.uniform(-2, 1))
        dist = Uniform(a, a + float(rng.uniform(0.1, 3)))
    elif kind == 1:
        dist = Bernoulli(float(rng.uniform(0.1, 0.9)), float(rng.uniform(0, 3)), float(rng.uniform(-1, 1)))
    else:
        dist = PiecewiseDensity.trapezoid(0.0, 0.5, 1.0, 2.0)
    r = int(rng.integers(0, 2))
    offs = [tuple(int(x) for x in rng.integers(-r, r + 1, size=d)) for _ in range(int(rng.integers(1, 4)))]
    offs = list(dict.fromkeys(offs))
    alpha = [float(v) for v in rng.uniform(-1, 1, size=len(offs))]
    model = AlloyModel(DisorderSpec(dist), d, SingleSiteProfile(tuple(offs), tuple(alpha)))
    axis = int(rng.integers(d))
    at = int(rng.integers(1, sides[axis]))
    return model, sides, axis, at


# ---------------------------------------------------------------------------
# suites


def _bracketing(rng, seed, trial, policy) -> list[Check]:
    model, sides, axis, at = random_alloy_instance(rng)
    rep = bracketing_audit(model, model.box(sides), axis, at, seed, trial, policy)
    return [("bracketing_violations", float(len(rep.violations)), 0.0)]


def _ssf(rng, seed, trial, policy) -> list[Check]:
    n = int(rng.integers(2, 51))
    k = int(rng.integers(1, min(5, n) + 1))
    A, B = random_pair(rng, n, k)
    b = ssf_bounds_audit(A, B, policy=policy)
    out = [("sup_le_rank", float(b.sup), float(b.rank)), ("l1_le_trace_norm", b.l1, b.trace_norm)]
    out += [(f"lp{p}_le_schatten", b.lp[p], b.lp_bound[p]) for p in b.lp]
    kr = krein_audit(A, B, np.polynomial.Polynomial([0.0, 0.0, 1.0]))
    out.append(("krein_quadratic", kr.discrepancy, 1e-9 * max(1.0, abs(kr.lhs))))
    w, V = np.linalg.eigh(A - B)
    o = optssf_audit(A, B, (V * np.abs(w)) @ V.T, lambda x: x * x, policy)
    out.append(("convex_bound", o.lhs, o.rhs))
    return out


def _averaging(rng, seed, trial, policy) -> list[Check]:
    n = int(rng.integers(1, 9))
    G = rng.normal(size=(n, n))
    H = (G + G.T) / 2
    R = rng.normal(size=(n, n))
    W = R @ R.T / n
    w, U = np.linalg.eigh(W)
    J = (U * np.sqrt(np.clip(w, 0, None)) * rng.uniform(0, 1)) @ U.T
    phi = rng.normal(size=n) + 1j * rng.normal(size=n)
    phi /= np.linalg.norm(phi)
    z = complex(rng.normal(), -float(rng.uniform(0.05, 2)))
    t = float(10 ** rng.uniform(-1, 1))
    r = resolvent_average(H, W, J, z, t, phi, QuadratureSpec(Z=1e4), policy)
    psi = rng.normal(size=n)
    psi /= np.linalg.norm(psi)
    a = float(rng.normal())
    p = projection_average(H, W, J, (a, a + float(rng.uniform(0, 2))), Uniform(-1.0, 1.0), psi, policy=policy)
    return [("resolvent_le_pi", abs(r.value), math.pi + r.tail_bound + r.quad_error),
            ("projection_le_rho_I", p.value if p.value > 0 else 0.0, p.bound + p.quad_error)]


def _toeplitz(rng, seed, trial, policy) -> list[Check]:
    d = int(rng.integers(1, 3))
    r = 2
    offs = {tuple(int(x) for x in rng.integers(-r, r + 1, size=d)) for _ in range(int(rng.integers(1, 5)))}
    offs.discard((0,) * d)
    a0 = float(rng.choice([-1, 1]) * rng.uniform(0.5, 2))
    raw = rng.uniform(-1, 1, size=len(offs))
    share = float(rng.uniform(0, 0.99))
    scale = share * abs(a0) / max(np.sum(np.abs(raw)), 1e-300)
    alpha = {(0,) * d: a0, **{o: float(v * scale) for o, v in zip(sorted(offs), raw)}}
    side = int(rng.integers(2, 257)) if d == 1 else int(rng.integers(2, 17))
    rep = inverse_rowsum(toeplitz_matrix(alpha, (side,) * d), policy=policy)
    return [("rowsum_le_bound", rep.norm, rep.bound), ("identity_residual", rep.identity_residual, 1e-10)]


def _interlacing(rng, seed, trial, policy) -> list[Check]:
    n = int(rng.integers(2, 41))
    k = int(rng.integers(0, min(4, n) + 1))
    G = rng.normal(size=(n, n))
    H = (G + G.T) / 2
    V = rng.normal(size=(n, k))
    P = (V * rng.normal(size=k)) @ V.T
    rep = interlacing_audit(H, P, k if k else None, policy)
    return [("interlacing_violations", float(rep.violations), 0.0),
            ("count_gap_le_rank", float(rep.max_count_gap), float(rep.rank))]


_RUNNERS: dict[str, Callable] = {
    "bracketing": _bracketing, "ssf": _ssf, "averaging": _averaging,
    "toeplitz": _toeplitz, "interlacing": _interlacing,
}


# ---------------------------------------------------------------------------
# driver


@dataclass
class Failure:
    suite: str
    seed: int
    trial: int
    check: str
    lhs: float
    rhs: float
    error: str | None = None

    def replay_config(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "trial": self.trial}


@dataclass
class SuiteResult:
    name: str
    trials: int = 0
    checks: int = 0
    failures: list = field(default_factory=list)


@dataclass
class AuditReport:
    status: str
    seed: int
    budget: float
    suites: dict

    @property
    def ok(self) -> bool:
        return self.status in ("pass", "skipped")

    def to_dict(self) -> dict:
        return {
            "status": self.status, "seed": self.seed, "budget": self.budget,
            "suites": {k: {"trials": v.trials, "checks": v.checks, "violations": len(v.failures),
                           "failures": [f.__dict__ | {"replay": f.replay_config()} for f in v.failures[:5]]}
                       for k, v in self.suites.items()},
        }


def run_case(suite: str, seed: int, trial: int, fault: bool = False,
             policy: NumericPolicy = DEFAULT) -> tuple[int, list[Failure]]:
    """Run one instance; returns ``(number of checks, failures)``."""
    rng = _rng(seed, suite, trial)
    try:
        checks = _RUNNERS[suite](rng, seed, trial, policy)
    except Exception as exc:  # an exception inside an audit is a failure of that case
        return 1, [Failure(suite, seed, trial, "exception", math.nan, math.nan, f"{type(exc).__name__}: {exc}")]
    fails = []
    for name, lhs, rhs in checks:
        if fault:
            rhs = rhs / 2 - 1
        if not lhs <= rhs * (1 + policy.audit_rtol) + policy.audit_atol:
            fails.append(Failure(suite, seed, trial, name, float(lhs), float(rhs)))
    return len(checks), fails


def replay(case: dict, fault: bool = False) -> list[Failure]:
    return run_case(case["suite"], int(case["seed"]), int(case["trial"]), fault)[1]


def audit_suite(seed: int = 0, budget: float = 60.0, suites: Iterable[str] = SUITES,
                faults: Iterable[str] = (), max_trials: int = 200, policy: NumericPolicy = DEFAULT,
                clock: Callable[[], float] = time.monotonic) -> AuditReport:
    """Round-robin over the suites until every suite has ``max_trials``
    instances or the budget (seconds) is spent."""
    suites = list(suites)
    for s in suites:
        if s not in _RUNNERS:
            raise ValueError(f"unknown suite {s!r}")
    faults = set(faults)
    res = {s: SuiteResult(s) for s in suites}
    if budget <= 0 or not suites:
        return AuditReport("skipped", seed, budget, res)
    t_end = clock() + budget
    for trial in range(max_trials):
        for s in suites:
            if clock() >= t_end:
                break
            n, f = run_case(s, seed, trial, s in faults, policy)
            res[s].trials += 1
            res[s].checks += n
            res[s].failures.extend(f)
        else:
            continue
        break
    bad = any(r.failures for r in res.values())
    return AuditReport("fail" if bad else "pass", seed, budget, res)
