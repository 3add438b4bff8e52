"""Command line entry point.

``rsolab run CONFIG [--workers N] [--out DIR]``, ``rsolab audit [--seed S]
[--budget SECONDS]`` and ``rsolab version``. Errors are printed to stderr
as one JSON object; exit code 2 means an invalid config, 3 a numerical
failure, 1 a failed audit.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from . import __version__
from .audit import SUITES, audit_suite, replay
from .config import ConfigError, ExperimentConfig
from .experiments import run


def _provenance(exc: BaseException) -> dict:
    """Innermost package frame of the traceback as ``module`` / ``op``."""
    frames = [f for f in traceback.extract_tb(exc.__traceback__) if "rsolab" in Path(f.filename).parts]
    if not frames:
        return {"module": None, "op": None}
    f = frames[-1]
    return {"module": Path(f.filename).stem, "op": f.name}


def _error(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def _cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        _error(exc.to_dict())
        return 2
    except OSError as exc:
        _error({"error": "io", "message": str(exc)})
        return 2
    out = args.out or cfg.output or f"rsolab-{cfg.experiment}-{cfg.fingerprint()}"
    try:
        man = run(cfg, out, args.workers)
    except Exception as exc:
        _error({"error": "numeric", "type": type(exc).__name__, "message": str(exc), **_provenance(exc)})
        return 3
    print(json.dumps({"out": str(out), "fingerprint": man.fingerprint, "files": sorted(man.checksums)}))
    return 0


def _cmd_audit(args) -> int:
    if args.replay:
        case = json.loads(Path(args.replay).read_text() if Path(args.replay).is_file() else args.replay)
        fails = replay(case, case["suite"] in args.inject_fault)
        print(json.dumps({"status": "fail" if fails else "pass", "failures": [f.__dict__ for f in fails]}))
        return 1 if fails else 0
    rep = audit_suite(args.seed, args.budget, args.suite or SUITES, args.inject_fault)
    d = rep.to_dict()
    for name, s in d["suites"].items():
        state = "skipped" if rep.status == "skipped" else ("FAIL" if s["violations"] else "pass")
        print(f"{name:12s} {state:8s} trials={s['trials']} checks={s['checks']} violations={s['violations']}")
        for f in s["failures"]:
            print(f"  {f['check']}: lhs={f['lhs']!r} rhs={f['rhs']!r} {f['error'] or ''}".rstrip())
            print(f"  replay: {json.dumps(f['replay'], sort_keys=True)}")
    print(rep.status)
    if args.out:
        Path(args.out).write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
    return 0 if rep.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsolab", description="Random Schroedinger operator experiments.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=None, help="worker threads (default: logical cores)")
    r.add_argument("--out", default=None, help="artifact directory")
    r.set_defaults(fn=_cmd_run)
    a = sub.add_parser("audit", help="randomised invariant audit")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--budget", type=float, default=60.0, help="seconds; 0 skips")
    a.add_argument("--suite", action="append", choices=SUITES, help="restrict to a suite (repeatable)")
    a.add_argument("--inject-fault", action="append", default=[], choices=SUITES, metavar="SUITE",
                   help="corrupt the checks of a suite to exercise failure reporting")
    a.add_argument("--replay", default=None, help="JSON case (or file) printed by a failing audit")
    a.add_argument("--out", default=None, help="write the JSON report here")
    a.set_defaults(fn=_cmd_audit)
    v = sub.add_parser("version", help="print the tool version")
    v.set_defaults(fn=lambda args: print(__version__) or 0)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.fn(args))


if __name__ == "__main__":
    sys.exit(main())
