"""Batch front-end: run integration jobs from JSON configs, check stored
divisions against gauges, emit reports and convergence tables.

Verbs:
  run <job.json>                  execute a job end to end
  check-division <div> <gauge>    validate a stored division

Exit codes: run returns 0 on convergence, 2 on non-convergence, 1 on any
parse/validation error; check-division returns 0 for a clean certificate,
3 when violations are found, 1 on parse errors.

Reports are deterministic for a fixed job and seed: every volatile value
(wall time, timestamp) lives under the single "timing" key.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from typing import Optional

from .cells import DomainSpec, real_from_json
from .division import ListDivision, validate
from .gauges import build_gauge
from .integrate import (
    GaugeSchedule,
    IntegralResult,
    build_integrand,
    integrate,
    schedule_for,
)
from . import brownian

WORKER_ENV = "GAUGEINT_WORKERS"

DOMAIN_PRESETS = {
    "unit_interval": {
        "kind": "product",
        "children": {"x": {"kind": "leaf", "base": {"lo": 0.0, "hi": 1.0}}},
    },
    "line": {
        "kind": "product",
        "children": {"x": {"kind": "leaf", "base": {"lo": "-inf", "hi": "+inf"}}},
    },
    "unit_square": {
        "kind": "product",
        "children": {
            "x1": {"kind": "leaf", "base": {"lo": 0.0, "hi": 1.0}},
            "x2": {"kind": "leaf", "base": {"lo": 0.0, "hi": 1.0}},
        },
    },
}


class JobError(ValueError):
    """Invalid job config; message carries the offending field."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKER_ENV, "1")))
    except ValueError:
        return 1


def load_job(config: dict) -> dict:
    if not isinstance(config, dict):
        raise JobError("job config must be a JSON object")
    job = dict(config)
    if "integrand" not in job or "name" not in job.get("integrand", {}):
        raise JobError("field 'integrand.name' is required")
    tol = job.get("tol", 1e-6)
    if not isinstance(tol, (int, float)) or not tol > 0:
        raise JobError(f"field 'tol' must be a positive number, got {tol!r}")
    job["tol"] = float(tol)
    job.setdefault("max_depth", 32)
    if not isinstance(job["max_depth"], int) or job["max_depth"] < 1:
        raise JobError("field 'max_depth' must be a positive integer")
    job.setdefault("seed", 0)
    job.setdefault("format", "json")
    if job["format"] not in ("json", "csv"):
        raise JobError("field 'format' must be 'json' or 'csv'")
    return job


def _resolve_domain(job: dict) -> Optional[DomainSpec]:
    dom = job.get("domain")
    if dom is None:
        return None
    if isinstance(dom, str):
        if dom not in DOMAIN_PRESETS:
            raise JobError(
                f"unknown domain preset {dom!r}; known: {sorted(DOMAIN_PRESETS)}"
            )
        dom = DOMAIN_PRESETS[dom]
    try:
        return DomainSpec.from_json(dom)
    except Exception as exc:
        raise JobError(f"field 'domain': {exc}")


def run_job(job: dict) -> tuple[dict, int]:
    """Execute a validated job; returns (report, exit_code)."""
    workers = _workers()
    name = job["integrand"]["name"]
    params = dict(job["integrand"].get("params", {}))
    tol = job["tol"]
    started = time.monotonic()

    oracle = None
    if name == "brownian_payoff":
        spec = brownian.BrownianSpec(
            int(params["d"]), tuple(params["times"])
        )
        pay = brownian.PayoffSpec(
            float(params.get("kappa", 1.0)),
            real_from_json(params.get("lam", 0.0)),
            params.get("mode", "synchronized"),
        )
        result = brownian.expected_payoff(
            spec, pay, tol=tol,
            method=job.get("method", "auto"),
            max_depth=job["max_depth"],
        )
        n_paths = int(job.get("oracle_paths", 100_000))
        if n_paths > 0:
            mean, stderr = brownian.mc_oracle(
                spec, pay, n_paths=n_paths, seed=int(job["seed"])
            )
            oracle = {
                "mean": mean,
                "stderr": stderr,
                "paths": n_paths,
                "abs_diff": abs(result.estimate - mean),
            }
    else:
        domain = _resolve_domain(job)
        if domain is None:
            raise JobError("field 'domain' is required for this integrand")
        try:
            h = build_integrand(job["integrand"])
        except KeyError as exc:
            raise JobError(str(exc))
        if "gauge" in job:
            try:
                initial = build_gauge(job["gauge"], domain)
            except Exception as exc:
                raise JobError(f"field 'gauge': {exc}")
            schedule = GaugeSchedule(initial)
        else:
            schedule = schedule_for(h, domain, tol)
        result = integrate(
            h, domain, schedule, tol, max_depth=job["max_depth"],
            workers=workers,
        )

    wall = time.monotonic() - started
    report = {
        "job": job,
        "result": result.to_json(),
        "oracle": oracle,
        "workers": workers,
        "timing": {
            "wall_time_s": wall,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
    }
    return report, 0 if result.converged else 2


def _write_report(report: dict, out: Optional[str], fmt: str) -> None:
    payload = json.dumps(report, indent=2, sort_keys=True)
    if out in (None, "-"):
        print(payload)
    else:
        with open(out, "w") as fh:
            fh.write(payload + "\n")
    if fmt == "csv":
        target = (out or "report") + ".csv" if out not in (None, "-") else None
        rows = report["result"]["rounds"]
        if target is None:
            w = csv.writer(sys.stdout)
            w.writerow(["round", "cells", "estimate", "delta_prev"])
            for r in rows:
                w.writerow([r["round"], r["cells"], r["estimate"], r["delta_prev"]])
        else:
            with open(target, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["round", "cells", "estimate", "delta_prev"])
                for r in rows:
                    w.writerow(
                        [r["round"], r["cells"], r["estimate"], r["delta_prev"]]
                    )


def cmd_run(args) -> int:
    try:
        with open(args.job) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read job {args.job}: {exc}", file=sys.stderr)
        return 1
    try:
        job = load_job(raw)
        if args.tol is not None:
            if not args.tol > 0:
                raise JobError("--tol must be positive")
            job["tol"] = args.tol
        if args.max_depth is not None:
            job["max_depth"] = args.max_depth
        if args.seed is not None:
            job["seed"] = args.seed
        if args.format is not None:
            job["format"] = args.format
        report, code = run_job(job)
    except JobError as exc:
        print(f"error: invalid job: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    _write_report(report, args.out, job["format"])
    return code


def cmd_check_division(args) -> int:
    try:
        with open(args.division) as fh:
            div_json = json.load(fh)
        division = ListDivision.from_json(div_json)
    except Exception as exc:
        print(f"error: cannot load division: {exc}", file=sys.stderr)
        return 1
    try:
        with open(args.gauge) as fh:
            gauge_json = json.load(fh)
        gauge = build_gauge(gauge_json)
    except Exception as exc:
        print(f"error: cannot load gauge: {exc}", file=sys.stderr)
        return 1
    cert = validate(division, gauge, seed=args.seed or 0)
    print(json.dumps(cert.to_json(), indent=2, sort_keys=True))
    if cert.ok:
        return 0
    for v in cert.violations:
        print(f"violation[{v.kind}]: {v.message}", file=sys.stderr)
    return 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gaugeint",
        description="gauge-fine division construction and Riemann-sum integration",
    )
    sub = p.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="execute an integration job")
    run_p.add_argument("job", help="path to the job JSON")
    run_p.add_argument("--tol", type=float, default=None)
    run_p.add_argument("--max-depth", type=int, default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None, help="report path ('-' = stdout)")
    run_p.add_argument("--format", choices=("json", "csv"), default=None)
    run_p.set_defaults(fn=cmd_run)

    chk = sub.add_parser("check-division", help="validate a stored division")
    chk.add_argument("division", help="division JSON file")
    chk.add_argument("gauge", help="gauge spec JSON file")
    chk.add_argument("--seed", type=int, default=0)
    chk.set_defaults(fn=cmd_check_division)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
