"""Command line: ``grwflow run | check | sweep``.

Exit codes: 0 when every pass/fail check passes, 1 when a check fails, 2 on
configuration or runtime errors (including loss of spacelikeness).
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_echo, parse_config
from .flow import ConfigError, FlowConfig, FlowTrace, RunAborted, run_u
from .geom import NotSpacelike
from .verify import CHECKS, asymptotics_report, theorem_constants
from .warp import ProfileError

log = logging.getLogger("grwflow")

OUT_ENV = "GRWFLOW_OUT"
TRACE_FORMAT = "trace-v1"
EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def load_schema() -> dict:
    return json.loads(resources.files("grwflow").joinpath("report.schema.json").read_text())


def _clean(x):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))


def resolve_out(cli_out: str | None, cfg: FlowConfig) -> Path:
    """--out beats the environment variable, which beats [output] dir."""
    d = cli_out or os.environ.get(OUT_ENV) or cfg.out_dir or "out"
    return Path(d)


def write_trace_csv(path: Path, trace: FlowTrace, enabled) -> None:
    rows = trace.monitor.margin_rows if trace.monitor is not None else [{} for _ in trace.t]
    cols = [f"margin_{c}" for c in enabled]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TRACE_FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(FlowTrace.COLUMNS) + cols)
        for i in range(len(trace.t)):
            base = [getattr(trace, c)[i] for c in FlowTrace.COLUMNS]
            r = rows[i] if i < len(rows) else {}
            w.writerow([_fmt(v) for v in base] + [_fmt(r.get(c)) for c in enabled])


def write_residuals_csv(path: Path, trace: FlowTrace) -> None:
    rows = trace.residual_rows
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TRACE_FORMAT}\n")
        if not rows:
            fh.write("t\n")
            return
        keys = list(rows[0])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in keys])


def _summary(trace: FlowTrace) -> dict:
    out = {"steps": trace.steps, "t_final": trace.t[-1] if trace.t else 0.0}
    if len(trace.t) >= 1:
        a = asymptotics_report(trace, trace.monitor.ledger.osc_slack if trace.monitor else 1e-8)
        out.update(a.as_dict())
    rows = trace.residual_rows
    if rows:
        for k in rows[0]:
            if k == "t":
                continue
            vals = np.array([r[k] for r in rows], dtype=float)
            vals = vals[np.isfinite(vals)]
            out[f"max_{k}"] = float(np.max(np.abs(vals))) if len(vals) else None
    return out


def _report(cfg: FlowConfig, trace: FlowTrace, outcome: str, error: dict | None = None) -> dict:
    k = trace.constants
    s_base = trace.initial.profile.s_base if trace.initial is not None else None
    rep = {
        "schema_version": "1",
        "trace_format": TRACE_FORMAT,
        "outcome": outcome,
        "config": config_echo(cfg, s_base),
        "checks": trace.ledger.verdicts() if trace.ledger is not None else [],
        "hypothesis": k.hypothesis.as_dict() if k is not None else {},
        "constants": k.as_dict() if k is not None else {},
        "summary": _summary(trace),
    }
    if error is not None:
        rep["error"] = error
    return rep


def execute(cfg: FlowConfig, out: Path) -> int:
    """Run one configuration into ``out``; returns the exit code."""
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    files = {"trace": "trace.csv", "residuals": "residuals.csv", "report": "report.json"}
    try:
        trace = run_u(cfg)
        outcome = "pass" if trace.passed() else "fail"
        code = EXIT_OK if outcome == "pass" else EXIT_FAIL
        error = None
    except RunAborted as exc:
        trace = exc.trace
        outcome, code = "aborted", EXIT_ERROR
        cause = exc.cause
        error = {"kind": type(cause).__name__, "message": str(cause),
                 "node": getattr(cause, "node", None), "t": getattr(cause, "t", None)}
        snap = out / "snapshot.csv"
        with open(snap, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "u"])
            for x, u in zip(exc.last.grid.x, exc.last.u):
                w.writerow([_fmt(x), _fmt(u)])
        files["snapshot"] = "snapshot.csv"
        log.error("run aborted: %s (snapshot in %s)", cause, snap)
    write_trace_csv(out / files["trace"], trace, cfg.checks.enabled)
    write_residuals_csv(out / files["residuals"], trace)
    report = _report(cfg, trace, outcome, error)
    _dump(out / files["report"], report)
    failed = [c["id"] for c in report["checks"] if c["status"] == "fail"]
    for c in failed:
        log.error("check %s failed", c)
    manifest = {
        "tool": "grwflow",
        "version": __version__,
        "config": report["config"],
        "start_wall": start,
        "end_wall": time.time(),
        "outcome": outcome,
        "exit_code": code,
        "failed_checks": failed,
        "outputs": {k: str(out / v) for k, v in files.items()},
    }
    _dump(out / "manifest.json", manifest)
    return code


def cmd_run(args) -> int:
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    out = resolve_out(args.out, cfg)
    try:
        code = execute(cfg, out)
    except (ConfigError, ProfileError, NotSpacelike, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    print(f"{args.config}: exit {code}, outputs in {out}")
    return code


def check_report(cfg: FlowConfig) -> dict:
    st = cfg.setup()
    k = theorem_constants(st, cfg.t_end, cfg.checks.eps_slack, cfg.checks.companion_gap)
    checks = []
    for c in cfg.checks.enabled:
        ok, why = k.applicability.get(c, (True, ""))
        status = "not-applicable" if not ok else ("diagnostic" if CHECKS[c][0] == "diagnostic" else "applicable")
        checks.append({"id": c, "status": status, "reason": why})
    hyp = k.hypothesis
    return {"profile": st.profile.name, "hypothesis": hyp.as_dict(), "constants": k.as_dict(),
            "checks": checks}


def cmd_check(args) -> int:
    try:
        cfg = parse_config(args.config)
        rep = check_report(cfg)
    except (ConfigError, ProfileError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    h = rep["hypothesis"]
    for key in ("rho_prime_nonneg", "ratio_nonincreasing", "strict_somewhere", "ncc_holds"):
        print(f"{key}={'true' if h[key] else 'false'}")
    print(json.dumps(_clean(rep), indent=2))
    return EXIT_OK


def _sweep_one(path: str, out_root: str) -> dict:
    entry = {"config": path, "out_dir": None, "exit_code": EXIT_ERROR, "outcome": "error", "failed_checks": []}
    try:
        cfg = parse_config(path)
        out = Path(out_root) / Path(path).stem
        entry["out_dir"] = str(out)
        code = execute(cfg, out)
        man = json.loads((out / "manifest.json").read_text())
        entry.update(exit_code=code, outcome=man["outcome"], failed_checks=man["failed_checks"])
    except Exception as exc:  # report and continue with the other runs
        entry["error"] = f"{type(exc).__name__}: {exc}"
    return entry


def cmd_sweep(args) -> int:
    paths = sorted(glob.glob(args.glob))
    if not paths:
        log.error("no configs match %s", args.glob)
        return EXIT_ERROR
    out_root = args.out or os.environ.get(OUT_ENV) or "sweep_out"
    Path(out_root).mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or os.cpu_count() or 1
    if jobs == 1:
        entries = [_sweep_one(p, out_root) for p in paths]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            entries = list(ex.map(_sweep_one, paths, [out_root] * len(paths)))
    codes = [e["exit_code"] for e in entries]
    code = EXIT_ERROR if EXIT_ERROR in codes else (EXIT_FAIL if EXIT_FAIL in codes else EXIT_OK)
    _dump(Path(out_root) / "index.json", {"runs": entries, "exit_code": code})
    for e in entries:
        print(f"{e['config']}: {e['outcome']}")
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="grwflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="integrate one configuration and write trace, residuals and report")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help=f"output directory (else ${OUT_ENV}, else [output] dir)")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("check", help="hypotheses and theorem constants only")
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_check)
    s = sub.add_parser("sweep", help="run many configurations concurrently")
    s.add_argument("--glob", required=True)
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="grwflow: %(levelname)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
