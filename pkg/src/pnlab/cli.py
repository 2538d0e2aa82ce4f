"""Command-line entry point: ``pnlab <subcommand> --config run.yaml``.

Results go to ``<out>/<run_id>/``: one CSV per table, extra artifacts and
``manifest.json``.  The manifest is written even when the run fails.
Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 solver error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .config import SUBCOMMANDS, RunConfig, load_config, parse_config
from .errors import InvalidConfigurationError, PNLabError
from .experiments import COLUMNS, run_experiment

log = logging.getLogger("pnlab")

EXIT_PASS, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    try:
        import numpy as np
        if isinstance(v, np.bool_):
            return _cell(bool(v))
        if isinstance(v, np.floating):
            return _cell(float(v))
        if isinstance(v, np.integer):
            return str(int(v))
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    """Deterministic CSV: fixed column order, repr floats, Unix newlines."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    if isinstance(v, int):
        return v
    return f if math.isfinite(f) else str(f)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pnlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pnlab {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None,
                        help="YAML run configuration (defaults apply when omitted)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output root directory")
        sp.add_argument("--force", action="store_true", help="overwrite an existing run")
        sp.add_argument("--workers", type=int, default=None, help="process-pool size")
    return ap


def resolve_config(args) -> RunConfig:
    if args.config is None:
        cfg = load_config({"subcommand": args.subcommand})
    else:
        cfg = parse_config(args.config)
    if cfg.subcommand != args.subcommand:
        raise InvalidConfigurationError(
            f"subcommand: config declares {cfg.subcommand!r}, command line asks {args.subcommand!r}")
    if args.workers is not None:
        if args.workers < 1:
            raise InvalidConfigurationError("workers: must be >= 1")
        cfg.workers = args.workers
    return cfg


def prepare_run_dir(root: Path, run_id: str, force: bool) -> Path:
    run_dir = root / run_id
    if run_dir.exists() and any(run_dir.iterdir()):
        if not force:
            raise InvalidConfigurationError(
                f"run directory {run_dir} exists; pass --force to overwrite")
        for f in run_dir.iterdir():
            if f.is_file():
                f.unlink()
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def execute(cfg: RunConfig, run_dir: Path) -> int:
    """Run the experiment, write its tables and the manifest; return the exit code."""
    manifest = {
        "pnlab_version": __version__,
        "run_id": cfg.run_id,
        "subcommand": cfg.subcommand,
        "config": cfg.echo(),
        "artifacts": [],
        "wall_time_s": {},
        "checks": {},
        "status": "running",
    }
    t0 = time.perf_counter()
    code = EXIT_PASS
    try:
        res = run_experiment(cfg)
        manifest["wall_time_s"]["experiment"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        for name in sorted(res.tables):
            path = run_dir / name
            write_csv(path, COLUMNS[name], res.tables[name])
            manifest["artifacts"].append({"file": name, "sha256": _digest(path),
                                          "columns": list(COLUMNS[name])})
        for name in sorted(res.artifacts):
            path = run_dir / name
            res.artifacts[name].save(path)
            manifest["artifacts"].append({"file": name, "sha256": _digest(path)})
        manifest["wall_time_s"]["write"] = time.perf_counter() - t1
        manifest["checks"] = {k: bool(v) for k, v in res.checks.items()}
        manifest["summary"] = _jsonable(res.summary)
        failed = [k for k, v in res.checks.items() if not v]
        manifest["status"] = "check-failure" if failed else "pass"
        code = EXIT_CHECK if failed else EXIT_PASS
    except InvalidConfigurationError as exc:
        manifest.update(status="config-error", error=str(exc))
        code = EXIT_CONFIG
    except (PNLabError, ArithmeticError, ValueError, RuntimeError) as exc:
        manifest.update(status="solver-error", error=f"{type(exc).__name__}: {exc}",
                        traceback=traceback.format_exc())
        code = EXIT_SOLVER
    manifest["wall_time_s"]["total"] = time.perf_counter() - t0
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        run_dir = prepare_run_dir(args.out, cfg.run_id, args.force)
    except InvalidConfigurationError as exc:
        print(f"pnlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("run %s -> %s", cfg.subcommand, run_dir)
    code = execute(cfg, run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    for name, ok in manifest["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if "error" in manifest:
        print(f"pnlab: {manifest['status']}: {manifest['error']}", file=sys.stderr)
    print(f"{manifest['status']}  {run_dir / 'manifest.json'}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
