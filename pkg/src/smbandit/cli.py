"""Command-line entry point: run / oracle / design / selftest."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="smbandit", description="Batched stochastic matching bandits.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment from a JSON config or preset")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="experiment JSON document")
    src.add_argument("--preset", help="built-in experiment (small, runtime)")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--seeds", help="seed range a..b (inclusive) or comma list")
    r.add_argument("--decimate", type=int, help="record every k-th round")
    r.add_argument("--workers", type=int, help="concurrent cells (timing runs force 1)")
    r.add_argument("--quiet", action="store_true")

    o = sub.add_parser("oracle", help="optimal matching of an instance JSON file")
    o.add_argument("instance")
    o.add_argument("--out", help="write the JSON answer here instead of stdout")
    o.add_argument("--quiet", action="store_true")

    d = sub.add_parser("design", help="G-optimal design weights for a points JSON file")
    d.add_argument("points")
    d.add_argument("--tol", type=float, default=0.05)
    d.add_argument("--out")
    d.add_argument("--quiet", action="store_true")

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.add_argument("--quiet", action="store_true")
    return p


def _read_json(path: str):
    from .harness import ConfigError

    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None


def _emit(doc: dict, out: str | None, quiet: bool) -> None:
    text = json.dumps(doc, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    if not quiet or not out:
        print(text)


def cmd_run(args) -> int:
    from .harness import load_config, parse_seeds, preset, run_experiment, write_outputs

    cfg = load_config(args.config) if args.config else preset(args.preset)
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    if args.decimate is not None:
        if args.decimate < 1:
            from .harness import ConfigError
            raise ConfigError("--decimate must be >= 1")
        cfg.decimate = args.decimate
    if args.workers is not None:
        cfg.workers = max(1, args.workers)
    out = args.out or cfg.output

    def progress(res):
        if not args.quiet:
            status = "FAILED " + res.error.splitlines()[0] if res.error else \
                f"regret {res.rows[-1].cum_regret:.2f}"
            print(f"{res.algorithm} seed={res.seed}: {status}", flush=True)

    result = run_experiment(cfg, progress=progress)
    paths = write_outputs(result, out)
    if not args.quiet:
        print(f"wrote {paths['csv']}, {paths['plot']}, {paths['summary']}")
    return EXIT_RUNTIME if result.failures else EXIT_OK


def cmd_oracle(args) -> int:
    from .environment import instance_from_dict, oracle_matching
    from .harness import ConfigError

    try:
        inst = instance_from_dict(_read_json(args.instance))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{args.instance}: {exc}") from None
    sol = oracle_matching(inst)
    _emit({"matching": [list(s) for s in sol.matching.sets], "value": sol.value,
           "agents": "0-indexed"}, args.out, args.quiet)
    return EXIT_OK


def cmd_design(args) -> int:
    from .design import DesignProblem, leverages, solve_g_optimal
    from .harness import ConfigError

    doc = _read_json(args.points)
    try:
        pts = doc["points"] if isinstance(doc, dict) else doc
        pts = np.asarray(pts, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty list of equal-length vectors")
        r = pts.shape[1]
        reg = float(doc.get("regularizer", 1e-6)) if isinstance(doc, dict) else 1e-6
        problem = DesignProblem.from_vectors(pts, reg)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{args.points}: {exc}") from None
    w = solve_g_optimal(problem, tol=args.tol)
    lev = leverages(problem, w)
    _emit({"weights": {str(u): x for u, x in w.as_dict().items()},
           "max_leverage": float(lev.max()), "dimension": r,
           "certified": bool(lev.max() <= r * (1 + args.tol)),
           "iterations": w.iterations}, args.out, args.quiet)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(verbose=not args.quiet)
    return EXIT_OK if not failures else EXIT_RUNTIME


def main(argv=None) -> int:
    from .harness import ConfigError

    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {"run": cmd_run, "oracle": cmd_oracle, "design": cmd_design,
               "selftest": cmd_selftest}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
