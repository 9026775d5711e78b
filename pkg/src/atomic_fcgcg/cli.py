"""Command line front end.

::

    atomic-fcgcg run     --config heat_414.json [--config ...] [--out DIR] [--seed N] [--quiet]
    atomic-fcgcg compare --config heat_414.json [--out DIR] [--seed N] [--quiet]
    atomic-fcgcg verify  --out DIR [--out DIR ...]
    atomic-fcgcg gen     [--out DIR]

Exit codes: 0 optimal, 2 iteration limit, 3 solver error or failed
verification, 4 invalid config, 5 I/O error.  With several ``--config``
arguments the experiments run concurrently on a pool of
``ATOMIC_FCGCG_THREADS`` workers (default 1) and the largest exit code wins.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import experiments as ex
from .diagnostics import report_json
from .plotting import IoError

EXIT_OK, EXIT_MAXITER, EXIT_ERROR, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("atomic_fcgcg")


def _workers() -> int:
    raw = os.environ.get("ATOMIC_FCGCG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ex.ConfigInvalid(f"ATOMIC_FCGCG_THREADS={raw!r} is not an integer") from None
    if n < 1:
        raise ex.ConfigInvalid("ATOMIC_FCGCG_THREADS must be >= 1")
    return n


def _guard(fn):
    """Map library exceptions to exit codes."""
    try:
        return fn()
    except ex.ConfigInvalid as exc:
        log.error("invalid config: %s", exc)
        return EXIT_CONFIG
    except (IoError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - anything else is a solver-side failure
        log.error("error: %s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


def _out_for(cfg, args, many):
    if args.out is None:
        return Path(cfg["output_dir"])
    base = Path(args.out[0])
    return base / cfg["experiment_id"] if many else base


def _summary_line(cfg, report, code):
    res = report.get("final_residual") if isinstance(report, dict) else None
    it = report.get("iterations") if isinstance(report, dict) else None
    return f"{cfg['experiment_id']}: {report.get('termination')} after {it} iterations, residual {res} (exit {code})"


def _run_one(path, args, many, verb):
    def go():
        cfg = ex.load_config(path, seed=args.seed)
        out = _out_for(cfg, args, many)
        if verb == "run":
            code, rep = ex.run_config(cfg, out, quiet=args.quiet)
            if not args.quiet:
                print(_summary_line(cfg, rep, code))
        else:
            code, summ = ex.compare_config(cfg, out, quiet=args.quiet)
            if not args.quiet:
                fc, g = summ["fcgcg"], summ["gcg"]
                print(f"{cfg['experiment_id']}: FC-GCG {fc['termination']} at k={fc['iterations']} "
                      f"(residual {fc['final_residual']}), GCG residual {g['final_residual']} "
                      f"at k={g['iterations']} (exit {code})")
        return code

    return _guard(go)


def cmd_run(args, verb="run") -> int:
    if not args.config:
        log.error("%s needs --config", verb)
        return EXIT_CONFIG
    if args.out is not None and len(args.out) > 1:
        log.error("%s takes a single --out", verb)
        return EXIT_CONFIG
    many = len(args.config) > 1
    if not many:
        return _run_one(args.config[0], args, False, verb)
    try:
        n = _workers()
    except ex.ConfigInvalid as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    with ThreadPoolExecutor(max_workers=n) as pool:
        codes = list(pool.map(lambda p: _run_one(p, args, many, verb), args.config))
    return max(codes)


def cmd_compare(args) -> int:
    return cmd_run(args, verb="compare")


def cmd_verify(args) -> int:
    dirs = list(args.out or []) + list(args.dirs or [])
    if not dirs:
        log.error("verify needs --out DIR")
        return EXIT_CONFIG
    worst = EXIT_OK
    for d in dirs:
        def go(d=d):
            ok, rep = ex.verify_directory(d)
            text = report_json(rep)
            try:
                Path(rep["directory"], "verify.json").write_text(text + "\n")
            except OSError as exc:
                raise IoError(str(exc)) from exc
            if not args.quiet:
                print(f"{d}: {'PASS' if ok else 'FAIL'}")
            return EXIT_OK if ok else EXIT_ERROR
        worst = max(worst, _guard(go))
    return worst


def cmd_gen(args) -> int:
    def go():
        out = Path(args.out[0]) if args.out else Path(".")
        out.mkdir(parents=True, exist_ok=True)
        for name in ex.SHIPPED:
            cfg = ex.shipped_config(name)
            if args.seed is not None:
                cfg["seed"] = args.seed
            (out / f"{name}.json").write_text(json.dumps(cfg, indent=2) + "\n")
            if not args.quiet:
                print(out / f"{name}.json")
        (out / "schema.json").write_text(json.dumps(ex.SCHEMA, indent=2) + "\n")
        return EXIT_OK

    return _guard(go)


class _Parser(argparse.ArgumentParser):
    # usage errors would otherwise exit 2, which already means MaxIter
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="atomic-fcgcg", description=__doc__.split("\n\n")[0],
                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--out", action="append", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--quiet", action="store_true", help="only log errors")

    for verb, fn, hlp in (("run", cmd_run, "run FC-GCG on one or more configs"),
                          ("compare", cmd_compare, "run FC-GCG and plain GCG on the same instance")):
        p = sub.add_parser(verb, help=hlp)
        p.add_argument("--config", action="append", metavar="PATH", required=True)
        common(p)
        p.set_defaults(fn=fn)
    p = sub.add_parser("verify", help="re-run diagnostics on an output directory")
    p.add_argument("dirs", nargs="*", metavar="DIR")
    common(p)
    p.set_defaults(fn=cmd_verify)
    p = sub.add_parser("gen", help="write the shipped configs and the schema")
    common(p)
    p.set_defaults(fn=cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
