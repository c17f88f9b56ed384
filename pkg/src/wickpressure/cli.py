"""Command line entry point: ``wickpressure <subcommand> [--config FILE] [flags]``.

Flags mirror config keys and override the file. Output goes to ``--output``,
else ``$WICKPRESSURE_OUTPUT/<experiment>``, else ``runs/<experiment>``.
Exit codes: 0 pass, 1 acceptance failure, 2 usage or config error,
3 numerical failure (including checksum mismatches).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import io, pipeline
from .config import ConfigError, RunConfig, from_flat, parse_config
from .pipeline import EXIT_FAIL, EXIT_NUMERIC, EXIT_PASS, EXIT_USAGE, NUMERICAL_ERRORS

# (flag, dotted key, type)
CONFIG_FLAGS = [
    ("--experiment", "experiment", str),
    ("--dim", "dim", int),
    ("--grid-y", "grid.y", int),
    ("--grid-z", "grid.z", int),
    ("--beta", "beta", float),
    ("--seed", "seed", int),
    ("--realizations", "realizations", int),
    ("--weight-mode", "weight.mode", str),
    ("--weight-floor", "weight.floor", float),
    ("--tol", "solver.tol", float),
    ("--max-iter", "solver.max_iter", int),
    ("--transmissibility", "transmissibility", str),
    ("--cutoff", "inversion.cutoff", int),
    ("--targets", "targets", int),
    ("--workers", "workers", int),
    ("--output", "output", str),
]


def _index(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    for flag, key, typ in CONFIG_FLAGS:
        common.add_argument(flag, dest=key, type=typ, default=None, help=f"overrides '{key}'")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wickpressure", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="full pipeline with summary")
    sf = sub.add_parser("sample-field", parents=[common], help="write field realizations as TGF1")
    sf.add_argument("--index", type=int, nargs="+", default=[0])
    sub.add_parser("gmc-stats", parents=[common], help="GMC moments over the ensemble")
    dc = sub.add_parser("decay-check", parents=[common], help="multiplier decay fit")
    dc.add_argument("--alpha", type=float, required=True)
    dc.add_argument("--n", type=int, default=256)
    dc.add_argument("--tolerance", type=float, default=0.15)
    so = sub.add_parser("solve", parents=[common], help="one weighted solve with the reference flux")
    so.add_argument("--pole", type=_index, default=None)
    gr = sub.add_parser("green", parents=[common], help="discrete Green function column")
    gr.add_argument("--source", type=_index, required=True)
    gr.add_argument("--pole", type=_index, default=None)
    sub.add_parser("family", parents=[common], help="solution family, interpolation and inversion")
    sub.add_parser("verify", parents=[common], help="S-transform Monte Carlo check")
    sub.add_parser("report", parents=[common], help="aggregate JSON and verify checksums")
    return p


def load_config(args) -> RunConfig:
    overrides = {key: getattr(args, key) for _, key, _ in CONFIG_FLAGS if getattr(args, key) is not None}
    if args.config:
        return parse_config(args.config, overrides)
    return from_flat(overrides)


def _emit(doc):
    sys.stdout.write(io.dumps(doc))


def _dispatch(args, cfg: RunConfig) -> int:
    cmd = args.command
    if cmd == "run":
        res = pipeline.run_pipeline(cfg)
        for name, c in sorted(res.summary["checks"].items()):
            print(f"{'PASS' if c['pass'] else 'FAIL'} {name}")
        print(f"status: {res.summary['status']} ({res.root / 'summary.json'})")
        return res.exit_code
    if cmd == "decay-check":
        doc = pipeline.decay_report(args.alpha, cfg.dim, args.n, args.tolerance)
        root = cfg.output_dir()
        root.mkdir(parents=True, exist_ok=True)
        m = io.Manifest.load(root)
        m.write_json("fit_report.json", doc, "fit_report")
        m.save()
        _emit(doc)
        return EXIT_PASS if doc["pass"] else EXIT_FAIL
    if cmd == "report":
        code, rep = pipeline.aggregate(cfg.output_dir())
        _emit(rep)
        if rep["checksum_failures"]:
            print("checksum failure: " + ", ".join(rep["checksum_failures"]), file=sys.stderr)
        return code

    root = cfg.output_dir()
    root.mkdir(parents=True, exist_ok=True)
    m = io.Manifest.load(root)
    try:
        if cmd == "sample-field":
            ens = pipeline.field_stage(cfg, m, args.index)
            _emit(ens)
            return EXIT_PASS
        if cmd == "gmc-stats":
            checks = pipeline.gmc_stage(cfg, m)
            for c in checks:
                print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.estimate:.6g} +- {c.stderr:.3g} (predicted {c.predicted:.6g})")
            return EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL
        if cmd == "solve":
            pole = args.pole or (0,) * cfg.dim
            rep, doc = pipeline.solve_single(cfg, pole)
            m.write_tgf("solve.tgf", rep.u.grid, rep.u.values)
            m.write_json("solve_report.json", doc, "solve_report")
            _emit(doc)
            return EXIT_PASS if rep.converged else EXIT_NUMERIC
        if cmd == "green":
            pole = args.pole or (0,) * cfg.dim
            rep, doc = pipeline.green_single(cfg, args.source, pole)
            m.write_tgf("green.tgf", rep.u.grid, rep.u.values)
            m.write_json("green_report.json", doc, "solve_report")
            _emit(doc)
            return EXIT_PASS if doc["converged"] else EXIT_NUMERIC
        if cmd == "family":
            arts = pipeline.family_stage(cfg, m)
            _emit(arts.sidecar)
            return EXIT_PASS if arts.consistency <= pipeline.CONSISTENCY_TOL else EXIT_FAIL
        if cmd == "verify":
            if "family.json" in m.entries:
                fine, phi = pipeline.load_family(cfg, m)
            else:
                arts = pipeline.family_stage(cfg, m)
                fine, phi = arts.fine, arts.phi
            doc = pipeline.verify_stage(cfg, m, fine, phi)
            print(f"{doc['pass_count']}/{len(doc['targets'])} targets within 3 SE")
            return EXIT_PASS if doc["pass"] else EXIT_FAIL
    finally:
        m.save()
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _dispatch(args, cfg)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
