"""Command-line entry point: ``spammkit <command> [flags]``.

Flags may also come from a ``--config`` file of ``key=value`` lines
(keys spelled like the flags, with or without leading dashes); flags given
on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import List, Optional, Sequence

from . import bench
from .errors import ConfigError, SpammError
from .generators import DENSE_GUARD, ExperimentConfig, error_norms, gen_banded_decay, tau_sweep
from .mmio import read_matrix_market, write_matrix_market
from .multiply import Method, MultiplyRequest, run


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _methods(text: str) -> List[str]:
    return [Method.parse(t).value for t in text.replace(",", " ").split()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="file of key=value lines mirroring the flags")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--n-list", type=_ints, default=None, help="comma-separated sizes")
    p.add_argument("--task-size", type=int, default=256)
    p.add_argument("--bs", type=int, default=32)
    p.add_argument("--alpha", type=float, default=0.005)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--cutoff", type=float, default=1e-16)
    p.add_argument("--randomized", action="store_true",
                   help="scale entries by seeded uniform(0.5, 1) factors")
    p.add_argument("--tau", type=float, default=1e-6)
    p.add_argument("--tau-list", type=_floats, default=None, help="descending thresholds")
    p.add_argument("--sigma", type=float, default=1e-6)
    p.add_argument("--method", type=_methods, default=None,
                   help="one or more of exact, truncmul, spamm, hybrid")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", help="Matrix Market file used instead of the model matrix")
    p.add_argument("--out", help="output CSV (stdout when omitted)")
    p.add_argument("--trace", help="per-task trace CSV")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spammkit",
                                     description="Approximate products of decay matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write the model matrix as Matrix Market")
    _common(p)
    p = sub.add_parser("multiply", help="one product, with its error when n is small enough")
    _common(p)
    p.add_argument("--result", help="write the product to this Matrix Market file")
    p = sub.add_parser("error-vs-n", help="error against size at fixed tau")
    _common(p)
    p = sub.add_parser("error-vs-tau", help="error against tau at fixed size")
    _common(p)
    p = sub.add_parser("matched-accuracy", help="largest tau meeting sigma, per method")
    _common(p)
    p = sub.add_parser("leaf-bench", help="leaf multiply and predictor timings")
    _common(p)
    p.set_defaults(n=2048)
    p.add_argument("--bs-list", type=_ints, default=[64, 256])
    p.add_argument("--fill-list", type=_floats, default=list(bench.DEFAULT_FILLS))
    p = sub.add_parser("lemma1-probe", help="growth of the sum of small squared entries")
    _common(p)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--eps-list", type=_floats, default=None)
    p.add_argument("--n-eps", type=int, default=8192)
    return parser


def read_config(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in read_config(args.config).items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise ConfigError(f"unknown config key {key!r}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        else:
            defaults[key] = raw
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def to_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(
        n=args.n, n_list=args.n_list or [], task_size=args.task_size, bs=args.bs,
        tau=args.tau, sigma=args.sigma, seed=args.seed, workers=args.workers,
        alpha=args.alpha, c=args.c, cutoff=args.cutoff, randomized=args.randomized,
        out=args.out, trace=args.trace)
    if args.method:
        cfg.methods = args.method
    if args.tau_list:
        cfg.tau_list = args.tau_list
    if cfg.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg.validate()


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _print_slopes(report: bench.ErrorReport, label: str) -> None:
    for m, fit in report.slopes.items():
        if fit is None:
            print(f"{m}: slope vs {label} undefined", file=sys.stderr)
        else:
            print(f"{m}: slope vs {label} {fit[0]:.3f} +/- {fit[1]:.3f}", file=sys.stderr)


def _load(cfg: ExperimentConfig, args):
    if args.input:
        return read_matrix_market(args.input, cfg.task_size, cfg.bs)
    return bench.model_matrix(cfg)


def cmd_gen(cfg, args) -> int:
    if not args.out:
        raise ConfigError("gen needs --out")
    m = gen_banded_decay(cfg.n, cfg.model, cfg.task_size, cfg.bs, cfg.randomized, cfg.seed)
    count = write_matrix_market(args.out, m)
    print(f"wrote {count} entries to {args.out}", file=sys.stderr)
    return 0


def cmd_multiply(cfg, args) -> int:
    a = _load(cfg, args)
    ref = bench.DenseReference(a) if a.n_logical <= DENSE_GUARD else None
    report = bench.ErrorReport()
    try:
        for m in cfg.methods:
            c, st = run(MultiplyRequest(m, a, a, cfg.tau), workers=cfg.workers,
                        seed=cfg.seed, trace=cfg.trace)
            frob, worst = error_norms(ref.array, c) if ref else (math.nan, math.nan)
            report.rows.append(bench.ErrorRow(
                Method.parse(m).value, a.n_logical, a.task_size, a.bs, cfg.tau, frob, worst,
                st.total_gemm, st.flops, st.bytes_sent_total, st.bytes_sent_max,
                st.wall_s * 1e3, cfg.seed))
            if args.result:
                write_matrix_market(args.result, c)
    finally:
        if ref is not None:
            ref.close()
    _emit(report.csv_text(), cfg.out)
    return 0


def cmd_error_vs_n(cfg, args) -> int:
    if args.input:
        raise ConfigError("error-vs-n generates its matrices; --input is not accepted")
    report = bench.run_error_vs_n(cfg)
    _emit(report.csv_text(), cfg.out)
    _print_slopes(report, "n")
    return 0


def cmd_error_vs_tau(cfg, args) -> int:
    if args.input:
        raise ConfigError("error-vs-tau generates its matrix; --input is not accepted")
    report = bench.run_error_vs_tau(cfg)
    _emit(report.csv_text(), cfg.out)
    _print_slopes(report, "tau")
    return 0


def cmd_matched(cfg, args) -> int:
    a = _load(cfg, args)
    report = bench.run_matched_accuracy(cfg, a)
    _emit(report.csv_text(), cfg.out)
    for m, row in report.selected.items():
        state = "unmet at" if report.unmet[m] else "selected"
        ratio = report.gemm_ratio.get(m)
        extra = "" if ratio is None else f", gemm vs truncmul {100 * ratio:.1f}%"
        print(f"{m}: {state} tau={row.tau:g} error={row.frob_error:.3e}{extra}",
              file=sys.stderr)
    return 0


def cmd_leaf_bench(cfg, args) -> int:
    rows = bench.run_leaf_bench(cfg.n, args.bs_list, args.fill_list, cfg.seed)
    _emit(bench.rows_csv(bench.LEAF_COLUMNS, rows), cfg.out)
    return 0


def cmd_probe(cfg, args) -> int:
    n_list = cfg.n_list or [16384, 32768, 65536, 131072]
    eps_list = args.eps_list or tau_sweep(4, 10)
    report = bench.run_probe(cfg, n_list, args.eps, eps_list, args.n_eps)
    _emit(bench.rows_csv(bench.PROBE_COLUMNS, report.rows), cfg.out)
    for label, fit in (("n", report.slope_n), ("eps", report.slope_eps)):
        text = "undefined" if fit is None else f"{fit[0]:.3f} +/- {fit[1]:.3f}"
        print(f"slope vs {label}: {text}", file=sys.stderr)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "multiply": cmd_multiply,
    "error-vs-n": cmd_error_vs_n,
    "error-vs-tau": cmd_error_vs_tau,
    "matched-accuracy": cmd_matched,
    "leaf-bench": cmd_leaf_bench,
    "lemma1-probe": cmd_probe,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = to_config(args)
        return COMMANDS[args.command](cfg, args)
    except (SpammError, OSError) as exc:
        print(f"spammkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
