"""Command-line front end: run experiments, fit traces, solve games.

Subcommands:

* ``run CONFIG`` — execute a JSON experiment config (see
  ``harness.ExperimentConfig``); per-seed CSV/JSON artifacts land in the
  output directory.
* ``fit TRACES...`` — fit the log-squared and square-root growth models
  to regret CSVs (arguments may be literal paths or glob patterns).
* ``ne-solve GAME`` — solve a matrix game from a JSON file and print
  the equilibrium with its certified gap.
* ``gen-env SPEC`` — sample a Markov environment from a generator spec
  and emit its JSON serialization.

Exit codes: 0 success; 1 usage, config, or parse errors; 2 numerical
non-convergence.
"""

import argparse
import glob
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    EnvironmentInvalid,
    InsufficientData,
    NoConvergence,
    ParseError,
)
from .harness import (
    DEFAULT_BURN_IN,
    ExperimentConfig,
    _validated_environment,
    build_environment,
    fit_regret_models,
    run_experiment,
)
from .markov_game import save_mdp
from .matrix_game import KLMatrixGame, solve_ne

GAME_FILE_KEYS = {"payoff", "beta", "mu_ref", "nu_ref"}


def _read_json_object(path, what):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {what} {path!r}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno,
                         column=exc.colno) from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: expected a JSON object at the top level")
    return raw


def _load_game(path, beta_override):
    """Parse a matrix-game file: payoff plus optional beta/references."""
    raw = _read_json_object(path, "game file")
    for key in raw:
        if key not in GAME_FILE_KEYS:
            raise ParseError(f"{path}: unknown key {key!r}")
    if "payoff" not in raw:
        raise ParseError(f"{path}: missing 'payoff'")
    try:
        payoff = np.asarray(raw["payoff"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: payoff is not a numeric matrix") from exc
    if payoff.ndim != 2 or payoff.size == 0:
        raise ParseError(f"{path}: payoff must be a nonempty matrix, "
                         f"got shape {payoff.shape}")
    beta = raw.get("beta", 1.0) if beta_override is None else beta_override
    m, n = payoff.shape
    mu_ref = raw.get("mu_ref", np.full(m, 1.0 / m))
    nu_ref = raw.get("nu_ref", np.full(n, 1.0 / n))
    return KLMatrixGame(payoff, beta, mu_ref, nu_ref)


def _format_error(exc):
    message = f"error: {exc}"
    if isinstance(exc, ParseError) and exc.line is not None:
        where = f"line {exc.line}"
        if exc.column is not None:
            where += f", column {exc.column}"
        message += f" ({where})"
    return message


def _cmd_run(args):
    config = ExperimentConfig.from_file(args.config)
    raw = config.as_dict()
    if args.seeds is not None:
        raw["seeds"] = args.seeds
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    if args.eval_stride is not None:
        raw["algorithm"]["eval_stride"] = args.eval_stride
    if args.bonus_scale is not None:
        raw["algorithm"]["bonus_scale"] = args.bonus_scale
    config = ExperimentConfig.from_dict(raw)
    report = run_experiment(config)
    for run in report["runs"]:
        if run["error"] is not None:
            print(f"seed {run['seed']}: {run['error']}", file=sys.stderr)
        elif not args.quiet:
            print(f"seed {run['seed']}: {run['rows']} rows -> "
                  f"{report['out_dir']}/{run['files']['csv']}")
    if not args.quiet:
        print(f"{len(report['runs'])} run(s) in {report['out_dir']}")
    return 0 if report["ok"] else 2


def _cmd_fit(args):
    paths = []
    for pattern in args.traces:
        hits = sorted(glob.glob(pattern))
        paths.extend(hits if hits else [pattern])
    report = fit_regret_models(paths, burn_in=args.burn_in)
    if not args.quiet:
        for entry in report.entries:
            print(f"{entry.trace}: preferred={entry.preferred} "
                  f"ssr_log2={entry.ssr_log2:.6g} "
                  f"ssr_sqrt={entry.ssr_sqrt:.6g}")
    print(f"preferred {report.preferred} (mean ssr: "
          f"log2={report.mean_ssr_log2:.6g} "
          f"sqrt={report.mean_ssr_sqrt:.6g}; burn_in={report.burn_in})")
    return 0


def _cmd_ne_solve(args):
    game = _load_game(args.game, args.beta)
    solution = solve_ne(game, tol=args.tol)
    if not args.quiet:
        print("mu " + " ".join(repr(float(x)) for x in solution.mu))
        print("nu " + " ".join(repr(float(x)) for x in solution.nu))
        print(f"value {solution.value!r}")
        print(f"certified_gap {solution.certified_gap!r}")
    if solution.certified_gap <= args.tol:
        return 0
    print(f"error: certified gap {solution.certified_gap!r} exceeds "
          f"--tol {args.tol!r}", file=sys.stderr)
    return 2


def _cmd_gen_env(args):
    raw = _read_json_object(args.spec, "environment spec")
    if "file" in raw:
        raise ConfigInvalid("environment.file",
                            "gen-env samples new instances; it does not "
                            "copy existing files")
    env = _validated_environment("markov", raw)
    mdp = build_environment("markov", env)
    text = save_mdp(mdp)
    if args.out is None:
        print(text)
    else:
        Path(args.out).write_text(text)
        if not args.quiet:
            print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="klgames",
        description="Regret experiments for KL-regularized zero-sum games.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured experiment")
    run_p.add_argument("config", help="path to a JSON experiment config")
    run_p.add_argument("--seed", "--seeds", dest="seeds", type=int,
                       nargs="+", default=None,
                       help="override the config's seed list")
    run_p.add_argument("--out-dir", default=None,
                       help="override the config's output directory")
    run_p.add_argument("--eval-stride", type=int, default=None,
                       help="evaluate diagnostics every k-th round only")
    run_p.add_argument("--bonus-scale", type=float, default=None,
                       help="multiply the exploration bonus width(s)")
    run_p.add_argument("--quiet", action="store_true")

    fit_p = sub.add_parser("fit", help="fit growth models to regret CSVs")
    fit_p.add_argument("traces", nargs="+",
                       help="trace CSV paths or glob patterns")
    fit_p.add_argument("--burn-in", type=int, default=DEFAULT_BURN_IN,
                       help="ignore rounds t <= burn-in")
    fit_p.add_argument("--quiet", action="store_true")

    ne_p = sub.add_parser("ne-solve",
                          help="solve a matrix game with a certified gap")
    ne_p.add_argument("game", help="path to a JSON game file")
    ne_p.add_argument("--beta", type=float, default=None,
                      help="regularization strength (overrides the file)")
    ne_p.add_argument("--tol", type=float, default=1e-8,
                      help="certified duality-gap target")
    ne_p.add_argument("--quiet", action="store_true")

    gen_p = sub.add_parser("gen-env",
                           help="sample and serialize a Markov environment")
    gen_p.add_argument("spec", help="path to a JSON environment spec")
    gen_p.add_argument("--out", default=None,
                       help="output file (default: stdout)")
    gen_p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    commands = {"run": _cmd_run, "fit": _cmd_fit, "ne-solve": _cmd_ne_solve,
                "gen-env": _cmd_gen_env}
    try:
        return commands[args.command](args)
    except NoConvergence as exc:
        print(_format_error(exc), file=sys.stderr)
        return 2
    except (ConfigInvalid, EnvironmentInvalid, InsufficientData, ParseError,
            DimensionMismatch, ValueError, OSError) as exc:
        print(_format_error(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
