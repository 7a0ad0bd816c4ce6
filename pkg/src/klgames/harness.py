"""Experiment orchestration: configs, seeded runs, trace files, fits.

This module turns a declarative experiment description into artifacts on
disk and back again:

* ``ExperimentConfig`` — a validated, fully-defaulted description of one
  experiment (which learner, which environment, which knobs, which
  seeds).  Configs are plain JSON objects; unknown keys are hard errors
  so typos cannot silently fall back to defaults.
* ``run_experiment`` — builds the environment, runs the selected
  learner once per seed, and writes one regret CSV plus one summary
  JSON (and optionally a small SVG chart) per seed.  Seeds are fully
  isolated: each run gets a fresh environment instance and its own
  generator, so permuting the seed list permutes files without changing
  any file's contents.
* ``fit_regret_models`` — reads regret CSVs back and fits the two
  growth models that matter here, ``a*log(t)**2 + c`` (label
  ``"log2"``) and ``b*sqrt(t) + c`` (label ``"sqrt"``), by ordinary
  least squares past a burn-in, preferring the model with the smaller
  mean residual.

The CSV schema is frozen (see ``traces.CSV_COLUMNS``): a mandatory
header row, LF line endings, ``.`` decimal separator, and floats
written with full round-trip precision.
"""

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import (
    ConfigInvalid,
    EnvironmentInvalid,
    InsufficientData,
    NoConvergence,
    ParseError,
)
from .markov_game import load_mdp, make_latent_mdp, make_tabular_mdp
from .markov_learner import run_markov_learner
from .matrix_learner import (
    make_random_oracle,
    make_tabular_oracle,
    run_matrix_learner,
)
from .traces import CSV_COLUMNS

MODES = ("matrix", "markov", "ne-solve", "fit")
MODEL_LABELS = ("log2", "sqrt")
DEFAULT_BURN_IN = 100
MAX_SEED = 2**64 - 1

# Desk-scale presets: any environment or algorithm key left out of a
# config falls back to these (per mode, per environment kind).
MATRIX_ENV_PRESET = {
    "kind": "random",
    "num_max_actions": 8,
    "num_min_actions": 8,
    "feature_dim": 5,
    "sigma": 0.1,
    "payoff_scale": 1.0,
    "seed": 0,
}
MARKOV_ENV_PRESET = {
    "kind": "tabular",
    "horizon": 3,
    "num_states": 3,
    "num_max_actions": 2,
    "num_min_actions": 2,
    "seed": 0,
}
MATRIX_ALGO_DEFAULTS = {
    "beta": 1.0,
    "num_rounds": 50_000,
    "delta": 0.1,
    "lam": 1.0,
    "bonus_scale": 1.0,
    "eval_stride": 1,
    "ne_tol": 1e-8,
    "max_iters": 100_000,
}
MARKOV_ALGO_DEFAULTS = {
    "beta": 1.0,
    "num_rounds": 20_000,
    "delta": 0.1,
    "lam": 1.0,
    "scale_mse": 1.0,
    "scale_opt": 1.0,
    "bonus_scale": 1.0,
    "eval_stride": 1,
    "ne_tol": 1e-8,
    "max_iters": 100_000,
}
NE_SOLVE_ALGO_DEFAULTS = {"beta": 1.0, "ne_tol": 1e-8}
FIT_ALGO_DEFAULTS = {"burn_in": DEFAULT_BURN_IN}


# ---------------------------------------------------------------------------
# config validation


def _require_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigInvalid(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown_keys(section, allowed, path):
    for key in section:
        if key not in allowed:
            dotted = f"{path}.{key}" if path else str(key)
            raise ConfigInvalid(dotted, "unknown key")


def _as_int(value, path, minimum, maximum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigInvalid(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigInvalid(path, f"must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigInvalid(path, f"must be <= {maximum}, got {value}")
    return int(value)


def _as_float(value, path, minimum=None, exclusive=False, below_one=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(path, f"expected a number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigInvalid(path, f"must be finite, got {value}")
    if minimum is not None:
        if exclusive and value <= minimum:
            raise ConfigInvalid(path, f"must be > {minimum}, got {value}")
        if not exclusive and value < minimum:
            raise ConfigInvalid(path, f"must be >= {minimum}, got {value}")
    if below_one and value >= 1.0:
        raise ConfigInvalid(path, f"must be < 1, got {value}")
    return value


def _as_optional_seed(value, path):
    if value is None:
        return None
    return _as_int(value, path, 0, MAX_SEED)


def _validated_payoff(value, path):
    try:
        payoff = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigInvalid(path, "expected a rectangular matrix of numbers")
    if payoff.ndim != 2 or payoff.size == 0:
        raise ConfigInvalid(path, f"expected a nonempty matrix, got shape "
                                   f"{payoff.shape}")
    if not np.all(np.isfinite(payoff)):
        raise ConfigInvalid(path, "matrix has non-finite entries")
    return [[float(x) for x in row] for row in payoff]


def _validated_environment(mode, env):
    path = "environment"
    if mode == "fit":
        if env:
            raise ConfigInvalid(path, "fit mode takes trace files, not an "
                                      "environment")
        return {}
    if env is None:
        env = {}
    _require_mapping(env, path)

    if "file" in env:
        if mode != "markov" and mode != "ne-solve":
            raise ConfigInvalid(f"{path}.file",
                                "only markov environments and ne-solve games "
                                "load from files")
        _reject_unknown_keys(env, {"file"}, path)
        name = env["file"]
        if not isinstance(name, str) or not name:
            raise ConfigInvalid(f"{path}.file", "expected a nonempty path")
        return {"file": name}

    if mode == "ne-solve":
        raise ConfigInvalid(path, "ne-solve needs a game file reference")

    preset = MATRIX_ENV_PRESET if mode == "matrix" else MARKOV_ENV_PRESET
    kind = env.get("kind", preset["kind"])
    if mode == "matrix":
        if kind == "random":
            full = {**MATRIX_ENV_PRESET, **env}
            _reject_unknown_keys(full, set(MATRIX_ENV_PRESET), path)
            return {
                "kind": "random",
                "num_max_actions": _as_int(full["num_max_actions"],
                                           f"{path}.num_max_actions", 1),
                "num_min_actions": _as_int(full["num_min_actions"],
                                           f"{path}.num_min_actions", 1),
                "feature_dim": _as_int(full["feature_dim"],
                                       f"{path}.feature_dim", 1),
                "sigma": _as_float(full["sigma"], f"{path}.sigma", 0.0),
                "payoff_scale": _as_float(full["payoff_scale"],
                                          f"{path}.payoff_scale", 0.0,
                                          exclusive=True),
                "seed": _as_optional_seed(full["seed"], f"{path}.seed"),
            }
        if kind == "tabular":
            full = {"kind": "tabular", "sigma": 0.0, "seed": None, **env}
            _reject_unknown_keys(full, {"kind", "payoff", "sigma", "seed"},
                                 path)
            if "payoff" not in full:
                raise ConfigInvalid(f"{path}.payoff",
                                    "tabular matrix environments need an "
                                    "explicit payoff matrix")
            return {
                "kind": "tabular",
                "payoff": _validated_payoff(full["payoff"], f"{path}.payoff"),
                "sigma": _as_float(full["sigma"], f"{path}.sigma", 0.0),
                "seed": _as_optional_seed(full["seed"], f"{path}.seed"),
            }
        raise ConfigInvalid(f"{path}.kind",
                            f"matrix kinds are 'random' or 'tabular', "
                            f"got {kind!r}")

    if kind not in ("tabular", "latent"):
        raise ConfigInvalid(f"{path}.kind",
                            f"markov kinds are 'tabular' or 'latent', "
                            f"got {kind!r}")
    defaults = dict(MARKOV_ENV_PRESET)
    defaults["kind"] = kind
    if kind == "latent":
        defaults["latent_dim"] = 5
    full = {**defaults, **env}
    _reject_unknown_keys(full, set(defaults), path)
    out = {
        "kind": kind,
        "horizon": _as_int(full["horizon"], f"{path}.horizon", 1),
        "num_states": _as_int(full["num_states"], f"{path}.num_states", 1),
        "num_max_actions": _as_int(full["num_max_actions"],
                                   f"{path}.num_max_actions", 1),
        "num_min_actions": _as_int(full["num_min_actions"],
                                   f"{path}.num_min_actions", 1),
        "seed": _as_optional_seed(full["seed"], f"{path}.seed"),
    }
    if kind == "latent":
        out["latent_dim"] = _as_int(full["latent_dim"],
                                    f"{path}.latent_dim", 1)
    return out


def _validated_algorithm(mode, algo):
    path = "algorithm"
    if algo is None:
        algo = {}
    _require_mapping(algo, path)
    if mode == "fit":
        full = {**FIT_ALGO_DEFAULTS, **algo}
        _reject_unknown_keys(full, set(FIT_ALGO_DEFAULTS), path)
        return {"burn_in": _as_int(full["burn_in"], f"{path}.burn_in", 0)}
    if mode == "ne-solve":
        full = {**NE_SOLVE_ALGO_DEFAULTS, **algo}
        _reject_unknown_keys(full, set(NE_SOLVE_ALGO_DEFAULTS), path)
        return {
            "beta": _as_float(full["beta"], f"{path}.beta", 0.0),
            "ne_tol": _as_float(full["ne_tol"], f"{path}.ne_tol", 0.0,
                                exclusive=True),
        }
    defaults = MATRIX_ALGO_DEFAULTS if mode == "matrix" \
        else MARKOV_ALGO_DEFAULTS
    full = {**defaults, **algo}
    _reject_unknown_keys(full, set(defaults), path)
    out = {
        "beta": _as_float(full["beta"], f"{path}.beta", 0.0),
        "num_rounds": _as_int(full["num_rounds"], f"{path}.num_rounds", 1),
        "delta": _as_float(full["delta"], f"{path}.delta", 0.0,
                           exclusive=True, below_one=True),
        "lam": _as_float(full["lam"], f"{path}.lam", 0.0, exclusive=True),
        "bonus_scale": _as_float(full["bonus_scale"], f"{path}.bonus_scale",
                                 0.0),
        "eval_stride": _as_int(full["eval_stride"], f"{path}.eval_stride", 1),
        "ne_tol": _as_float(full["ne_tol"], f"{path}.ne_tol", 0.0,
                            exclusive=True),
        "max_iters": _as_int(full["max_iters"], f"{path}.max_iters", 1),
    }
    if mode == "markov":
        out["scale_mse"] = _as_float(full["scale_mse"], f"{path}.scale_mse",
                                     0.0)
        out["scale_opt"] = _as_float(full["scale_opt"], f"{path}.scale_opt",
                                     0.0)
    return out


def _validated_seeds(seeds):
    if seeds is None:
        return [0]
    if not isinstance(seeds, list) or not seeds:
        raise ConfigInvalid("seeds", "expected a nonempty list of integers")
    out = []
    for index, seed in enumerate(seeds):
        out.append(_as_int(seed, f"seeds[{index}]", 0, MAX_SEED))
    if len(set(out)) != len(out):
        raise ConfigInvalid("seeds", "duplicate seeds would overwrite each "
                                     "other's output files")
    return out


@dataclass
class ExperimentConfig:
    """A validated experiment description.

    Build instances through ``from_dict``/``from_json``/``from_file``;
    those fill in every documented default and reject unknown keys and
    out-of-range values with ``ConfigInvalid`` naming the offending
    entry by its dotted path.
    """

    mode: str
    environment: dict
    algorithm: dict
    seeds: list
    out_dir: str
    emit_svg: bool

    @classmethod
    def from_dict(cls, raw):
        _require_mapping(raw, "config")
        _reject_unknown_keys(
            raw, {"mode", "environment", "algorithm", "seeds", "out_dir",
                  "emit_svg"}, "")
        if "mode" not in raw:
            raise ConfigInvalid("mode", "required")
        mode = raw["mode"]
        if mode not in MODES:
            raise ConfigInvalid("mode", f"expected one of {MODES}, "
                                        f"got {mode!r}")
        out_dir = raw.get("out_dir", "runs")
        if not isinstance(out_dir, str) or not out_dir:
            raise ConfigInvalid("out_dir", "expected a nonempty path")
        emit_svg = raw.get("emit_svg", False)
        if not isinstance(emit_svg, bool):
            raise ConfigInvalid("emit_svg", f"expected true or false, "
                                            f"got {emit_svg!r}")
        return cls(
            mode=mode,
            environment=_validated_environment(mode, raw.get("environment")),
            algorithm=_validated_algorithm(mode, raw.get("algorithm")),
            seeds=_validated_seeds(raw.get("seeds")),
            out_dir=out_dir,
            emit_svg=emit_svg,
        )

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc.msg}",
                             line=exc.lineno, column=exc.colno) from exc
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path):
        return cls.from_json(Path(path).read_text())

    def as_dict(self):
        """A JSON-ready echo of the fully-defaulted config."""
        return {
            "mode": self.mode,
            "environment": json.loads(json.dumps(self.environment)),
            "algorithm": dict(self.algorithm),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "emit_svg": self.emit_svg,
        }


# ---------------------------------------------------------------------------
# environments


def build_environment(mode, env):
    """Turn a validated environment section into a live instance.

    Returns a payoff oracle for matrix mode and a ``LinearMDP`` for
    markov mode.  Each call builds a fresh instance, so runs never share
    mutable state.
    """
    if mode == "matrix":
        if env["kind"] == "random":
            return make_random_oracle(env["num_max_actions"],
                                      env["num_min_actions"],
                                      env["feature_dim"],
                                      sigma=env["sigma"],
                                      payoff_scale=env["payoff_scale"],
                                      seed=env["seed"])
        return make_tabular_oracle(np.asarray(env["payoff"], dtype=float),
                                   sigma=env["sigma"], seed=env["seed"])
    if mode == "markov":
        if "file" in env:
            try:
                text = Path(env["file"]).read_text()
            except OSError as exc:
                raise EnvironmentInvalid(
                    f"cannot read environment file {env['file']!r}: {exc}"
                ) from exc
            try:
                return load_mdp(text)
            except (ParseError, ValueError) as exc:
                raise EnvironmentInvalid(
                    f"environment file {env['file']!r} is invalid: {exc}"
                ) from exc
        if env["kind"] == "tabular":
            return make_tabular_mdp(env["horizon"], env["num_states"],
                                    env["num_max_actions"],
                                    env["num_min_actions"], seed=env["seed"])
        return make_latent_mdp(env["horizon"], env["num_states"],
                               env["num_max_actions"],
                               env["num_min_actions"],
                               latent_dim=env["latent_dim"],
                               seed=env["seed"])
    raise ConfigInvalid("mode", f"no environment to build for mode {mode!r}")


# ---------------------------------------------------------------------------
# trace persistence


def write_trace_csv(trace, path):
    """Write a regret trace with the frozen schema.

    Mandatory header, LF line endings, ``.`` decimal separator, floats
    at full round-trip precision — identical inputs produce
    byte-identical files.
    """
    columns = trace.as_columns()
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for k in range(len(columns["t"])):
            writer.writerow([
                str(columns["t"][k]),
                repr(float(columns["instant_gap"][k])),
                repr(float(columns["cumulative_regret"][k])),
                str(columns["optimism_violation_flag"][k]),
                repr(float(columns["max_bonus"][k])),
                str(columns["ne_solver_iters"][k]),
            ])


def read_trace_csv(path):
    """Parse a regret CSV back into typed column lists.

    Raises ``ParseError`` (with the 1-based line number) when the header
    or any row does not match the frozen schema.
    """
    columns = {name: [] for name in CSV_COLUMNS}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise ParseError(f"{path}: expected header "
                             f"{','.join(CSV_COLUMNS)}, got {header}", line=1)
        for number, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"{path}: expected {len(CSV_COLUMNS)} "
                                 f"fields, got {len(row)}", line=number)
            try:
                columns["t"].append(int(row[0]))
                columns["instant_gap"].append(float(row[1]))
                columns["cumulative_regret"].append(float(row[2]))
                columns["optimism_violation_flag"].append(int(row[3]))
                columns["max_bonus"].append(float(row[4]))
                columns["ne_solver_iters"].append(int(row[5]))
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=number) from exc
    return columns


# ---------------------------------------------------------------------------
# chart emission


def render_regret_svg(trace, title="cumulative regret"):
    """A dependency-free SVG line chart: cumulative regret vs log-t.

    Long traces are thinned to at most 1000 polyline points; the curve's
    shape at chart resolution is unaffected.
    """
    if len(trace) == 0:
        raise ValueError("cannot chart an empty trace")
    width, height = 640, 400
    left, right, top, bottom = 64, 16, 34, 46
    xs = np.log10(np.asarray(trace.rounds, dtype=float))
    ys = np.asarray(trace.cumulative, dtype=float)
    if len(xs) > 1000:
        keep = np.unique(np.linspace(0, len(xs) - 1, 1000).astype(int))
        xs, ys = xs[keep], ys[keep]
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    y_lo, y_hi = min(0.0, float(ys.min())), float(ys.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * (width - left - right)

    def py(y):
        return top + (y_hi - y) / (y_hi - y_lo) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{escape(title)}</text>',
    ]
    decades = range(int(np.ceil(x_lo)), int(np.floor(x_hi)) + 1)
    x_ticks = [(float(k), f"1e{k}") for k in decades] or \
        [(x_lo, f"{10.0 ** x_lo:.3g}"), (x_hi, f"{10.0 ** x_hi:.3g}")]
    for x, label in x_ticks:
        parts.append(f'<line x1="{px(x):.1f}" y1="{top}" x2="{px(x):.1f}" '
                     f'y2="{height - bottom}" stroke="#dddddd"/>')
        parts.append(f'<text x="{px(x):.1f}" y="{height - bottom + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{label}</text>')
    for y in np.linspace(y_lo, y_hi, 5):
        parts.append(f'<line x1="{left}" y1="{py(y):.1f}" '
                     f'x2="{width - right}" y2="{py(y):.1f}" '
                     f'stroke="#dddddd"/>')
        parts.append(f'<text x="{left - 6}" y="{py(y) + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{y:.4g}</text>')
    parts.append(f'<line x1="{left}" y1="{height - bottom}" '
                 f'x2="{width - right}" y2="{height - bottom}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" '
                 f'y2="{height - bottom}" stroke="black"/>')
    points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{points}" fill="none" '
                 f'stroke="#2b6cb0" stroke-width="1.5"/>')
    parts.append(f'<text x="{(left + width - right) / 2:.1f}" '
                 f'y="{height - 8}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">round '
                 f'(log scale)</text>')
    parts.append(f'<text x="14" y="{(top + height - bottom) / 2:.1f}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12" transform="rotate(-90 14 '
                 f'{(top + height - bottom) / 2:.1f})">cumulative '
                 f'regret</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# running


def _run_learner(config, environment, seed):
    algo = config.algorithm
    if config.mode == "matrix":
        return run_matrix_learner(
            environment, algo["beta"], algo["num_rounds"], seed=seed,
            lam=algo["lam"], delta=algo["delta"],
            bonus_scale=algo["bonus_scale"], tol=algo["ne_tol"],
            max_iters=algo["max_iters"], eval_stride=algo["eval_stride"])
    return run_markov_learner(
        environment, algo["beta"], algo["num_rounds"], seed=seed,
        lam=algo["lam"], delta=algo["delta"],
        scale_mse=algo["scale_mse"] * algo["bonus_scale"],
        scale_opt=algo["scale_opt"] * algo["bonus_scale"],
        tol=algo["ne_tol"], max_iters=algo["max_iters"],
        eval_stride=algo["eval_stride"])


def _summarize(config, seed, trace, wall_time, error, files):
    columns = trace.as_columns()
    summary = {
        "mode": config.mode,
        "seed": seed,
        "config": config.as_dict(),
        "rows": len(trace),
        "totals": {
            "instant_gap": float(sum(columns["instant_gap"])),
            "optimism_violation_flag":
                int(sum(columns["optimism_violation_flag"])),
            "max_bonus": float(sum(columns["max_bonus"])),
            "ne_solver_iters": int(sum(columns["ne_solver_iters"])),
            "cumulative_regret_final": float(trace.final_regret),
        },
        "rates": {
            "optimism_violation_fraction": float(trace.violation_fraction),
        },
        "extras_totals": {key: int(sum(values))
                          for key, values in trace.extras.items()},
        "wall_time_seconds": wall_time,
        "error": error,
        "files": files,
    }
    return summary


def run_experiment(config):
    """Run the configured learner once per seed and write its artifacts.

    Per seed: ``<mode>_seed<seed>.csv`` (regret trace), a matching
    ``…_summary.json`` (config echo, column totals, diagnostic rates,
    wall time), and optionally ``….svg``.  A solver failure
    (``NoConvergence``) is recorded in that seed's summary — its partial
    trace is still written — and remaining seeds keep running.

    Returns a report dict with per-seed statuses; ``report["ok"]`` is
    True when every seed finished cleanly.
    """
    if config.mode not in ("matrix", "markov"):
        raise ConfigInvalid("mode", f"run_experiment handles 'matrix' and "
                                    f"'markov' configs, got {config.mode!r}")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {"mode": config.mode, "out_dir": str(out_dir), "runs": []}
    for seed in config.seeds:
        environment = build_environment(config.mode, config.environment)
        started = time.perf_counter()
        error = None
        try:
            trace = _run_learner(config, environment, seed)
        except NoConvergence as exc:
            error = f"{type(exc).__name__}: {exc}"
            trace = exc.partial_trace
        wall_time = time.perf_counter() - started
        stem = f"{config.mode}_seed{seed}"
        files = {"csv": f"{stem}.csv", "summary": f"{stem}_summary.json",
                 "svg": None}
        write_trace_csv(trace, out_dir / files["csv"])
        if config.emit_svg and len(trace) >= 2:
            files["svg"] = f"{stem}.svg"
            chart = render_regret_svg(trace, title=stem)
            (out_dir / files["svg"]).write_text(chart)
        summary = _summarize(config, seed, trace, wall_time, error, files)
        (out_dir / files["summary"]).write_text(
            json.dumps(summary, indent=2) + "\n")
        report["runs"].append({
            "seed": seed,
            "rows": len(trace),
            "error": error,
            "wall_time_seconds": wall_time,
            "files": files,
        })
    report["ok"] = all(run["error"] is None for run in report["runs"])
    return report


# ---------------------------------------------------------------------------
# growth-model fitting


@dataclass(frozen=True)
class FitEntry:
    """Per-trace least-squares results for both growth models."""

    trace: str
    coef_log2: tuple
    coef_sqrt: tuple
    ssr_log2: float
    ssr_sqrt: float
    preferred: str


@dataclass(frozen=True)
class FitReport:
    """Aggregated model comparison across traces.

    ``preferred`` is the label with the smaller mean residual sum of
    squares; ties break toward the first label in ``MODEL_LABELS``.
    """

    entries: tuple
    burn_in: int
    mean_ssr_log2: float
    mean_ssr_sqrt: float
    preferred: str


def _least_squares(design, targets):
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    residual = targets - design @ coef
    return coef, float(residual @ residual)


def fit_regret_models(traces, burn_in=DEFAULT_BURN_IN):
    """Fit ``a*log(t)**2 + c`` vs ``b*sqrt(t) + c`` to regret CSVs.

    ``traces`` is a path or list of paths to files written by
    ``write_trace_csv``.  Rows with ``t > burn_in`` enter an ordinary
    least-squares fit per trace (the logarithm is natural; the label
    ``"log2"`` means log-squared); the preferred model minimizes the
    residual sum of squares.  Raises ``InsufficientData`` when no traces
    are given or fewer than 3 rows survive the burn-in.
    """
    if isinstance(traces, (str, Path)):
        traces = [traces]
    paths = [str(p) for p in traces]
    if not paths:
        raise InsufficientData("no trace files provided")
    burn_in = int(burn_in)
    if burn_in < 0:
        raise ValueError(f"burn_in must be >= 0, got {burn_in}")
    entries = []
    for path in paths:
        columns = read_trace_csv(path)
        rounds = np.asarray(columns["t"], dtype=float)
        regret = np.asarray(columns["cumulative_regret"], dtype=float)
        keep = rounds > burn_in
        if int(keep.sum()) < 3:
            raise InsufficientData(
                f"{path}: {int(keep.sum())} rows past burn_in={burn_in}; "
                f"need at least 3")
        t, y = rounds[keep], regret[keep]
        ones = np.ones_like(t)
        coef_log2, ssr_log2 = _least_squares(
            np.column_stack([np.log(t) ** 2, ones]), y)
        coef_sqrt, ssr_sqrt = _least_squares(
            np.column_stack([np.sqrt(t), ones]), y)
        preferred = MODEL_LABELS[0] if ssr_log2 <= ssr_sqrt \
            else MODEL_LABELS[1]
        entries.append(FitEntry(
            trace=path,
            coef_log2=(float(coef_log2[0]), float(coef_log2[1])),
            coef_sqrt=(float(coef_sqrt[0]), float(coef_sqrt[1])),
            ssr_log2=ssr_log2,
            ssr_sqrt=ssr_sqrt,
            preferred=preferred,
        ))
    mean_log2 = float(np.mean([e.ssr_log2 for e in entries]))
    mean_sqrt = float(np.mean([e.ssr_sqrt for e in entries]))
    overall = MODEL_LABELS[0] if mean_log2 <= mean_sqrt else MODEL_LABELS[1]
    return FitReport(entries=tuple(entries), burn_in=burn_in,
                     mean_ssr_log2=mean_log2, mean_ssr_sqrt=mean_sqrt,
                     preferred=overall)
