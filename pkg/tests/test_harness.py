"""Tests for experiment orchestration, trace files, and model fitting."""

import json
import math
import xml.etree.ElementTree as ElementTree

import numpy as np
import pytest

from klgames.errors import (
    ConfigInvalid,
    EnvironmentInvalid,
    InsufficientData,
    ParseError,
)
from klgames.harness import (
    MODEL_LABELS,
    ExperimentConfig,
    FitReport,
    build_environment,
    fit_regret_models,
    read_trace_csv,
    render_regret_svg,
    run_experiment,
    write_trace_csv,
)
from klgames.markov_game import load_mdp, save_mdp, make_tabular_mdp
from klgames.traces import CSV_COLUMNS, RegretTrace

PAYOFF = [[0.9, 0.2], [0.3, 0.7]]


def matrix_config(tmp_path, **overrides):
    raw = {
        "mode": "matrix",
        "environment": {"kind": "tabular", "payoff": PAYOFF, "sigma": 0.05},
        "algorithm": {"num_rounds": 40},
        "seeds": [0, 1],
        "out_dir": str(tmp_path / "out"),
    }
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


def write_planted_csv(path, rounds, cumulative):
    lines = [",".join(CSV_COLUMNS)]
    for t, y in zip(rounds, cumulative):
        lines.append(f"{t},0.0,{y!r},0,0.0,0")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# configuration


def test_config_fills_documented_defaults():
    config = ExperimentConfig.from_dict({"mode": "matrix"})
    assert config.environment == {"kind": "random", "num_max_actions": 8,
                                  "num_min_actions": 8, "feature_dim": 5,
                                  "sigma": 0.1, "payoff_scale": 1.0,
                                  "seed": 0}
    assert config.algorithm["num_rounds"] == 50_000
    assert config.algorithm["beta"] == 1.0
    assert config.algorithm["eval_stride"] == 1
    assert config.seeds == [0]
    assert config.out_dir == "runs"
    assert config.emit_svg is False

    config = ExperimentConfig.from_dict({"mode": "markov"})
    assert config.environment == {"kind": "tabular", "horizon": 3,
                                  "num_states": 3, "num_max_actions": 2,
                                  "num_min_actions": 2, "seed": 0}
    assert config.algorithm["num_rounds"] == 20_000
    assert config.algorithm["scale_mse"] == 1.0
    assert config.algorithm["scale_opt"] == 1.0


def test_config_echo_round_trips():
    config = ExperimentConfig.from_dict({
        "mode": "markov",
        "environment": {"kind": "latent", "latent_dim": 4, "seed": 7},
        "algorithm": {"beta": 0.5, "num_rounds": 12},
        "seeds": [3, 1],
        "emit_svg": True,
    })
    echo = config.as_dict()
    json.dumps(echo)  # JSON-ready
    assert ExperimentConfig.from_dict(echo).as_dict() == echo
    assert echo["environment"]["latent_dim"] == 4
    assert echo["algorithm"]["beta"] == 0.5


def test_config_rejects_bad_values():
    base = {"mode": "matrix"}
    cases = [
        ({**base, "bogus": 1}, "bogus"),
        ({**base, "algorithm": {"beta": -1.0}}, "algorithm.beta"),
        ({**base, "algorithm": {"typo_knob": 1}}, "algorithm.typo_knob"),
        ({**base, "algorithm": {"num_rounds": 0}}, "algorithm.num_rounds"),
        ({**base, "algorithm": {"num_rounds": 2.5}}, "algorithm.num_rounds"),
        ({**base, "algorithm": {"delta": 1.0}}, "algorithm.delta"),
        ({**base, "algorithm": {"delta": 0.0}}, "algorithm.delta"),
        ({**base, "algorithm": {"lam": 0.0}}, "algorithm.lam"),
        ({**base, "algorithm": {"eval_stride": 0}}, "algorithm.eval_stride"),
        ({**base, "algorithm": {"ne_tol": 0.0}}, "algorithm.ne_tol"),
        ({**base, "environment": {"kind": "dungeon"}}, "environment.kind"),
        ({**base, "environment": {"kind": "tabular"}}, "environment.payoff"),
        ({**base, "environment": {"kind": "tabular",
                                  "payoff": [[1.0], [2.0, 3.0]]}},
         "environment.payoff"),
        ({**base, "environment": {"sigma": -0.1}}, "environment.sigma"),
        ({**base, "environment": {"file": "x.json"}}, "environment.file"),
        ({**base, "seeds": []}, "seeds"),
        ({**base, "seeds": [1, 1]}, "seeds"),
        ({**base, "seeds": [0, -3]}, "seeds[1]"),
        ({**base, "seeds": [True]}, "seeds[0]"),
        ({**base, "seeds": [2**64]}, "seeds[0]"),
        ({**base, "out_dir": ""}, "out_dir"),
        ({**base, "emit_svg": "yes"}, "emit_svg"),
        ({"mode": "snake"}, "mode"),
        ({}, "mode"),
        ({"mode": "markov", "algorithm": {"bonus_scale": -2.0}},
         "algorithm.bonus_scale"),
        ({"mode": "markov", "environment": {"kind": "latent",
                                            "latent_dim": 0}},
         "environment.latent_dim"),
        ({"mode": "fit", "environment": {"kind": "tabular"}}, "environment"),
        ({"mode": "ne-solve"}, "environment"),
    ]
    for raw, field in cases:
        with pytest.raises(ConfigInvalid) as excinfo:
            ExperimentConfig.from_dict(raw)
        assert excinfo.value.field == field, raw


def test_config_invalid_beta_names_the_field():
    with pytest.raises(ConfigInvalid) as excinfo:
        ExperimentConfig.from_dict({"mode": "matrix",
                                    "algorithm": {"beta": -1}})
    assert "beta" in excinfo.value.field


def test_config_from_json_reports_position():
    with pytest.raises(ParseError) as excinfo:
        ExperimentConfig.from_json('{"mode": "matrix",\n  "seeds": [0,]}')
    assert excinfo.value.line == 2
    assert excinfo.value.column is not None


def test_auxiliary_modes_validate_but_do_not_run(tmp_path):
    fit_config = ExperimentConfig.from_dict({"mode": "fit"})
    assert fit_config.algorithm == {"burn_in": 100}
    solve_config = ExperimentConfig.from_dict(
        {"mode": "ne-solve", "environment": {"file": "game.json"}})
    assert solve_config.algorithm == {"beta": 1.0, "ne_tol": 1e-8}
    for config in (fit_config, solve_config):
        with pytest.raises(ConfigInvalid) as excinfo:
            run_experiment(config)
        assert excinfo.value.field == "mode"


# ---------------------------------------------------------------------------
# environments


def test_build_environment_matrix_tabular_is_noiseless_payoff():
    env = {"kind": "tabular", "payoff": PAYOFF, "sigma": 0.0, "seed": None}
    oracle = build_environment("matrix", env)
    assert oracle.query(0, 1) == PAYOFF[0][1]
    assert oracle.query(1, 0) == PAYOFF[1][0]


def test_build_environment_markov_kinds_and_file(tmp_path):
    env = {"kind": "tabular", "horizon": 2, "num_states": 2,
           "num_max_actions": 2, "num_min_actions": 2, "seed": 3}
    mdp = build_environment("markov", env)
    assert (mdp.horizon, mdp.num_states) == (2, 2)

    saved = tmp_path / "env.json"
    saved.write_text(save_mdp(mdp))
    loaded = build_environment("markov", {"file": str(saved)})
    assert np.array_equal(loaded.features, mdp.features)

    with pytest.raises(EnvironmentInvalid):
        build_environment("markov", {"file": str(tmp_path / "absent.json")})
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(EnvironmentInvalid):
        build_environment("markov", {"file": str(broken)})


# ---------------------------------------------------------------------------
# running experiments


def test_run_experiment_writes_csv_and_summary_per_seed(tmp_path):
    config = matrix_config(tmp_path, algorithm={"num_rounds": 100})
    report = run_experiment(config)
    assert report["ok"]
    assert [run["seed"] for run in report["runs"]] == [0, 1]
    for seed in (0, 1):
        csv_path = tmp_path / "out" / f"matrix_seed{seed}.csv"
        columns = read_trace_csv(csv_path)
        assert columns["t"] == list(range(1, 101))
        summary = json.loads(
            (tmp_path / "out" / f"matrix_seed{seed}_summary.json")
            .read_text())
        assert summary["rows"] == 100
        assert summary["seed"] == seed
        assert summary["error"] is None
        assert summary["config"] == config.as_dict()
        assert summary["wall_time_seconds"] > 0.0


def test_rerun_is_byte_identical(tmp_path):
    first = matrix_config(tmp_path, out_dir=str(tmp_path / "a"))
    second = matrix_config(tmp_path, out_dir=str(tmp_path / "b"))
    run_experiment(first)
    run_experiment(second)
    for seed in (0, 1):
        name = f"matrix_seed{seed}.csv"
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()


def test_seed_permutation_leaves_contents_unchanged(tmp_path):
    forward = matrix_config(tmp_path, seeds=[1, 2],
                            out_dir=str(tmp_path / "fwd"))
    backward = matrix_config(tmp_path, seeds=[2, 1],
                             out_dir=str(tmp_path / "bwd"))
    run_experiment(forward)
    run_experiment(backward)
    for seed in (1, 2):
        name = f"matrix_seed{seed}.csv"
        assert (tmp_path / "fwd" / name).read_bytes() == \
               (tmp_path / "bwd" / name).read_bytes()


def test_summary_totals_match_csv_sums(tmp_path):
    config = matrix_config(tmp_path, seeds=[4])
    run_experiment(config)
    columns = read_trace_csv(tmp_path / "out" / "matrix_seed4.csv")
    summary = json.loads(
        (tmp_path / "out" / "matrix_seed4_summary.json").read_text())
    totals = summary["totals"]
    assert abs(totals["instant_gap"] - sum(columns["instant_gap"])) < 1e-9
    assert abs(totals["max_bonus"] - sum(columns["max_bonus"])) < 1e-9
    assert totals["ne_solver_iters"] == sum(columns["ne_solver_iters"])
    assert totals["optimism_violation_flag"] == \
        sum(columns["optimism_violation_flag"])
    assert abs(totals["cumulative_regret_final"]
               - columns["cumulative_regret"][-1]) < 1e-9
    fraction = summary["rates"]["optimism_violation_fraction"]
    assert abs(fraction - np.mean(columns["optimism_violation_flag"])) < 1e-9


def test_run_experiment_markov_mode(tmp_path):
    config = ExperimentConfig.from_dict({
        "mode": "markov",
        "environment": {"kind": "latent", "horizon": 2, "num_states": 2,
                        "latent_dim": 3, "seed": 5},
        "algorithm": {"num_rounds": 25, "beta": 1.0},
        "seeds": [7],
        "out_dir": str(tmp_path / "mk"),
    })
    report = run_experiment(config)
    assert report["ok"]
    columns = read_trace_csv(tmp_path / "mk" / "markov_seed7.csv")
    assert len(columns["t"]) == 25
    summary = json.loads(
        (tmp_path / "mk" / "markov_seed7_summary.json").read_text())
    assert set(summary["extras_totals"]) == {
        "below_mse", "below_current", "below_tilted",
        "below_best_response", "gap_bound"}


def test_solver_failure_is_recorded_without_aborting_other_seeds(tmp_path):
    config = matrix_config(
        tmp_path,
        algorithm={"num_rounds": 10, "ne_tol": 1e-16, "max_iters": 2})
    report = run_experiment(config)
    assert not report["ok"]
    assert len(report["runs"]) == 2
    for seed, run in zip((0, 1), report["runs"]):
        assert "NoConvergence" in run["error"]
        columns = read_trace_csv(tmp_path / "out" / f"matrix_seed{seed}.csv")
        assert 1 <= len(columns["t"]) < 10
        summary = json.loads(
            (tmp_path / "out" / f"matrix_seed{seed}_summary.json")
            .read_text())
        assert "NoConvergence" in summary["error"]


# ---------------------------------------------------------------------------
# trace round trip


def test_csv_round_trip_preserves_every_bit(tmp_path):
    trace = RegretTrace()
    rng = np.random.default_rng(0)
    for t in range(1, 64):
        trace.append(t, float(rng.uniform(0, 0.3)), bool(t % 7 == 0),
                     float(rng.uniform(0, 5)), int(rng.integers(0, 900)))
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    assert read_trace_csv(path) == trace.as_columns()
    # header + one line per row, each terminated by a bare LF
    text = path.read_bytes().decode()
    assert text.count("\n") == 64
    assert "\r" not in text
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_emitted_csv_feeds_the_fitter(tmp_path):
    config = matrix_config(tmp_path, seeds=[0],
                           algorithm={"num_rounds": 120})
    run_experiment(config)
    report = fit_regret_models([str(tmp_path / "out" / "matrix_seed0.csv")],
                               burn_in=20)
    assert isinstance(report, FitReport)
    assert report.entries[0].preferred in MODEL_LABELS


def test_read_trace_csv_rejects_malformed_files(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,wrong_header\n1,2\n")
    with pytest.raises(ParseError) as excinfo:
        read_trace_csv(path)
    assert excinfo.value.line == 1

    header = ",".join(CSV_COLUMNS)
    path.write_text(f"{header}\n1,0.1,0.1,0,1.0\n")
    with pytest.raises(ParseError) as excinfo:
        read_trace_csv(path)
    assert excinfo.value.line == 2

    path.write_text(f"{header}\n1,zap,0.1,0,1.0,3\n")
    with pytest.raises(ParseError) as excinfo:
        read_trace_csv(path)
    assert excinfo.value.line == 2


# ---------------------------------------------------------------------------
# charts


def test_svg_emission(tmp_path):
    config = matrix_config(tmp_path, seeds=[0], emit_svg=True,
                           algorithm={"num_rounds": 50})
    report = run_experiment(config)
    assert report["runs"][0]["files"]["svg"] == "matrix_seed0.svg"
    text = (tmp_path / "out" / "matrix_seed0.svg").read_text()
    root = ElementTree.fromstring(text)
    assert root.tag.endswith("svg")
    polylines = [node for node in root.iter()
                 if node.tag.endswith("polyline")]
    assert len(polylines) == 1
    assert len(polylines[0].attrib["points"].split()) == 50


def test_svg_thins_long_traces_and_rejects_empty():
    trace = RegretTrace()
    for t in range(1, 5001):
        trace.append(t, 1.0 / t, False, 1.0, 0)
    text = render_regret_svg(trace, title="long & thin")
    root = ElementTree.fromstring(text)
    polyline = next(node for node in root.iter()
                    if node.tag.endswith("polyline"))
    assert len(polyline.attrib["points"].split()) <= 1000
    assert "long &amp; thin" in text
    with pytest.raises(ValueError):
        render_regret_svg(RegretTrace())


# ---------------------------------------------------------------------------
# growth-model fitting


def test_fit_prefers_planted_log_squared(tmp_path):
    rounds = list(range(1, 2001))
    cumulative = [0.8 * math.log(t) ** 2 + 3.0 for t in rounds]
    path = tmp_path / "log2.csv"
    write_planted_csv(path, rounds, cumulative)
    report = fit_regret_models([str(path)])
    entry = report.entries[0]
    assert report.preferred == "log2"
    assert entry.preferred == "log2"
    assert entry.ssr_log2 < 1e-18
    assert abs(entry.coef_log2[0] - 0.8) < 1e-9
    assert abs(entry.coef_log2[1] - 3.0) < 1e-9
    assert entry.ssr_sqrt > entry.ssr_log2


def test_fit_prefers_planted_square_root(tmp_path):
    rounds = list(range(1, 2001))
    cumulative = [0.4 * math.sqrt(t) + 1.5 for t in rounds]
    path = tmp_path / "sqrt.csv"
    write_planted_csv(path, rounds, cumulative)
    report = fit_regret_models(str(path))  # single path accepted bare
    entry = report.entries[0]
    assert report.preferred == "sqrt"
    assert entry.ssr_sqrt < 1e-18
    assert abs(entry.coef_sqrt[0] - 0.4) < 1e-9


def test_fit_discriminates_under_noise(tmp_path):
    # Monte-Carlo calibration: 0.5*log(t)^2 plus N(0, 0.01) noise over
    # 10^4 rounds must be labeled log2 in at least 95 of 100 trials.
    rounds = np.arange(1, 10_001)
    signal = 0.5 * np.log(rounds) ** 2
    rng = np.random.default_rng(2026)
    path = tmp_path / "mc.csv"
    hits = 0
    for _ in range(100):
        noisy = signal + rng.normal(0.0, 0.1, size=rounds.size)
        write_planted_csv(path, rounds.tolist(), noisy.tolist())
        report = fit_regret_models([str(path)])
        hits += report.preferred == "log2"
    assert hits >= 95


def test_fit_burn_in_is_strict_and_checked(tmp_path):
    rounds = list(range(1, 104))
    cumulative = [float(t) for t in rounds]
    path = tmp_path / "short.csv"
    write_planted_csv(path, rounds, cumulative)
    # exactly rows 101, 102, 103 survive: enough
    report = fit_regret_models([str(path)], burn_in=100)
    assert report.burn_in == 100
    with pytest.raises(InsufficientData):
        fit_regret_models([str(path)], burn_in=101)
    with pytest.raises(InsufficientData):
        fit_regret_models([])
    with pytest.raises(ValueError):
        fit_regret_models([str(path)], burn_in=-1)


def test_fit_averages_across_traces(tmp_path):
    rounds = list(range(1, 501))
    for name, coef in (("a.csv", 0.3), ("b.csv", 0.5)):
        write_planted_csv(tmp_path / name,
                          rounds, [coef * math.log(t) ** 2 for t in rounds])
    report = fit_regret_models([str(tmp_path / "a.csv"),
                                str(tmp_path / "b.csv")])
    assert len(report.entries) == 2
    assert report.preferred == "log2"
    assert report.mean_ssr_log2 == pytest.approx(
        (report.entries[0].ssr_log2 + report.entries[1].ssr_log2) / 2.0)
