"""CLI tests: curve files, synth, config parsing, sweeps, report formats."""

import csv
import json
import os

import numpy as np
import pytest

from dataplan.cli import (
    ConfigError,
    DuplicateSize,
    ExperimentConfig,
    IncompleteGrid,
    NonMonotoneGenerator,
    ParseError,
    build_config,
    load_config,
    load_curve_file,
    main,
    parse_config_text,
    prepare_experiment,
    run_experiment,
    synth_curve,
)
from dataplan.curves import UNREACHABLE
from dataplan.simulator import (
    GroundTruthCurve1D,
    GroundTruthSurface2D,
    eval_ground_truth_1d,
    eval_ground_truth_2d,
)


def write(path, text):
    path.write_text(text)
    return str(path)


def sqrt_curve(tmp_path, name="sqrt.csv"):
    """Ten log-spaced knots of score = sqrt(size) on [1, 10000]."""
    return synth_curve(
        "power-law", (1.0, 0.5, 0.0), 10, (1.0, 10000.0), str(tmp_path / name)
    )


def config_text(curve, outdir, **overrides):
    base = {
        "curve_file": str(curve),
        "output_dir": str(outdir),
        "policies": "regression-point",
        "targets": "40, 60",
        "horizons": "1",
        "costs": "1",
        "penalties": "1000",
        "seeds": "0, 1",
    }
    base.update(overrides)
    return "\n".join(f"{k} = {v}" for k, v in base.items() if v is not None) + "\n"


GRID_3X3 = "size1,size2,score\n" + "\n".join(
    f"{x},{y},{x + 2 * y}" for x in (10, 20, 30) for y in (10, 20, 30)
)


class TestLoadCurveFile:
    def test_parses_two_knot_file(self, tmp_path):
        curve = load_curve_file(write(tmp_path / "c.csv", "size,score\n10,50\n20,70"))
        assert isinstance(curve, GroundTruthCurve1D)
        assert len(curve.knots) == 2
        assert eval_ground_truth_1d(curve, 10.0) == 50.0
        assert eval_ground_truth_1d(curve, 15.0) == 60.0

    def test_rows_sorted_on_load(self, tmp_path):
        shuffled = load_curve_file(
            write(tmp_path / "s.csv", "size,score\n20,70\n5,30\n10,50")
        )
        assert [k[0] for k in shuffled.knots] == [5.0, 10.0, 20.0]
        assert eval_ground_truth_1d(shuffled, 15.0) == 60.0

    def test_duplicate_size_names_line(self, tmp_path):
        path = write(tmp_path / "d.csv", "size,score\n10,50\n20,70\n10,55")
        with pytest.raises(DuplicateSize, match="line 4"):
            load_curve_file(path)

    def test_bad_number_names_line(self, tmp_path):
        with pytest.raises(ParseError, match="line 3"):
            load_curve_file(write(tmp_path / "b.csv", "size,score\n10,50\nten,60"))

    def test_wrong_field_count(self, tmp_path):
        with pytest.raises(ParseError, match="line 2.*expected 2"):
            load_curve_file(write(tmp_path / "w.csv", "size,score\n10,50,3"))

    def test_unrecognized_header(self, tmp_path):
        with pytest.raises(ParseError, match="line 1"):
            load_curve_file(write(tmp_path / "h.csv", "foo,bar\n1,2"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError, match="no data"):
            load_curve_file(write(tmp_path / "e.csv", "\n\n"))

    def test_header_only(self, tmp_path):
        with pytest.raises(ParseError, match="no knots"):
            load_curve_file(write(tmp_path / "o.csv", "size,score\n"))

    def test_comments_and_blanks_skipped(self, tmp_path):
        text = "# comment\nsize,score\n\n10,50\n# mid comment\n20,70\n"
        curve = load_curve_file(write(tmp_path / "k.csv", text))
        assert len(curve.knots) == 2

    def test_decreasing_scores_rejected(self, tmp_path):
        with pytest.raises(ParseError, match="curve rejected"):
            load_curve_file(write(tmp_path / "r.csv", "size,score\n10,50\n20,40"))

    def test_complete_grid_loads(self, tmp_path):
        surface = load_curve_file(write(tmp_path / "g.csv", GRID_3X3))
        assert isinstance(surface, GroundTruthSurface2D)
        assert surface.grid_x.shape == (3,) and surface.grid_y.shape == (3,)
        assert eval_ground_truth_2d(surface, 20.0, 30.0) == pytest.approx(80.0)

    def test_grid_rows_any_order(self, tmp_path):
        lines = GRID_3X3.split("\n")
        scrambled = "\n".join([lines[0]] + lines[1:][::-1])
        surface = load_curve_file(write(tmp_path / "g2.csv", scrambled))
        assert eval_ground_truth_2d(surface, 10.0, 10.0) == pytest.approx(30.0)

    def test_missing_grid_point_listed(self, tmp_path):
        kept = "\n".join(
            line
            for line in GRID_3X3.split("\n")
            if not line.startswith("20,30")
        )
        with pytest.raises(IncompleteGrid, match=r"\(20, 30\)"):
            load_curve_file(write(tmp_path / "m.csv", kept))

    def test_duplicate_grid_pair(self, tmp_path):
        with pytest.raises(DuplicateSize, match="duplicate size pair"):
            load_curve_file(write(tmp_path / "dp.csv", GRID_3X3 + "\n10,10,99"))

    def test_negative_grid_size_rejected(self, tmp_path):
        text = "size1,size2,score\n-1,10,5\n-1,20,6\n2,10,7\n2,20,8"
        with pytest.raises(ParseError, match="negative size"):
            load_curve_file(write(tmp_path / "n.csv", text))


class TestSynthCurve:
    def test_power_law_identity(self, tmp_path):
        curve = load_curve_file(sqrt_curve(tmp_path))
        sizes = np.array([k[0] for k in curve.knots])
        scores = np.array([k[1] for k in curve.knots])
        assert sizes.shape == (10,)
        assert sizes[0] == 1.0 and sizes[-1] == pytest.approx(10000.0, rel=1e-12)
        np.testing.assert_allclose(scores, np.sqrt(sizes), rtol=1e-9)

    def test_round_trip_knot_evaluation(self, tmp_path):
        curve = load_curve_file(sqrt_curve(tmp_path))
        size = curve.knots[3][0]
        assert eval_ground_truth_1d(curve, size) == pytest.approx(
            np.sqrt(size), rel=1e-9
        )

    def test_decreasing_logarithmic_rejected(self, tmp_path):
        with pytest.raises(NonMonotoneGenerator, match="decreases"):
            synth_curve(
                "logarithmic", (-2.0, 1.0, 0.0), 10, (1.0, 100.0), str(tmp_path / "x")
            )

    def test_undefined_logarithm_rejected(self, tmp_path):
        with pytest.raises(NonMonotoneGenerator, match="undefined"):
            synth_curve(
                "logarithmic", (1.0, -5.0, 0.0), 10, (1.0, 100.0), str(tmp_path / "x")
            )

    def test_negative_start_rejected(self, tmp_path):
        with pytest.raises(NonMonotoneGenerator, match="below zero"):
            synth_curve(
                "power-law", (1.0, 0.5, -10.0), 10, (1.0, 100.0), str(tmp_path / "x")
            )

    def test_argument_validation(self, tmp_path):
        out = str(tmp_path / "x")
        with pytest.raises(ConfigError, match="kind"):
            synth_curve("cubic", (1, 1, 0), 10, (1, 100), out)
        with pytest.raises(ConfigError, match="theta"):
            synth_curve("power-law", (1, 1), 10, (1, 100), out)
        with pytest.raises(ConfigError, match="q_range"):
            synth_curve("power-law", (1, 1, 0), 10, (100, 1), out)
        with pytest.raises(ConfigError, match="knot_count"):
            synth_curve("power-law", (1, 1, 0), 1, (1, 100), out)


class TestConfigParsing:
    def test_minimal_config(self, tmp_path):
        cfg = build_config(parse_config_text(config_text("c.csv", "out")))
        assert isinstance(cfg, ExperimentConfig)
        assert cfg.policies == ("regression-point",)
        assert cfg.targets == (40.0, 60.0)
        assert cfg.horizons == (1,)
        assert cfg.cost_vectors == ((1.0,),)
        assert cfg.penalties == (1000.0,)
        assert cfg.seeds == (0, 1)
        assert cfg.trim_percentile == 99.0
        assert cfg.workers == 1
        assert cfg.loc_resamples == 500

    def test_comments_blanks_and_spacing(self):
        entries = parse_config_text(
            "# header\n  targets = 1, 2  # inline\n\nseeds=0\n"
        )
        assert entries == {"targets": "1, 2", "seeds": "0"}

    def test_malformed_lines(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("not an assignment")
        with pytest.raises(ConfigError, match="empty key"):
            parse_config_text("= 3")
        with pytest.raises(ConfigError, match="no value"):
            parse_config_text("targets =")
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text("a = 1\na = 2")

    def test_unknown_and_missing_keys(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config key.*tragets"):
            build_config(parse_config_text(config_text("c", "o", tragets="5")))
        with pytest.raises(ConfigError, match="must set 'seeds'"):
            build_config(parse_config_text(config_text("c", "o", seeds=None)))

    def test_target_trio_sweep(self, tmp_path):
        cfg = build_config(
            parse_config_text(
                config_text(
                    "c", "o",
                    targets=None, targets_min="10", targets_max="20", targets_step="5",
                )
            )
        )
        assert cfg.targets == (10.0, 15.0, 20.0)

    def test_target_forms_are_exclusive(self):
        with pytest.raises(ConfigError, match="not both"):
            build_config(parse_config_text(config_text("c", "o", targets_min="1",
                                                       targets_max="2", targets_step="1")))
        with pytest.raises(ConfigError, match="together"):
            build_config(parse_config_text(config_text("c", "o", targets=None,
                                                       targets_min="1")))
        with pytest.raises(ConfigError, match="targets"):
            build_config(parse_config_text(config_text("c", "o", targets=None)))

    def test_cost_vector_syntax(self):
        cfg = build_config(parse_config_text(config_text("c", "o", costs="1; 2.5")))
        assert cfg.cost_vectors == ((1.0,), (2.5,))
        cfg = build_config(parse_config_text(config_text("c", "o", costs="1,2; 3,4")))
        assert cfg.cost_vectors == ((1.0, 2.0), (3.0, 4.0))
        with pytest.raises(ConfigError, match="disagree"):
            build_config(parse_config_text(config_text("c", "o", costs="1; 2,3")))
        with pytest.raises(ConfigError, match="positive"):
            build_config(parse_config_text(config_text("c", "o", costs="0")))

    def test_scalar_validation(self):
        for key, value, message in [
            ("workers", "0", "workers"),
            ("trim_percentile", "101", "trim_percentile"),
            ("penalties", "-5", "penalties"),
            ("horizons", "0", "horizons"),
            ("horizons", "1.5", "integers"),
            ("noise_sigma", "-1", "noise_sigma"),
            ("subsample_count", "0", "subsample_count"),
        ]:
            with pytest.raises(ConfigError, match=message):
                build_config(parse_config_text(config_text("c", "o", **{key: value})))

    def test_policy_validation(self):
        with pytest.raises(ConfigError, match="unknown policy"):
            build_config(parse_config_text(config_text("c", "o", policies="magic")))
        with pytest.raises(ConfigError, match="repeats"):
            build_config(parse_config_text(
                config_text("c", "o", policies="loc, loc")))
        with pytest.raises(ConfigError, match="corrected.tau"):
            build_config(parse_config_text(
                config_text("c", "o", policies="regression-corrected")))


class TestPrepareExperiment:
    def test_default_q0_is_tenth_of_largest_size(self, tmp_path):
        text = config_text(sqrt_curve(tmp_path), tmp_path / "out")
        oracle, q0, policies = prepare_experiment(
            build_config(parse_config_text(text))
        )
        assert q0 == pytest.approx((1000.0,), rel=1e-12)
        assert set(policies) == {"regression-point"}

    def test_declared_sources_must_match_curve(self, tmp_path):
        text = config_text(sqrt_curve(tmp_path), tmp_path / "out", sources="2")
        with pytest.raises(ConfigError, match="sources = 2"):
            prepare_experiment(build_config(parse_config_text(text)))

    def test_cost_vector_length_must_match_curve(self, tmp_path):
        text = config_text(sqrt_curve(tmp_path), tmp_path / "out", costs="1,2")
        with pytest.raises(ConfigError, match="2 entries"):
            prepare_experiment(build_config(parse_config_text(text)))

    def test_single_source_family_rejected_on_grid(self, tmp_path):
        grid = write(tmp_path / "g.csv", GRID_3X3)
        text = config_text(grid, tmp_path / "out", costs="1,1", family="power-law")
        with pytest.raises(ConfigError, match="models 1 source"):
            prepare_experiment(build_config(parse_config_text(text)))

    def test_grid_q0_defaults_and_bounds(self, tmp_path):
        grid = write(tmp_path / "g.csv", GRID_3X3)
        text = config_text(grid, tmp_path / "out", costs="1,1")
        _, q0, _ = prepare_experiment(build_config(parse_config_text(text)))
        # 10% of the max size falls below the grid floor, so the floor wins
        assert q0 == (10.0, 10.0)
        bad = config_text(grid, tmp_path / "out", costs="1,1", q0="5, 10")
        with pytest.raises(ConfigError, match="outside"):
            prepare_experiment(build_config(parse_config_text(bad)))

    def test_censor_policy_validated(self, tmp_path):
        text = config_text(
            sqrt_curve(tmp_path), tmp_path / "out", **{"loc.censor_policy": "discard"}
        )
        with pytest.raises(ConfigError, match="censor_policy"):
            prepare_experiment(build_config(parse_config_text(text)))

    def test_missing_curve_file_is_io_error(self, tmp_path):
        text = config_text(tmp_path / "absent.csv", tmp_path / "out")
        with pytest.raises(OSError):
            prepare_experiment(build_config(parse_config_text(text)))


def run_config(tmp_path, text, name="cfg.txt"):
    path = write(tmp_path / name, text)
    return run_experiment(load_config(path))


def read_records(paths):
    with open(paths["records"], newline="") as handle:
        return list(csv.DictReader(handle))


class TestRunExperiment:
    def test_target_below_start_scores_succeed_for_free(self, tmp_path):
        text = config_text(
            sqrt_curve(tmp_path), tmp_path / "out", targets="5", seeds="0, 1, 2"
        )
        paths = run_config(tmp_path, text)
        rows = read_records(paths)
        assert len(rows) == 3
        for row in rows:
            assert row["met_target"] == "true"
            assert float(row["q_final"]) == float(row["q0"])
            assert float(row["total_paid"]) == 0.0
            assert float(row["cost_ratio"]) == 0.0
        summary = json.load(open(paths["summary"]))
        assert summary["aggregates"][0]["failure_rate"] == 0.0
        assert summary["aggregates"][0]["cost_ratio"] == 0.0

    def test_identical_configs_are_byte_identical(self, tmp_path):
        curve = sqrt_curve(tmp_path)
        first = run_config(
            tmp_path, config_text(curve, tmp_path / "a"), name="a.txt"
        )
        second = run_config(
            tmp_path, config_text(curve, tmp_path / "b"), name="b.txt"
        )
        a = open(first["records"], "rb").read()
        b = open(second["records"], "rb").read()
        assert a == b and len(a) > 0

    def test_worker_count_does_not_change_records(self, tmp_path, monkeypatch):
        curve = sqrt_curve(tmp_path)
        serial = run_config(
            tmp_path, config_text(curve, tmp_path / "serial"), name="s.txt"
        )
        monkeypatch.setenv("DATAPLAN_WORKERS", "3")
        pooled = run_config(
            tmp_path, config_text(curve, tmp_path / "pooled", workers="2"),
            name="p.txt",
        )
        assert (
            open(serial["records"], "rb").read()
            == open(pooled["records"], "rb").read()
        )

    def test_cost_ratio_recomputes_from_row_fields(self, tmp_path):
        text = config_text(
            sqrt_curve(tmp_path),
            tmp_path / "out",
            policies="regression-point, regression-corrected",
            **{"corrected.tau": "2"},
            horizons="1, 3",
        )
        rows = read_records(run_config(tmp_path, text))
        assert len(rows) == 16
        checked = 0
        for row in rows:
            if row["cost_ratio"] == "" or row["d_star"] == "unreachable":
                continue
            spent = float(row["cost"]) * (float(row["q_final"]) - float(row["q0"]))
            needed = float(row["cost"]) * (
                max(float(row["d_star"]), float(row["q0"])) - float(row["q0"])
            )
            expected = spent / needed - 1.0 if needed > 0 else 0.0
            assert float(row["cost_ratio"]) == pytest.approx(expected, abs=1e-9)
            checked += 1
        assert checked > 0

    def test_unreachable_target_recorded(self, tmp_path):
        text = config_text(
            sqrt_curve(tmp_path), tmp_path / "out", targets="150", seeds="0"
        )
        rows = read_records(run_config(tmp_path, text))
        assert rows[0]["d_star"] == "unreachable"
        assert rows[0]["met_target"] == "false"
        assert rows[0]["cost_ratio"] == "" and rows[0]["points_ratio"] == ""

    def test_summary_echo_replays_byte_identically(self, tmp_path):
        curve = sqrt_curve(tmp_path)
        paths = run_config(tmp_path, config_text(curve, tmp_path / "out"))
        summary = json.load(open(paths["summary"]))
        assert summary["source_count"] == 1
        assert summary["cells"] == 4
        echo = summary["config"]
        replay_text = "\n".join(f"{k} = {v}" for k, v in echo.items())
        replay_text = replay_text.replace(str(tmp_path / "out"), str(tmp_path / "replay"))
        replayed = run_config(tmp_path, replay_text, name="replay.txt")
        assert (
            open(paths["records"], "rb").read()
            == open(replayed["records"], "rb").read()
        )

    def test_aggregates_per_policy_and_horizon(self, tmp_path):
        text = config_text(
            sqrt_curve(tmp_path),
            tmp_path / "out",
            policies="regression-point, regression-corrected",
            **{"corrected.tau": "2"},
            horizons="1, 2",
            targets="40",
        )
        paths = run_config(tmp_path, text)
        with open(paths["aggregates"], newline="") as handle:
            rows = list(csv.DictReader(handle))
        keys = [(r["policy"], r["horizon"]) for r in rows]
        assert keys == [
            ("regression-point", "1"),
            ("regression-point", "2"),
            ("regression-corrected", "1"),
            ("regression-corrected", "2"),
        ]
        for row in rows:
            assert row["runs"] == "2"
            met = 2 - int(round(float(row["failure_rate"]) * 2))
            assert row["successes"] == str(met)

    def test_two_source_sweep_writes_per_source_columns(self, tmp_path):
        grid = write(tmp_path / "g.csv", GRID_3X3)
        text = config_text(
            grid, tmp_path / "out", costs="1,1", targets="80", seeds="0",
            policies="regression-point",
        )
        rows = read_records(run_config(tmp_path, text))
        row = rows[0]
        for column in ("cost_1", "cost_2", "q0_1", "q0_2", "q_final_1",
                       "q_final_2", "d_star_1", "d_star_2"):
            assert column in row
        assert row["points_ratio"] == ""

    def test_loc_policy_runs_through_cli(self, tmp_path):
        text = config_text(
            sqrt_curve(tmp_path),
            tmp_path / "out",
            policies="loc",
            targets="40",
            horizons="2",
            seeds="0",
            penalties="100000",
            **{"loc.resamples": "40"},
        )
        rows = read_records(run_config(tmp_path, text))
        assert rows[0]["policy"] == "loc"
        assert float(rows[0]["q_final"]) >= 1000.0
        assert rows[0]["met_target"] in {"true", "false"}


class TestMainEntryPoint:
    def test_run_and_validate_exit_zero(self, tmp_path, capsys):
        path = write(
            tmp_path / "cfg.txt",
            config_text(sqrt_curve(tmp_path), tmp_path / "out", targets="5",
                        seeds="0"),
        )
        assert main(["validate", path]) == 0
        assert "ok:" in capsys.readouterr().out
        assert main(["run", path]) == 0
        out = capsys.readouterr().out
        assert "records" in out and os.path.exists(tmp_path / "out" / "summary.json")

    def test_config_errors_exit_two(self, tmp_path, capsys):
        path = write(tmp_path / "bad.txt", "nonsense")
        assert main(["run", path]) == 2
        assert "error" in capsys.readouterr().err
        path = write(
            tmp_path / "unknown.txt",
            config_text(sqrt_curve(tmp_path), tmp_path / "o", bogus_key="1"),
        )
        assert main(["validate", path]) == 2

    def test_curve_parse_errors_exit_two(self, tmp_path):
        bad_curve = write(tmp_path / "bad.csv", "size,score\n10,50\n10,60")
        path = write(tmp_path / "cfg.txt", config_text(bad_curve, tmp_path / "o"))
        assert main(["run", path]) == 2

    def test_missing_files_exit_three(self, tmp_path):
        assert main(["run", str(tmp_path / "absent.txt")]) == 3
        path = write(
            tmp_path / "cfg.txt",
            config_text(tmp_path / "absent.csv", tmp_path / "o"),
        )
        assert main(["run", path]) == 3

    def test_synth_subcommand(self, tmp_path, capsys):
        out = str(tmp_path / "log.csv")
        rc = main(["synth", "--kind", "logarithmic", "--theta", "10,1,0",
                   "--knots", "12", "--range", "1,5000", "--out", out])
        assert rc == 0
        curve = load_curve_file(out)
        assert len(curve.knots) == 12
        assert main(["synth", "--kind", "logarithmic", "--theta=-1,1,0",
                     "--out", out]) == 2
        assert "error" in capsys.readouterr().err

    def test_synth_io_error_exits_three(self, tmp_path):
        rc = main(["synth", "--kind", "power-law", "--theta", "1,0.5,0",
                   "--out", str(tmp_path / "no_dir" / "x.csv")])
        assert rc == 3
