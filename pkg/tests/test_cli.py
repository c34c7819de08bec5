"""Config parsing, experiment runner outputs, and exit codes."""

import io

import numpy as np
import pytest

from emstack import cli, simnet


TINY = """
[scenario]
cells_per_side = 4
num_layers = 2

[training]
num_samples = 100
epochs = 0
seeds = 7

[model]
nl_mode = linear

[experiment]
ml_coarse = 30
ml_refine = 5
"""


def read_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    header = lines[1].split(",")
    return header, [line.split(",") for line in lines[2:]]


class TestConfig:
    def test_defaults_load(self):
        cfg = cli.load_config("")
        assert cfg["scenario"]["cells_per_side"] == 8
        assert cfg["model"]["nl_mode"] == "trainable"
        assert cfg["training"]["seeds"] == [101, 202, 303]
        assert len(cfg.hash_id) == 12

    def test_hash_stable_and_sensitive(self):
        a = cli.load_config("")
        b = cli.load_config("[scenario]\ncells_per_side = 8\n")
        c = cli.load_config("[scenario]\ncells_per_side = 6\n")
        d = cli.load_config("", overrides={"experiment.seed": 9})
        assert a.hash_id == b.hash_id
        assert a.hash_id != c.hash_id
        assert a.hash_id != d.hash_id

    def test_unknown_section_rejected(self):
        with pytest.raises(cli.ConfigError, match="section"):
            cli.load_config("[rocket]\nthrust = 1\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(cli.ConfigError, match="bogus"):
            cli.load_config("[model]\nbogus = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(cli.ConfigError, match="cells_per_side"):
            cli.load_config("[scenario]\ncells_per_side = eight\n")

    def test_unknown_override_rejected(self):
        with pytest.raises(cli.ConfigError, match="override"):
            cli.load_config("", overrides={"model.nope": 1})

    def test_semantic_validation(self):
        bad = [
            "[model]\nnl_mode = quantum\n",
            "[model]\nnl_layer_index = 9\n",
            "[scenario]\nr_min_m = 5\n",
            "[model]\nactivation = diode-table\n",  # trainable default clashes
            "[model]\ntable_points = 100\n",
            "[curves]\nbias_shift_volts = -0.1\n",
            "[experiment]\nsweep = sideways\n",
        ]
        for text in bad:
            with pytest.raises(cli.ConfigError):
                cli.load_config(text)

    def test_presets_parse(self):
        for name in ("desk", "desk-placement", "desk-depth", "paper"):
            cfg = cli.load_config(cli.load_preset(name))
            assert cfg["scenario"]["carrier_frequency_hz"] == 28e9
        with pytest.raises(cli.ConfigError, match="preset"):
            cli.load_preset("missing")

    def test_canonical_text_covers_schema(self):
        cfg = cli.load_config("")
        for section, keys in cli._SCHEMA.items():
            assert f"[{section}]" in cfg.text
            for key in keys:
                assert f"{key} = " in cfg.text


class TestRunVerb:
    def test_zero_epoch_linear_run(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(TINY)
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 0
        cfg = cli.load_config(TINY)
        out = tmp_path / "out" / cfg.hash_id
        header, rows = read_rows(out / "results.csv")
        assert header == ["sweep", "point", "variant", "seed", "test_rmse_m"]
        # one seed row, one mean row, one matched-filter row
        assert [r[2] for r in rows] == ["linear", "linear", "ml"]
        rmse = float(rows[0][4])
        assert np.isfinite(rmse) and rmse > 0
        assert float(rows[1][4]) == rmse  # mean of one seed
        # per-sample records cover the 10-element test split
        _, recs = read_rows(out / "records.csv")
        assert len(recs) == 10
        assert (out / "config.ini").read_text() == cfg.text

    def test_checkpoint_reloads(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(TINY)
        cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        cfg = cli.load_config(TINY)
        ckpt = next((tmp_path / "out" / cfg.hash_id / "models").glob("*.json"))
        model, extra = simnet.load_checkpoint(ckpt)
        assert model.num_layers == 2
        assert extra["seed"] == 7
        assert np.isfinite(extra["test_rmse_m"])

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(TINY)
        for sub in ("a", "b"):
            cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / sub)])
        cfg = cli.load_config(TINY)
        for name in ("results.csv", "records.csv"):
            one = (tmp_path / "a" / cfg.hash_id / name).read_bytes()
            two = (tmp_path / "b" / cfg.hash_id / name).read_bytes()
            assert one == two

    def test_seed_override_changes_directory(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(TINY)
        out = tmp_path / "out"
        cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
        cli.main(["run", "--config", str(cfg_path), "--out", str(out), "--seed", "9"])
        assert len(list(out.iterdir())) == 2

    def test_placement_sweep_rows(self, tmp_path):
        text = TINY.replace("nl_mode = linear", "nl_mode = trainable") + (
            "\nsweep = nl-layer-index\n"
        )
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(text)
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 0
        cfg = cli.load_config(text)
        _, rows = read_rows(tmp_path / "out" / cfg.hash_id / "results.csv")
        # 2 positions x (1 seed + 1 mean)
        assert len(rows) == 4
        assert [r[1] for r in rows] == ["1", "1", "2", "2"]
        assert (tmp_path / "out" / cfg.hash_id / "results.svg").exists()

    def test_depth_sweep_rows(self, tmp_path):
        text = TINY.replace("nl_mode = linear", "nl_mode = trainable") + (
            "\nsweep = depth-L\ndepth_values = 1, 2\n"
        )
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(text)
        assert cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 0
        cfg = cli.load_config(text)
        _, rows = read_rows(tmp_path / "out" / cfg.hash_id / "results.csv")
        # per depth: 3 variants x (1 seed + 1 mean) + 1 matched-filter row
        assert len(rows) == 2 * (3 * 2 + 1)
        variants = {r[2] for r in rows}
        assert variants == {"trainable", "static-random", "linear", "ml"}
        # the frozen-bias run must differ from the trainable one only
        # through training, so both exist for every depth
        for depth in ("1", "2"):
            assert sum(1 for r in rows if r[1] == depth) == 7


class TestCurvesVerb:
    def test_two_alpha_curve_export(self, tmp_path):
        text = "[curves]\nalphas = 20, 40\nsamples = 50\n"
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(text)
        assert cli.main(["curves", "--config", str(cfg_path), "--out", str(tmp_path / "out")]) == 0
        cfg = cli.load_config(text)
        out = tmp_path / "out" / cfg.hash_id
        header, rows = read_rows(out / "curves.csv")
        assert header == ["amplitude", "C_alpha_20", "C_alpha_40"]
        assert len(rows) == 50
        # monotone nonnegative envelope
        col = np.array([float(r[1]) for r in rows])
        assert col[-1] > 0 and np.all(np.diff(col) >= -1e-12)
        _, fits = read_rows(out / "relu_fits.csv")
        assert [r[0] for r in fits] == ["20.0", "40.0"]
        assert (out / "curves.svg").exists()

    def test_bias_shift_moves_knee(self, tmp_path):
        knees = {}
        for shift in ("0.0", "0.4"):
            text = f"[curves]\nalphas = 33\nbias_shift_volts = {shift}\nsamples = 20\n"
            cfg = cli.load_config(text)
            out = cli.export_curves(cfg, tmp_path / shift)
            _, fits = read_rows(out / "relu_fits.csv")
            knees[shift] = float(fits[0][2])
        assert knees["0.4"] > knees["0.0"] + 0.3

    def test_empty_alpha_list_rejected(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text("[curves]\nalphas =\n")
        code = cli.main(["curves", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert code == 1


class TestCheckVerb:
    def test_all_checks_pass(self):
        buf = io.StringIO()
        assert cli.self_check(seed=0, stream=buf)
        lines = buf.getvalue().strip().splitlines()
        assert len(lines) == 6
        assert all(line.startswith("PASS") for line in lines)

    def test_exit_code(self):
        assert cli.main(["check"]) == 0


class TestMlBaselineVerb:
    def test_records_and_summary(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text(TINY)
        assert cli.main(
            ["ml-baseline", "--config", str(cfg_path), "--out", str(tmp_path / "out")]
        ) == 0
        cfg = cli.load_config(TINY)
        out = tmp_path / "out" / cfg.hash_id
        header, recs = read_rows(out / "ml_records.csv")
        assert header == ["r", "theta", "r_hat", "theta_hat", "error_m"]
        assert len(recs) == 10
        _, summary = read_rows(out / "ml_summary.csv")
        rmse = float(summary[0][1])
        errors = np.array([float(r[4]) for r in recs])
        np.testing.assert_allclose(rmse, np.sqrt(np.mean(errors ** 2)), rtol=1e-12)


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.ini")]) == 1

    def test_unknown_key(self, tmp_path):
        cfg_path = tmp_path / "cfg.ini"
        cfg_path.write_text("[model]\nwarp_drive = on\n")
        assert cli.main(["run", "--config", str(cfg_path)]) == 1

    def test_unknown_preset(self):
        assert cli.main(["run", "--preset", "galactic"]) == 1
