import filecmp
import json
import os

import numpy as np
import pytest

from urbanvit.cli import main
from urbanvit.config import load_config, parse_set_value, stage_seed
from urbanvit.evaluate import EvalReport
from urbanvit.scatter import emit_scatter, fit_line
from urbanvit.synth import SynthSpec, generate


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    d = str(tmp_path_factory.mktemp("bundle"))
    generate(SynthSpec(n_cities=1, districts_per_city=6, blocks_per_district=9, seed=13), d)
    return d


def run_cli(*args):
    return main(list(args))


class TestConfig:
    def test_valid_config(self, bundle):
        cfg, errors = load_config(os.path.join(bundle, "pipeline.toml"))
        assert errors == []
        assert cfg.seed == 13
        assert cfg.eval["k"] == 5

    def test_errors_collected_all_at_once(self, tmp_path):
        cfg_path = tmp_path / "bad.toml"
        cfg_path.write_text(
            'seed = -1\nn_comp = 99\n[inputs]\ndistricts = "missing.geojson"\n'
            '[regressor]\nfamily = "forest"\n'
        )
        cfg, errors = load_config(str(cfg_path))
        assert len(errors) >= 4  # seed, n_comp, family, missing files

    def test_set_override(self, bundle):
        cfg, errors = load_config(
            os.path.join(bundle, "pipeline.toml"),
            overrides=["eval.repeats=3", "regressor.family=\"ols\""],
        )
        assert errors == []
        assert cfg.eval["repeats"] == 3
        assert cfg.regressor["family"] == "ols"

    def test_parse_set_values(self):
        assert parse_set_value("3") == 3
        assert parse_set_value("3.5") == 3.5
        assert parse_set_value("true") is True
        assert parse_set_value('"abc"') == "abc"
        assert parse_set_value('["a", "b"]') == ["a", "b"]
        assert parse_set_value("plainstring") == "plainstring"

    def test_stage_seed_distinct_substreams(self):
        a = stage_seed(7, "eval")
        b = stage_seed(7, "poi")
        c = stage_seed(8, "eval")
        assert len({a, b, c}) == 3
        assert a == stage_seed(7, "eval")

    def test_validate_command(self, bundle, capsys):
        assert run_cli("validate", "--config", os.path.join(bundle, "pipeline.toml")) == 0
        assert run_cli("validate", "--config", "/nonexistent.toml") == 2


class TestStages:
    def test_eval_without_train_exits_2(self, bundle, tmp_path):
        out = str(tmp_path / "out")
        rc = run_cli(
            "run", "--config", os.path.join(bundle, "pipeline.toml"),
            "--stage", "eval", "--out", out,
        )
        assert rc == 2

    def test_tile_then_features(self, bundle, tmp_path):
        out = str(tmp_path / "out")
        cfg = os.path.join(bundle, "pipeline.toml")
        assert run_cli("run", "--config", cfg, "--stage", "tile", "--out", out) == 0
        assert os.path.exists(os.path.join(out, "assignments.csv"))
        header = open(os.path.join(out, "assignments.csv")).readline().strip()
        assert header == "imagelet_id,city,row,col,district_id,overlap_m2"
        assert run_cli(
            "run", "--config", cfg, "--stage", "features", "--out", out, "--set", "n_comp=4"
        ) == 0
        assert os.path.exists(os.path.join(out, "district_features.csv"))

    def test_stage_noop_on_rerun(self, bundle, tmp_path):
        out = str(tmp_path / "out")
        cfg = os.path.join(bundle, "pipeline.toml")
        assert run_cli("run", "--config", cfg, "--stage", "tile", "--out", out) == 0
        m1 = os.path.getmtime(os.path.join(out, "imagelets.npy"))
        assert run_cli("run", "--config", cfg, "--stage", "tile", "--out", out) == 0
        m2 = os.path.getmtime(os.path.join(out, "imagelets.npy"))
        assert m1 == m2  # artifact untouched on the second run

    def test_config_change_invalidates_stage(self, bundle, tmp_path):
        out = str(tmp_path / "out")
        cfg = os.path.join(bundle, "pipeline.toml")
        assert run_cli("run", "--config", cfg, "--stage", "tile", "--out", out) == 0
        assert run_cli("run", "--config", cfg, "--stage", "features", "--out", out,
                       "--set", "n_comp=4") == 0
        path = os.path.join(out, "district_features.csv")
        cols4 = open(path).readline().count("mu_")
        assert run_cli("run", "--config", cfg, "--stage", "features", "--out", out,
                       "--set", "n_comp=6") == 0
        cols6 = open(path).readline().count("mu_")
        assert (cols4, cols6) == (4, 6)


class TestFullPipelineDeterminism:
    def test_byte_identical_artifact_trees(self, bundle, tmp_path):
        cfg = os.path.join(bundle, "pipeline.toml")
        out_a = str(tmp_path / "a")
        out_b = str(tmp_path / "b")
        common = ["--set", "eval.repeats=2", "--set", "n_comp=6"]
        assert run_cli("run", "--config", cfg, "--stage", "all", "--out", out_a, *common) == 0
        assert run_cli("run", "--config", cfg, "--stage", "all", "--out", out_b, *common) == 0
        files_a = sorted(
            os.path.relpath(os.path.join(r, f), out_a)
            for r, _, fs in os.walk(out_a)
            for f in fs
            if f != ".lock"
        )
        files_b = sorted(
            os.path.relpath(os.path.join(r, f), out_b)
            for r, _, fs in os.walk(out_b)
            for f in fs
            if f != ".lock"
        )
        assert files_a == files_b
        for f in files_a:
            assert filecmp.cmp(
                os.path.join(out_a, f), os.path.join(out_b, f), shallow=False
            ), f

    def test_artifact_tree_contents(self, bundle, tmp_path):
        out = str(tmp_path / "full")
        cfg = os.path.join(bundle, "pipeline.toml")
        rc = run_cli(
            "run", "--config", cfg, "--stage", "all", "--out", out,
            "--set", "eval.repeats=2", "--set", "n_comp=6",
        )
        assert rc == 0
        for name in (
            "assignments.csv",
            "district_features.csv",
            "proxies.csv",
            "model.json",
            "eval_report.json",
            "residuals.geojson",
            "residuals.csv",
            "scatter.svg",
            "two_stage_report.json",
            "poi_scores.csv",
            "poi_analysis.json",
            "manifest.json",
        ):
            assert os.path.exists(os.path.join(out, name)), name
        rep = json.load(open(os.path.join(out, "eval_report.json")))
        assert rep["n_folds"] + rep["n_failed_folds"] == 10
        gj = json.load(open(os.path.join(out, "residuals.geojson")))
        assert gj["type"] == "FeatureCollection"


class TestSynthCommand:
    def test_synth_cli(self, tmp_path):
        out = str(tmp_path / "s")
        spec = tmp_path / "spec.toml"
        spec.write_text(
            "[synth]\nn_cities = 1\ndistricts_per_city = 4\nseed = 3\nnoise_std = 0.0\n"
        )
        assert run_cli("synth", "--spec", str(spec), "--out", out) == 0
        assert os.path.exists(os.path.join(out, "pipeline.toml"))

    def test_synth_bad_spec(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text("[synth]\nnot_a_field = 1\n")
        assert run_cli("synth", "--spec", str(spec), "--out", str(tmp_path / "x")) == 2


class TestScatter:
    def _report(self, true, pred):
        rep = EvalReport(family="ols", target="activity_density", m=2)
        rep.district_ids = [f"d{i}" for i in range(len(true))]
        rep.y_true_raw = list(map(float, true))
        rep.y_pred_raw = list(map(float, pred))
        return rep

    def test_two_point_line(self, tmp_path):
        rep = self._report([1.0, 2.0], [1.5, 2.5])
        path = str(tmp_path / "s.svg")
        emit_scatter(rep, path)
        a, b = fit_line(rep)
        assert b == pytest.approx(1.0) and a == pytest.approx(0.5)
        svg = open(path).read()
        assert svg.startswith("<svg") and "circle" in svg

    def test_perfect_predictions_identity_line(self, tmp_path):
        y = np.linspace(1, 5, 10)
        rep = self._report(y, y)
        a, b = fit_line(rep)
        assert abs(b - 1.0) < 1e-9 and abs(a) < 1e-9
        emit_scatter(rep, str(tmp_path / "p.svg"))

    def test_byte_identical_rendering(self, tmp_path):
        rng = np.random.default_rng(5)
        y = rng.uniform(1, 3, 20)
        p = y + rng.normal(0, 0.2, 20)
        rep = self._report(y, p)
        emit_scatter(rep, str(tmp_path / "a.svg"))
        emit_scatter(rep, str(tmp_path / "b.svg"))
        assert open(tmp_path / "a.svg").read() == open(tmp_path / "b.svg").read()

    def test_single_point_rejected(self, tmp_path):
        from urbanvit.errors import ValidationError

        with pytest.raises(ValidationError):
            emit_scatter(self._report([1.0], [1.0]), str(tmp_path / "x.svg"))

    def test_report_command_rerenders(self, bundle, tmp_path):
        out = str(tmp_path / "out")
        cfg = os.path.join(bundle, "pipeline.toml")
        run_cli("run", "--config", cfg, "--stage", "all", "--out", out,
                "--set", "eval.repeats=2", "--set", "n_comp=6")
        svg2 = str(tmp_path / "again.svg")
        assert run_cli("report", "--report", os.path.join(out, "eval_report.json"),
                       "--out", svg2) == 0
        assert filecmp.cmp(os.path.join(out, "scatter.svg"), svg2, shallow=False)
