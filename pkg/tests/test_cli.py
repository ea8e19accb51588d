import json

import numpy as np
import pytest

from winit import cli
from winit import explainers as ex
from winit import render
from winit import seqdata as sd
from winit import seqmodels as sm
from winit.config import load_config

SMALL = [
    "dataset.num_train=30", "dataset.num_test=6", "dataset.num_steps=20",
    "predictor.epochs=2", "predictor.hidden_size=6",
    "generator_joint.epochs=1", "generator_joint.hidden_size=4",
    "generator_per_feature.epochs=1", "generator_per_feature.hidden_size=4",
    "seeds=[7]",
]


def winit(*args, overrides=(), preset=None):
    argv = list(args)
    if preset:
        argv += ["--preset", preset]
    for ov in [*SMALL, *overrides]:
        argv += ["--override", ov]
    return cli.run(argv)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A delayed-spike run through explain for FIT, IFIT, WinIT-N1 and WinIT-N8."""
    out = tmp_path_factory.mktemp("run")
    assert winit("simulate", "--out", str(out), preset="delayed-spike") == 0
    assert winit("train", "--out", str(out), preset="delayed-spike") == 0
    for method, window in [("FIT", 1), ("IFIT", 1), ("WinIT", 1), ("WinIT", 8)]:
        assert winit("explain", "--out", str(out), "--method", method, "--window", str(window),
                     preset="delayed-spike") == 0
    return out


class TestSimulate:
    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert winit("simulate", "--out", str(tmp_path / name), preset="spike") == 0
        for f in ("train.jsonl", "test.jsonl", "manifest.json"):
            assert (tmp_path / "a/seed-7" / f).read_bytes() == (tmp_path / "b/seed-7" / f).read_bytes()

    def test_manifest_records_delay(self, trained):
        manifest = json.loads((trained / "seed-7/manifest.json").read_text())
        assert manifest["label_delay"] == 2
        assert manifest["master_seed"] == 0 and len(manifest["config_hash"]) == 16

    def test_invalid_delay(self, tmp_path, capsys):
        code = winit("simulate", "--out", str(tmp_path), overrides=["dataset.label_delay=20"])
        assert code == 1
        assert "label_delay" in capsys.readouterr().err

    def test_zero_seeds(self, tmp_path, capsys):
        assert winit("evaluate", "--out", str(tmp_path), overrides=["seeds=[]"]) == 1
        assert "seeds" in capsys.readouterr().err


class TestTrain:
    def test_missing_dataset(self, tmp_path, capsys):
        assert winit("train", "--out", str(tmp_path)) == 1
        assert str(tmp_path / "seed-7") in capsys.readouterr().err

    def test_report_and_checkpoints(self, trained):
        report = json.loads((trained / "seed-7/train-report.json").read_text())
        assert 0.0 <= report["predictor"]["final_valid_accuracy"] <= 1.0
        g = sm.load_model(trained / "seed-7/generator-joint.ckpt", "generator")
        assert g.mode == "joint"

    def test_artifacts_embed_provenance(self, trained):
        d = trained / "seed-7"
        config_hash = json.loads((d / "manifest.json").read_text())["config_hash"]
        assert sd.read_dataset(d / "test.jsonl").metadata["config_hash"] == config_hash
        assert config_hash.encode() in (d / "predictor.ckpt").read_bytes()
        _, header = ex.read_importance(d / "importance-FIT.tsv", 3, 20)
        assert header["config_hash"] and str(header["master_seed"]) == "0"


class TestExplain:
    def test_one_record_per_test_sample(self, trained):
        test = sd.read_dataset(trained / "seed-7/test.jsonl")
        results, _ = ex.read_importance(trained / "seed-7/importance-WinIT-N8.tsv", 3, 20)
        assert [r.sample_id for r in results] == test.ids()
        assert all(r.aggregated.shape == (3, 20) for r in results)

    def test_ifit_equals_winit_one(self, trained):
        a, _ = ex.read_importance(trained / "seed-7/importance-IFIT.tsv", 3, 20)
        b, _ = ex.read_importance(trained / "seed-7/importance-WinIT-N1.tsv", 3, 20)
        for x, y in zip(a, b):
            assert np.array_equal(x.aggregated, y.aggregated)

    def test_unknown_method(self, trained, capsys):
        assert winit("explain", "--out", str(trained), "--method", "SHAP") == 1
        err = capsys.readouterr().err
        assert all(m in err for m in ex.METHODS)

    def test_fit_needs_generator(self, tmp_path, capsys):
        assert winit("simulate", "--out", str(tmp_path)) == 0
        assert winit("train", "--out", str(tmp_path), "--role", "predictor") == 0
        assert winit("explain", "--out", str(tmp_path), "--method", "FIT") == 1
        assert "generator-joint.ckpt" in capsys.readouterr().err

    def test_stale_models_rejected(self, trained, capsys):
        changed = ["predictor.epochs=3"]
        assert winit("explain", "--out", str(trained), "--method", "FO", overrides=changed, preset="delayed-spike") == 1
        assert "--force" in capsys.readouterr().err
        assert winit("explain", "--out", str(trained), "--method", "FO", "--force", overrides=changed,
                     preset="delayed-spike") == 0


class TestEvaluate:
    def test_reports(self, trained, capsys):
        methods = ['methods=[{"name": "FIT"}, {"name": "WinIT", "window": 8}]']
        assert winit("evaluate", "--out", str(trained), overrides=methods, preset="delayed-spike") == 0
        summary = capsys.readouterr().out
        assert "FIT" in summary and "±" in summary
        ranking = json.loads((trained / "report-ranking.json").read_text())
        assert [r["method"] for r in ranking["rows"]] == ["FIT", "WinIT-N8"]
        drops = json.loads((trained / "report-drop.json").read_text())
        fit_rows = [r["spec"] for r in drops["rows"] if r["method"] == "FIT"]
        assert fit_rows == ["top50", "top5pct"]

    def test_missing_importance(self, tmp_path, capsys):
        assert winit("simulate", "--out", str(tmp_path)) == 0
        assert winit("evaluate", "--out", str(tmp_path)) == 1
        assert "importance" in capsys.readouterr().err


class TestRender:
    METHODS = ['methods=[{"name": "FIT"}, {"name": "WinIT", "window": 8}]']

    def _render(self, out, sample_id):
        return winit("render", "--out", str(out), "--sample-id", sample_id, overrides=self.METHODS,
                     preset="delayed-spike")

    def test_four_panels_and_determinism(self, trained):
        sid = sd.read_dataset(trained / "seed-7/test.jsonl").ids()[0]
        assert self._render(trained, sid) == 0
        files = sorted((trained / "seed-7/render").iterdir())
        first = {p.name: p.read_bytes() for p in files}
        svg = first[f"saliency-{sid}.svg"].decode()
        for title in ("data", "labels + ground truth", "FIT importance", "WinIT-N8 importance"):
            assert f">{title}<" in svg
        assert "config_hash=" in svg
        assert self._render(trained, sid) == 0
        assert {p.name: p.read_bytes() for p in files} == first
        assert first[f"saliency-{sid}.ppm"].startswith(b"P6\n# ")

    def test_unknown_sample(self, trained, capsys):
        assert self._render(trained, "no-such-sample") == 1
        assert "no-such-sample" in capsys.readouterr().err

    def test_without_ground_truth(self):
        s = sd.TimeSeriesSample("x", np.zeros((2, 5)), np.zeros(5, dtype=int))
        svg = render.render_svg(s, {"FIT": np.ones((2, 5))})
        assert "ground truth" in svg and "omitted" in svg
        assert ">labels + ground truth<" not in svg


class TestConfig:
    def test_print_round_trip(self, capsys, tmp_path):
        assert winit("config", preset="delayed-spike") == 0
        path = tmp_path / "c.json"
        path.write_text(capsys.readouterr().out)
        cfg = load_config(path)
        assert cfg.dataset.label_delay == 2 and cfg.seeds == [7]

    def test_flag_beats_override(self, capsys):
        assert cli.run(["config", "--override", "seeds=[1,2]", "--seed", "4"]) == 0
        assert json.loads(capsys.readouterr().out)["seeds"] == [4]

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
        assert winit("simulate") == 0
        made = list(tmp_path.iterdir())
        assert len(made) == 1 and (made[0] / "seed-7/manifest.json").exists()

    def test_bad_override(self, capsys):
        assert cli.run(["config", "--override", "dataset.nope=1"]) == 1
        assert "dataset.nope" in capsys.readouterr().err


def test_rerun_is_byte_identical(tmp_path):
    methods = ['methods=[{"name": "FIT"}, {"name": "WinIT", "window": 3}]']
    for name in ("a", "b"):
        assert winit("bench", "--out", str(tmp_path / name), overrides=methods) == 0
    a = {p.relative_to(tmp_path / "a"): p for p in (tmp_path / "a").rglob("*") if p.is_file()}
    b = {p.relative_to(tmp_path / "b"): p for p in (tmp_path / "b").rglob("*") if p.is_file()}
    assert a.keys() == b.keys()
    # wall-clock timings are the one non-reproducible artifact
    for rel, path in a.items():
        if rel.name not in ("timing.json", "report-runtime.json"):
            assert path.read_bytes() == b[rel].read_bytes(), rel
