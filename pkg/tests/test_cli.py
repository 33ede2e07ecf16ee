import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from ssmseg.annotate_server import AnnotationState, make_server
from ssmseg.cli import main
from ssmseg.config import PipelineConfig, load_config, save_config
from ssmseg.mesh import (load_class_table, load_labels, load_mesh,
                         save_labels, validate_cohort)


def run_cli(*args):
    return main([str(a) for a in args])


def dir_digest(root):
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


class TestFixtureCommand:
    def test_cohort_is_valid_and_labels_cover_classes(self, tmp_path):
        out = tmp_path / "fx"
        assert run_cli("fixture", "--out", out, "--n-shapes", 3,
                       "--n-vertices", 300, "--seed", 5) == 0
        meshes = [load_mesh(p) for p in sorted(out.glob("*.obj"))]
        assert len(meshes) == 3
        validate_cohort(meshes)
        table = load_class_table(out / "classes.json")
        labels = load_labels(out / "mean_labels.csv", meshes[0].n_vertices, table)
        counts = labels.class_counts()
        assert counts.get(1, 0) > 0 and counts.get(2, 0) > 0
        labeled = counts.get(1, 0) + counts.get(2, 0)
        assert labeled < 0.5 * meshes[0].n_vertices

    def test_byte_identical_given_seed(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli("fixture", "--out", a, "--n-shapes", 2, "--n-vertices", 150,
                "--seed", 3)
        run_cli("fixture", "--out", b, "--n-shapes", 2, "--n-vertices", 150,
                "--seed", 3)
        assert dir_digest(a) == dir_digest(b)

    def test_invalid_counts_exit_2(self, tmp_path, capsys):
        assert run_cli("fixture", "--out", tmp_path / "x",
                       "--n-shapes", 1) == 2
        err = capsys.readouterr().err
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["error"]["code"] == "config.invalid"


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """fixture -> build-ssm -> generate -> train -> predict chain output."""
    root = tmp_path_factory.mktemp("pipeline")
    fx = root / "fixture"
    assert run_cli("fixture", "--out", fx, "--n-shapes", 5,
                   "--n-vertices", 500, "--seed", 0) == 0
    assert run_cli("build-ssm", "--cohort", fx, "--out", root / "model.json") == 0
    assert run_cli("generate", "--model", root / "model.json",
                   "--labels", fx / "mean_labels.csv",
                   "--classes", fx / "classes.json",
                   "--out", root / "ds", "--n-train", 8, "--n-val", 2,
                   "--n-test", 3, "--n-points", 128, "--seed", 1) == 0
    assert run_cli("train", "--dataset", root / "ds",
                   "--out", root / "seg.json", "--epochs", 4,
                   "--k-local", 8, "--radii", "16,32", "--hidden", "16") == 0
    assert run_cli("predict", "--model", root / "seg.json",
                   "--dataset", root / "ds", "--out", root / "preds") == 0
    return root


class TestPipelineChain:
    def test_chain_artifacts_exist(self, pipeline_dir):
        assert (pipeline_dir / "model.json").exists()
        assert (pipeline_dir / "ds" / "manifest.json").exists()
        assert (pipeline_dir / "seg.json").exists()
        assert len(list((pipeline_dir / "preds").glob("*.xyzl"))) == 3

    def test_evaluate_succeeds(self, pipeline_dir, capsys):
        assert run_cli("evaluate", "--dataset", pipeline_dir / "ds",
                       "--predictions", pipeline_dir / "preds",
                       "--out", pipeline_dir / "report.json",
                       "--csv", pipeline_dir / "report.csv") == 0
        out = capsys.readouterr().out
        assert "mean mIoU" in out
        payload = json.loads((pipeline_dir / "report.json").read_text())
        assert 0.0 <= payload["mean_miou"] <= 1.0

    def test_evaluate_missing_predictions_exit_2(self, pipeline_dir, tmp_path,
                                                 capsys):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run_cli("evaluate", "--dataset", pipeline_dir / "ds",
                       "--predictions", empty,
                       "--out", tmp_path / "r.json") == 2
        err = capsys.readouterr().err
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["error"]["code"] == "eval.missing_predictions"
        assert "shape_" in payload["error"]["message"]

    def test_generate_idempotent(self, pipeline_dir, tmp_path):
        common = ["generate", "--model", pipeline_dir / "model.json",
                  "--labels", pipeline_dir / "fixture" / "mean_labels.csv",
                  "--classes", pipeline_dir / "fixture" / "classes.json",
                  "--n-train", 3, "--n-val", 1, "--n-test", 1,
                  "--n-points", 64, "--seed", 9]
        assert run_cli(*common, "--out", tmp_path / "d1") == 0
        assert run_cli(*common, "--out", tmp_path / "d2", "--workers", 2) == 0
        assert dir_digest(tmp_path / "d1") == dir_digest(tmp_path / "d2")

    def test_transfer_labels_command(self, pipeline_dir, tmp_path):
        fx = pipeline_dir / "fixture"
        target = sorted(fx.glob("*.obj"))[1]
        out_csv = tmp_path / "trans.csv"
        assert run_cli("transfer-labels", "--labels", fx / "mean_labels.csv",
                       "--classes", fx / "classes.json",
                       "--target", target, "--out", out_csv) == 0
        table = load_class_table(fx / "classes.json")
        mesh = load_mesh(target)
        out = load_labels(out_csv, mesh.n_vertices, table)
        orig = load_labels(fx / "mean_labels.csv", mesh.n_vertices, table)
        assert np.array_equal(out.labels, orig.labels)


class TestStudyCommand:
    def test_study_pipeline(self, tmp_path):
        fx = tmp_path / "fx"
        run_cli("fixture", "--out", fx, "--n-shapes", 2, "--n-vertices", 200,
                "--seed", 7)
        table = load_class_table(fx / "classes.json")
        n = load_mesh(sorted(fx.glob("*.obj"))[0]).n_vertices
        gt = load_labels(fx / "mean_labels.csv", n, table)
        # two synthetic annotators: one perfect, one half-erased
        ann1 = tmp_path / "ann1.csv"
        save_labels(gt, ann1)
        half = gt.labels.copy()
        labeled = np.flatnonzero(half)
        half[labeled[: len(labeled) // 2]] = 0
        ann2 = tmp_path / "ann2.csv"
        from ssmseg.mesh import LabelMap
        save_labels(LabelMap(half, table), ann2)
        spec = {
            "classes": str(fx / "classes.json"),
            "n_vertices": n,
            "shapes": [{"id": "s0", "ground_truth": str(fx / "mean_labels.csv"),
                        "annotations": [str(ann1), str(ann2)]}],
        }
        spec_path = tmp_path / "study.json"
        spec_path.write_text(json.dumps(spec))
        out_csv = tmp_path / "study_report.csv"
        assert run_cli("study", "--spec", spec_path, "--out", out_csv) == 0
        text = out_csv.read_text()
        assert "accuracy" in text and "overall" in text
        # union aggregation includes the perfect annotator, so accuracy is 1
        for line in text.splitlines():
            if line.startswith("s0"):
                assert line.rstrip().endswith("1.000000")


class TestCliBasics:
    def test_unknown_subcommand_exit_1(self, capsys):
        assert run_cli("frobnicate") == 1

    def test_no_args_exit_1(self):
        assert run_cli() == 1

    def test_help_exits_zero_and_shows_defaults(self, capsys):
        for cmd in ("fixture", "build-ssm", "generate", "transfer-labels",
                    "train", "predict", "evaluate", "study", "annotate-serve"):
            assert run_cli(cmd, "--help") == 0
        help_text = capsys.readouterr().out
        assert "--seed" in help_text
        assert "(default: 4096)" in help_text  # n_points
        assert "(default: -2.75)" in help_text  # sigma_lo
        assert "(default: 0.001)" in help_text  # lr
        assert "(default: 12)" in help_text  # batch size

    def test_build_ssm_idempotent(self, tmp_path):
        fx = tmp_path / "fx"
        run_cli("fixture", "--out", fx, "--n-shapes", 3, "--n-vertices", 200,
                "--seed", 4)
        run_cli("build-ssm", "--cohort", fx, "--out", tmp_path / "m1.json")
        run_cli("build-ssm", "--cohort", fx, "--out", tmp_path / "m2.json")
        assert (tmp_path / "m1.json").read_bytes() == \
            (tmp_path / "m2.json").read_bytes()

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert run_cli("build-ssm", "--cohort", tmp_path / "nope",
                       "--out", tmp_path / "m.json") == 2

    def test_config_file_rebases_defaults(self, tmp_path):
        cfg = PipelineConfig(n_points=64, n_train=2, n_val=1, n_test=1,
                             epochs=2)
        cfg_path = tmp_path / "cfg.json"
        save_config(cfg, cfg_path)
        fx = tmp_path / "fx"
        run_cli("fixture", "--out", fx, "--n-shapes", 3, "--n-vertices", 200)
        run_cli("build-ssm", "--cohort", fx, "--out", tmp_path / "m.json")
        assert run_cli("--config", cfg_path, "generate",
                       "--model", tmp_path / "m.json",
                       "--labels", fx / "mean_labels.csv",
                       "--classes", fx / "classes.json",
                       "--out", tmp_path / "ds") == 0
        manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
        assert manifest["config"]["n_points"] == 64
        assert manifest["config"]["n_train"] == 2


class TestConfigRoundtrip:
    def test_lossless(self, tmp_path):
        cfg = PipelineConfig(sigma_lo=-3.125, lr=0.00125, hidden=(48, 24),
                             rotate_splits=("train", "test"))
        path = tmp_path / "cfg.json"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_paper_defaults(self):
        cfg = PipelineConfig()
        assert (cfg.sigma_lo, cfg.sigma_hi) == (-2.75, 1.75)
        assert (cfg.n_train, cfg.n_val, cfg.n_test) == (8800, 2200, 500)
        assert cfg.n_points == 4096
        assert cfg.lr == 1e-3
        assert cfg.batch_size == 12

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"grandeur": 11}')
        from ssmseg.errors import ConfigError
        with pytest.raises(ConfigError):
            load_config(path)


@pytest.fixture()
def server(tmp_path):
    fx = tmp_path / "fx"
    run_cli("fixture", "--out", fx, "--n-shapes", 2, "--n-vertices", 150,
            "--seed", 2)
    mesh = load_mesh(sorted(fx.glob("*.obj"))[0])
    table = load_class_table(fx / "classes.json")
    state = AnnotationState(mesh, table, tmp_path / "working_labels.csv")
    srv = make_server(state, port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    yield base, mesh, state
    srv.shutdown()
    srv.server_close()


def get_json(url):
    with urllib.request.urlopen(url) as resp:
        return json.loads(resp.read())


def post_json(url, payload):
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"}, method="POST")
    with urllib.request.urlopen(req) as resp:
        return resp.status, json.loads(resp.read())


class TestAnnotateServer:
    def test_mesh_and_classes_endpoints(self, server):
        base, mesh, _ = server
        geo = get_json(f"{base}/api/mesh")
        assert len(geo["vertices"]) == mesh.n_vertices
        assert len(geo["faces"]) == mesh.n_faces
        classes = get_json(f"{base}/api/classes")
        assert {c["id"] for c in classes["classes"]} == {1, 2}

    def test_labels_roundtrip_and_persistence(self, server, tmp_path):
        base, mesh, state = server
        labels = get_json(f"{base}/api/labels")["labels"]
        assert labels == [0] * mesh.n_vertices
        new = [0] * mesh.n_vertices
        new[3] = 1
        new[5] = 2
        status, resp = post_json(f"{base}/api/labels", {"labels": new})
        assert status == 200 and resp["ok"] and resp["n_labeled"] == 2
        assert get_json(f"{base}/api/labels")["labels"] == new
        # persisted to the label CSV
        table = state.class_table
        reloaded = load_labels(state.labels_path, mesh.n_vertices, table)
        assert reloaded.labels.tolist() == new

    def test_bad_length_rejected(self, server):
        base, mesh, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            post_json(f"{base}/api/labels", {"labels": [0, 1]})
        assert err.value.code == 400
        body = json.loads(err.value.read())
        assert body["error"]["code"] == "labels.invalid"

    def test_unknown_class_rejected(self, server):
        base, mesh, _ = server
        bad = [0] * mesh.n_vertices
        bad[0] = 99
        with pytest.raises(urllib.error.HTTPError) as err:
            post_json(f"{base}/api/labels", {"labels": bad})
        assert err.value.code == 400

    def test_placeholder_page_served(self, server):
        base, _, _ = server
        with urllib.request.urlopen(f"{base}/") as resp:
            assert resp.status == 200
            assert b"Annotation backend" in resp.read()

    def test_unknown_api_404(self, server):
        base, _, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            get_json(f"{base}/api/nothing")
        assert err.value.code == 404
