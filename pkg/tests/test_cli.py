import json

import pytest

from palstm.cli import read_config_file, run

FAST = ["--window", "8", "--hidden-size", "3", "--epochs", "1", "--batch-size", "16"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    code = run(["--seed", "3", "gen-data", "--out", str(d / "fleet.csv"), "--vehicles", "4", "--length", "96",
                "--faulty-vehicles", "1", "--fault-duration", "20"])
    assert code == 0
    return d


@pytest.fixture(scope="module")
def model(dataset):
    path = dataset / "model.json"
    code = run(["train", "--data", str(dataset / "fleet.csv"), "--labels", str(dataset / "fleet.labels.csv"),
                "--model-out", str(path), *FAST])
    assert code == 0
    return path


class TestUsage:
    def test_no_command(self, capsys):
        assert run([]) == 1

    def test_unknown_command(self, capsys):
        assert run(["explode"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_required(self, capsys):
        assert run(["train", "--data", "x.csv"]) == 1


class TestGenData:
    def test_outputs(self, dataset):
        lines = (dataset / "fleet.csv").read_text().splitlines()
        assert lines[0] == "vehicle_id,timestamp,voltage,current,soc,temperature,mileage"
        assert len(lines) == 1 + 4 * 96
        labels = (dataset / "fleet.labels.csv").read_text().splitlines()
        assert labels[0] == "vehicle_id,timestamp,label"
        assert sum(int(row.rsplit(",", 1)[1]) for row in labels[1:]) == 20

    def test_faults_must_fit(self, tmp_path):
        assert run(["gen-data", "--out", str(tmp_path / "f.csv"), "--length", "50", "--fault-duration", "60"]) == 2


class TestCorrelation:
    def test_table(self, dataset, capsys):
        assert run(["analyze-correlation", "--data", str(dataset / "fleet.csv"), "--window", "8"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "channel,rho"
        assert len(out) == 5


class TestTrainDiagnose:
    def test_history_written(self, model):
        history = model.with_name("model.history.csv").read_text().splitlines()
        assert history == ["epoch,loss", history[1]] and history[1].startswith("1,")

    def test_flag_rule(self, dataset, model, capsys):
        assert run(["diagnose", "--model", str(model), "--data", str(dataset / "fleet.csv"),
                    "--labels", str(dataset / "fleet.labels.csv")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "vehicle_id,window_start,timestamp_end,mileage,score,threshold,flag,label"
        assert len(lines) == 1 + 4 * 12
        for row in lines[1:]:
            f = row.split(",")
            assert int(f[6]) == int(float(f[4]) > float(f[5]))
        assert any(row.endswith(",1") for row in lines[1:])

    def test_export_recon(self, dataset, model, capsys):
        assert run(["export-recon", "--model", str(model), "--data", str(dataset / "fleet.csv"),
                    "--vehicle", "V001", "--window-index", "2"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("step,timestamp,voltage,voltage_recon,current,current_recon")
        assert len(lines) == 9

    def test_export_bad_index(self, dataset, model):
        assert run(["export-recon", "--model", str(model), "--data", str(dataset / "fleet.csv"),
                    "--window-index", "99"]) == 2

    def test_bad_model_file(self, dataset, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("not json")
        assert run(["diagnose", "--model", str(bad), "--data", str(dataset / "fleet.csv")]) == 2

    def test_no_physics_ablation(self, dataset, tmp_path):
        out = tmp_path / "plain.json"
        assert run(["train", "--data", str(dataset / "fleet.csv"), "--model-out", str(out), "--no-physics", *FAST]) == 0
        cfg = json.loads(out.read_text())["model_config"]
        assert not (cfg["use_physics_features"] or cfg["use_latent_fusion"] or cfg["use_attention"])


class TestEvalAndGrid:
    def test_eval_requires_labels(self, dataset, tmp_path):
        assert run(["eval", "--data", str(dataset / "fleet.csv"), "--report-out", str(tmp_path / "r.csv"), *FAST]) == 2

    def test_eval_report(self, dataset, tmp_path):
        report = tmp_path / "r.csv"
        assert run(["eval", "--data", str(dataset / "fleet.csv"), "--labels", str(dataset / "fleet.labels.csv"),
                    "--report-out", str(report), "--folds", "3", *FAST]) == 0
        assert len(report.read_text().splitlines()) == 1 + 3 + 2
        assert (tmp_path / "r.roc.csv").read_text().startswith("fold,fpr,tpr")

    def test_grid(self, dataset, tmp_path):
        out = tmp_path / "g.csv"
        assert run(["grid-search", "--data", str(dataset / "fleet.csv"), "--labels", str(dataset / "fleet.labels.csv"),
                    "--out", str(out), "--folds", "2", "--layers-grid", "1,2", "--neurons-grid", "2,3", *FAST]) == 0
        assert len(out.read_text().splitlines()) == 5

    def test_grid_bad_list(self, dataset, tmp_path):
        assert run(["grid-search", "--data", str(dataset / "fleet.csv"), "--labels", str(dataset / "fleet.labels.csv"),
                    "--out", str(tmp_path / "g.csv"), "--layers-grid", "a,b"]) == 1


class TestConfig:
    def test_parse(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nhidden-size = 7\nno_physics = true\nlr = 0.01\n")
        assert read_config_file(p) == {"hidden_size": 7, "no_physics": True, "lr": 0.01}

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("colour = red\n")
        assert run(["--config", str(p), "gen-data", "--out", str(tmp_path / "x.csv")]) == 1

    def test_flag_beats_config(self, dataset, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("hidden_size = 5\nepochs = 1\nwindow = 8\n")
        out = tmp_path / "m.json"
        assert run(["--config", str(cfg), "train", "--data", str(dataset / "fleet.csv"), "--model-out", str(out),
                    "--hidden-size", "2"]) == 0
        doc = json.loads(out.read_text())
        assert doc["model_config"]["hidden_size"] == 2
        assert doc["model_config"]["T"] == 8
