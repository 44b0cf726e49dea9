import json

import pytest

from sincnet import cli

SMALL = """\
seed = 3
epochs = 2
minibatch = 16
sample_rate = 8000
n_filters = 8
filter_length = 33
conv_channels = 8,8
fc_sizes = 32,32
random_offsets = true
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code = cli.run(["synth", "--speakers", "4", "--utts", "3", "--seconds", "0.6", "--test-utts", "2",
                    "--impostors", "2", "--impostor-utts", "2", "--sample-rate", "8000",
                    "--seed", "5", "--out", str(root / "data")])
    assert code == 0
    conf = root / "small.conf"
    conf.write_text(SMALL + f"manifest = {root / 'data' / 'manifest.csv'}\nout_dir = {root / 'run'}\n")
    assert cli.run(["train", "--config", str(conf)]) == 0
    return root


def test_synth_and_train_outputs(workspace, capsys):
    assert (workspace / "data" / "manifest.csv").exists()
    log = (workspace / "run" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss,train_fer,eval_fer" and len(log) == 3
    assert (workspace / "run" / "model.snc").exists()


def test_train_echoes_config_and_flags_override(workspace, capsys):
    out = workspace / "run_override"
    code = cli.run(["train", "--config", str(workspace / "small.conf"), "--epochs", "1",
                    "--seed", "9", "--mode", "standard", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "epochs = 1" in text and "seed = 9" in text and "cnn_mode = standard" in text
    assert "threads = 1" in text
    assert len((out / "train_log.csv").read_text().splitlines()) == 2
    assert "epochs = 1" in (out / "config.txt").read_text()


def test_identical_invocations_give_identical_outputs(workspace):
    again = workspace / "run_again"
    assert cli.run(["train", "--config", str(workspace / "small.conf"), "--out", str(again)]) == 0
    assert (again / "train_log.csv").read_bytes() == (workspace / "run" / "train_log.csv").read_bytes()
    assert (again / "model.snc").read_bytes() == (workspace / "run" / "model.snc").read_bytes()


def test_eval_id(workspace, capsys):
    report = workspace / "id.json"
    code = cli.run(["eval-id", "--checkpoint", str(workspace / "run" / "model.snc"),
                    "--manifest", str(workspace / "data" / "manifest.csv"), "--out", str(report)])
    assert code == 0
    values = json.loads(report.read_text())
    assert values["n_sentences"] == 8 and 0 <= values["cer_percent"] <= 100


def test_eval_verif_and_determinism(workspace):
    outs = []
    for name in ("v1", "v2"):
        code = cli.run(["eval-verif", "--checkpoint", str(workspace / "run" / "model.snc"),
                        "--manifest", str(workspace / "data" / "manifest.csv"), "--impostors", "10",
                        "--seed", "1", "--out", str(workspace / name)])
        assert code == 0
        outs.append(workspace / name)
    report = json.loads((outs[0] / "eer_report.json").read_text())
    assert report["dvector"]["n_genuine"] == 8 and report["dvector"]["n_impostor"] == 80
    for f in ("trials_dvector.csv", "trials_posterior.csv", "eer_report.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_analyze(workspace, capsys):
    log = str(workspace / "run" / "train_log.csv")
    code = cli.run(["analyze", "--checkpoint", str(workspace / "run" / "model.snc"),
                    "--out", str(workspace / "an"), "--compare", log, log])
    assert code == 0
    assert (workspace / "an" / "filter007_taps.csv").exists()
    assert (workspace / "an" / "convergence.csv").read_text().startswith("epoch,fer_sinc,fer_cnn")
    assert '"final_difference": 0.0' in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert cli.run(["gradcheck", "--seed", "7", "--networks", "2"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "PASS" in out


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["gradcheck", "--frobnicate"],
    ["synth", "--speakers", "3"],
    ["eval-verif", "--manifest", "x.csv"],
    ["gradcheck", "--threads", "0"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert cli.run(argv) == 1
    assert capsys.readouterr().err


def test_validation_errors_exit_one(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.conf"
    bad.write_text("colour = red\n")
    assert cli.run(["train", "--config", str(bad)]) == 1
    junk = tmp_path / "junk.snc"
    junk.write_bytes(b"nope")
    assert cli.run(["eval-id", "--checkpoint", str(junk), "--manifest", "m.csv"]) == 1
    assert cli.run(["eval-id", "--checkpoint", str(tmp_path / "missing.snc"), "--manifest", "m.csv"]) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_two(monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr("sincnet.gradcheck.run_gradcheck", boom)
    assert cli.run(["gradcheck"]) == 2
    assert "disk on fire" in capsys.readouterr().err
