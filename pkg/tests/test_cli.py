import json

import numpy as np
import pytest

from quakecast.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    rc = main(["synth-data", "--set", "synth.n_events=12", "--set", "synth.n_stations=4",
               "--set", "synth.duration_s=2", "--set", "synth.lat_max=42.6", "--set", "synth.lon_max=12.9",
               "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(dataset):
    out = dataset.parent / "run"
    rc = main(["train", "--dataset", str(dataset), "--preset", "tiny",
               "--set", "augmentation.clip_choices=1", "--set", "train.batch_size=4", "--set", "split.k=4",
               "--epochs-phase1", "2", "--epochs-phase2", "2", "--out", str(out)])
    assert rc == 0
    return out


def test_gmice_pga(capsys):
    assert main(["gmice", "--pga", "1"]) == 0
    assert capsys.readouterr().out.strip() == "2.03"


def test_gmice_intensity(capsys):
    assert main(["gmice", "--intensity", "4.31"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(10.0)
    assert main(["gmice", "--intensity", "12"]) == 1


def test_gmice_batch(dataset, tmp_path):
    assert main(["gmice", "--labels", str(dataset / "labels.csv"), "--out", str(tmp_path / "i.csv")]) == 0
    assert len((tmp_path / "i.csv").read_text().splitlines()) == 12 * 4 + 1


@pytest.mark.parametrize("argv", [["--bogus"], ["nope"], [], ["gmice"], ["gmice", "--pga", "x"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["prepare-adjacency", "--help"])
    assert exc.value.code == 0
    assert "default: 0.75" in capsys.readouterr().out


def test_prepare_adjacency(dataset, tmp_path):
    out = tmp_path / "adj.csv"
    assert main(["prepare-adjacency", "--distances", str(dataset / "distances.csv"), "--out", str(out)]) == 0
    w = np.loadtxt(out, delimiter=",")
    assert w.shape == (4, 4) and np.all(np.diag(w) == 1)
    manifest = json.loads((tmp_path / "adj.csv.manifest.json").read_text())
    assert manifest["command"] == "prepare-adjacency"
    assert list(manifest["inputs"].values())[0]


def test_corrupt_header_exit_two(dataset, tmp_path, capsys):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(dataset, bad)
    hdr = (bad / "waveforms.hdr").read_text().replace("n_samples=", "n_sampls=")
    (bad / "waveforms.hdr").write_text(hdr)
    assert main(["train", "--dataset", str(bad), "--preset", "tiny", "--out", str(tmp_path / "r")]) == 2
    assert "n_samples" in capsys.readouterr().err


def test_bad_config_exit_one(dataset, tmp_path):
    assert main(["train", "--dataset", str(dataset), "--set", "train.nonsense=1", "--out", str(tmp_path / "r")]) == 1


def test_divergence_exit_three(dataset, tmp_path):
    rc = main(["train", "--dataset", str(dataset), "--preset", "tiny", "--set", "augmentation.clip_choices=1",
               "--set", "train.batch_size=4", "--set", "split.k=4", "--set", "train.lr_initial=1e30",
               "--set", "train.lr_final=1e29", "--epochs-phase1", "3", "--epochs-phase2", "1",
               "--out", str(tmp_path / "r")])
    assert rc == 3


def test_train_outputs(run_dir):
    for name in ("config.txt", "history.csv", "split.csv", "model.ckpt", "phase1_best.ckpt", "manifest.json"):
        assert (run_dir / name).exists(), name
    assert "train.epochs_phase1 = 2" in (run_dir / "config.txt").read_text()
    assert len((run_dir / "history.csv").read_text().splitlines()) == 5


def test_flag_beats_file_beats_default(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("train.epochs_phase1 = 3\ntrain.epochs_phase2 = 1\ntrain.batch_size = 4\n"
                   "augmentation.clip_choices = 1\nsplit.k = 4\n")
    out = tmp_path / "r"
    assert main(["train", "--dataset", str(dataset), "--preset", "tiny", "--config", str(cfg),
                 "--epochs-phase1", "1", "--out", str(out)]) == 0
    text = (out / "config.txt").read_text()
    assert "train.epochs_phase1 = 1" in text and "train.epochs_phase2 = 1" in text
    assert "train.lr_initial = 0.001" in text


def test_predict_evaluate(run_dir, dataset, tmp_path):
    pred = tmp_path / "pred.csv"
    assert main(["predict", "--checkpoint", str(run_dir / "model.ckpt"), "--dataset", str(dataset),
                 "--split", str(run_dir / "split.csv"), "--window", "1", "--out", str(pred)]) == 0
    assert pred.read_text().splitlines()[0] == "event_id,station_id,predicted_intensity"
    report = tmp_path / "report"
    assert main(["evaluate", "--pred", str(pred), "--labels", str(dataset / "labels.csv"),
                 "--catalog", str(dataset / "catalog.csv"), "--checkpoint", str(run_dir / "model.ckpt"),
                 "--dataset", str(dataset), "--windows", "1,2", "--out", str(report)]) == 0
    for name in ("metrics.csv", "bland_altman.csv", "conditional_magnitude.csv", "conditional_depth.csv",
                 "window_sweep.csv", "bland_altman.png", "manifest.json"):
        assert (report / name).exists(), name
    assert main(["predict", "--checkpoint", str(run_dir / "model.ckpt"), "--dataset", str(dataset),
                 "--window", "5", "--out", str(pred)]) == 1


def test_predict_deterministic(run_dir, dataset, tmp_path):
    outs = []
    for i in range(2):
        p = tmp_path / f"p{i}.csv"
        main(["predict", "--checkpoint", str(run_dir / "model.ckpt"), "--dataset", str(dataset), "--window", "1", "--out", str(p)])
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_eew_report(dataset, tmp_path):
    out = tmp_path / "eew"
    assert main(["eew-report", "--dataset", str(dataset), "--window", "0.5", "--out", str(out)]) == 0
    for name in ("timeline.csv", "cdf.csv", "summary.csv", "warning_times.png", "manifest.json"):
        assert (out / name).exists(), name


def test_eew_missing_picks(dataset, tmp_path):
    import shutil

    ds = tmp_path / "nopicks"
    shutil.copytree(dataset, ds)
    (ds / "picks.csv").unlink()
    assert main(["eew-report", "--dataset", str(ds), "--out", str(tmp_path / "e")]) == 2


def test_augment_preview(dataset, tmp_path):
    out = tmp_path / "aug"
    assert main(["augment-preview", "--dataset", str(dataset), "--set", "augmentation.clip_choices=1",
                 "--events", "3", "--out", str(out)]) == 0
    assert len((out / "batch.csv").read_text().splitlines()) == 7


def test_synth_manifest_and_determinism(dataset, tmp_path):
    again = tmp_path / "again"
    main(["synth-data", "--config", str(dataset / "synth.cfg"), "--out", str(again)])
    assert (again / "waveforms.bin").read_bytes() == (dataset / "waveforms.bin").read_bytes()
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["synth.n_events"] == "12"
