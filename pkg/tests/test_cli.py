import csv
import shutil

import numpy as np
import pytest
from scipy.io import wavfile

from mtlse import nn
from mtlse.cli import main
from mtlse.metrics import EvalReport

MANIFEST = """
[dataset]
seed = 21

[train]
speech = synth count=2 dur=0.8 seed=100
rir = synth t60=580 seed=1
noise = white
snr_db = -5 0 5

[validation]
speech = synth count=1 dur=0.8 seed=200
rir = synth t60=570 seed=2
noise = babble
snr_db = 0 5

[test]
speech = synth count=2 dur=0.8 seed=300
rir = synth t60=560 seed=3
noise = pink
snr_db = 0 5
"""

FAST = ["--hidden", "8", "--lr", "0.001", "--wd", "0", "--epochs", "2", "--batch-size", "64"]


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "m.ini").write_text(MANIFEST)
    assert main(["synthesize", str(root / "m.ini"), str(root / "scenes")]) == 0
    return root


@pytest.fixture(scope="module")
def gain_model(scenes):
    path = scenes / "gain.mdl"
    assert main(["train", str(scenes / "scenes"), str(path), "--target", "gain", "--arch", "a", *FAST]) == 0
    return path


def _index(scene_dir):
    with open(scene_dir / "index.tsv", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def test_synthesize_writes_components(scenes):
    rows = _index(scenes / "scenes")
    assert len(rows) == 12
    assert len(list((scenes / "scenes").glob("*.wav"))) == 48
    rate, y = wavfile.read(scenes / "scenes" / rows[0]["y"])
    assert rate == 16000 and y.dtype == np.float32


def test_synthesize_is_byte_stable(scenes, tmp_path):
    assert main(["synthesize", str(scenes / "m.ini"), str(tmp_path / "again")]) == 0
    for f in sorted((scenes / "scenes").iterdir()):
        assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes(), f.name


def test_overlapping_manifest_rejected(tmp_path, capsys):
    (tmp_path / "s.wav").write_bytes(b"")
    bad = f"""
[train]
speech = s.wav
rir = synth t60=500 seed=1
[test]
speech = s.wav
rir = synth t60=500 seed=2
"""
    (tmp_path / "bad.ini").write_text(bad)
    assert main(["synthesize", str(tmp_path / "bad.ini"), str(tmp_path / "out")]) == 2
    assert "s.wav" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_source_fails_before_writing(tmp_path):
    (tmp_path / "m.ini").write_text("[train]\nspeech = nope.wav\nrir = synth t60=500 seed=1\n")
    assert main(["synthesize", str(tmp_path / "m.ini"), str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out").exists()


def test_train_single_gain(gain_model):
    model = nn.load_model(gain_model)
    assert model.meta["target_kind"] == "gain"
    assert not model.multitask
    log = gain_model.with_suffix(".log.tsv").read_text().splitlines()
    assert log[0] == "cell\tepoch\ttrain_loss\tval_loss"
    assert len(log) == 1 + 2


def test_train_multitask_adaptive(scenes):
    path = scenes / "mt.mdl"
    argv = ["train", str(scenes / "scenes"), str(path), "--target", "gain", "--loss", "multi-adaptive",
            "--arch", "c", *FAST]
    assert main(argv) == 0
    model = nn.load_model(path)
    assert model.multitask and model.log_vars.shape == (2,)
    assert model.head2[-1].activation == "sigmoid"


def test_train_rejects_spp_alone(scenes, tmp_path, capsys):
    code = main(["train", str(scenes / "scenes"), str(tmp_path / "x.mdl"), "--target", "spp"])
    assert code == 1
    assert "secondary" in capsys.readouterr().err
    assert not (tmp_path / "x.mdl").exists()


def test_train_usage_errors(scenes, tmp_path):
    assert main(["train", str(scenes / "scenes"), str(tmp_path / "x.mdl"), "--target", "phase"]) == 1
    # architecture (c) is multi-task only
    assert main(["train", str(scenes / "scenes"), str(tmp_path / "x.mdl"), "--arch", "c"]) == 1
    assert main(["train", str(tmp_path), str(tmp_path / "x.mdl")]) == 2


def test_enhance_lengths_and_format(scenes, gain_model, tmp_path):
    ys = sorted((scenes / "scenes").glob("test-*_y.wav"))
    assert main(["enhance", str(gain_model), *map(str, ys), "--out", str(tmp_path / "enh")]) == 0
    for y in ys:
        _, src = wavfile.read(y)
        rate, out = wavfile.read(tmp_path / "enh" / y.name)
        assert rate == 16000 and out.dtype == np.int16 and out.size == src.size


def test_enhance_zero_signal(gain_model, tmp_path):
    wavfile.write(tmp_path / "z.wav", 16000, np.zeros(8000, dtype=np.int16))
    assert main(["enhance", str(gain_model), str(tmp_path / "z.wav"), "--out", str(tmp_path / "o")]) == 0
    _, out = wavfile.read(tmp_path / "o" / "z.wav")
    assert out.size == 8000 and np.all(out == 0)


def test_enhance_rejects_bad_audio(gain_model, tmp_path, capsys):
    wavfile.write(tmp_path / "cd.wav", 44100, np.zeros(4410, dtype=np.int16))
    wavfile.write(tmp_path / "st.wav", 16000, np.zeros((100, 2), dtype=np.int16))
    wavfile.write(tmp_path / "ok.wav", 16000, np.zeros(100, dtype=np.int16))
    out = tmp_path / "o"
    assert main(["enhance", str(gain_model), str(tmp_path / "ok.wav"), str(tmp_path / "cd.wav"),
                 "--out", str(out)]) == 2
    assert "44100" in capsys.readouterr().err
    assert main(["enhance", str(gain_model), str(tmp_path / "st.wav"), "--out", str(out)]) == 2
    assert "mono" in capsys.readouterr().err
    # nothing written for the valid file either
    assert not out.exists()


def test_enhance_rejects_corrupt_model(gain_model, tmp_path):
    bad = tmp_path / "bad.mdl"
    raw = bytearray(gain_model.read_bytes())
    raw[-30] ^= 1
    bad.write_bytes(bytes(raw))
    wavfile.write(tmp_path / "a.wav", 16000, np.zeros(100, dtype=np.int16))
    assert main(["enhance", str(bad), str(tmp_path / "a.wav"), "--out", str(tmp_path / "o")]) == 2


def test_evaluate_identity_copies(scenes, tmp_path):
    enh_dir = tmp_path / "copies"
    enh_dir.mkdir()
    rows = [r for r in _index(scenes / "scenes") if r["split"] == "test"]
    for r in rows:
        shutil.copy(scenes / "scenes" / r["y"], enh_dir / r["y"])
    assert main(["evaluate", str(scenes / "scenes"), str(enh_dir)]) == 0
    report = EvalReport.from_text((enh_dir / "report.tsv").read_text())
    assert len(report.rows) == len(rows) == 4
    assert all(r.delta_fwssnr == 0.0 and r.delta_segsnr == 0.0 for r in report.rows)


def test_evaluate_aggregate_is_row_mean(scenes, gain_model, tmp_path):
    ys = sorted((scenes / "scenes").glob("test-*_y.wav"))
    main(["enhance", str(gain_model), *map(str, ys), "--out", str(tmp_path / "e")])
    assert main(["evaluate", str(scenes / "scenes"), str(tmp_path / "e"), "--jobs", "2"]) == 0
    text = (tmp_path / "e" / "report.tsv").read_text()
    rows = EvalReport.from_text(text).rows
    summary = [l for l in text.splitlines() if l.startswith("# all")][0].split("\t")
    deltas = [float(l.split("\t")[4]) for l in text.splitlines() if l.startswith("test-")]
    assert len(deltas) == len(rows)
    assert abs(float(summary[4]) - np.mean(deltas)) < 1e-9


def test_evaluate_missing_counterpart(scenes, tmp_path, capsys):
    (tmp_path / "e").mkdir()
    assert main(["evaluate", str(scenes / "scenes"), str(tmp_path / "e")]) == 2
    assert "test-00000" in capsys.readouterr().err
    assert not (tmp_path / "e" / "report.tsv").exists()


def test_usage_exit_codes(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["enhance", "m.mdl", "a.wav"]) == 1  # --out missing
    assert main(["enhance", "m.mdl", "a.wav", "--out", "o", "--gain-floor", "1.5"]) == 1
    assert main(["--help"]) == 0
