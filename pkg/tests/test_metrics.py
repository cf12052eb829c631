import numpy as np
import pytest

from mtlse.metrics import EvalReport, EvalRow, evaluate_scene, fwssnr, mel_filterbank, segsnr


def segsnr_oracle(x, y, L=256):
    hop = L // 2
    frames = []
    for start in range(0, x.size - L + 1, hop):
        s = x[start:start + L]
        e = s - y[start:start + L]
        frames.append((np.sum(s ** 2), np.sum(e ** 2)))
    peak = max(f[0] for f in frames)
    vals = []
    for es, ee in frames:
        if es < peak * 10 ** -3.5:
            continue
        v = 35.0 if ee == 0 else 10 * np.log10(es / ee)
        vals.append(min(max(v, -10.0), 35.0))
    return float(np.mean(vals))


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank(25, 256, 16000)
    assert fb.shape == (25, 129)
    assert np.all(fb.max(axis=1) > 0.5)
    assert np.all(np.count_nonzero(fb, axis=1) >= 2)
    # centres increase with the band index
    assert np.all(np.diff(np.argmax(fb, axis=1)) >= 0)


def test_fixed_points(speech):
    assert fwssnr(speech, speech) == 35.0
    assert segsnr(speech, speech) == 35.0
    # zero output: error equals the reference in every band
    assert fwssnr(speech, np.zeros_like(speech)) == pytest.approx(0.0, abs=1e-9)
    assert fwssnr(speech, 10 * speech) == pytest.approx(-10.0)


def test_noise_ladder_is_monotone(speech, rng):
    noise = rng.standard_normal(speech.size)
    p = np.mean(speech ** 2)
    scores = []
    for snr in (20, 10, 5, 0, -5):
        scale = np.sqrt(p / 10 ** (snr / 10))
        scores.append(fwssnr(speech, speech + scale * noise))
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_scale_invariance(speech, rng):
    y = speech + 0.02 * rng.standard_normal(speech.size)
    assert fwssnr(3 * speech, 3 * y) == pytest.approx(fwssnr(speech, y), abs=1e-9)


def test_segsnr_matches_oracle(speech, rng):
    y = speech + 0.03 * rng.standard_normal(speech.size)
    assert segsnr(speech, y) == pytest.approx(segsnr_oracle(speech, y), abs=1e-9)


def test_silent_reference_rejected():
    with pytest.raises(ValueError):
        fwssnr(np.zeros(1000), np.ones(1000))


def test_evaluate_scene_identity(noisy_scene):
    row = evaluate_scene(noisy_scene, noisy_scene.y)
    assert row.delta_fwssnr == 0.0 and row.delta_segsnr == 0.0
    with pytest.raises(ValueError, match="length"):
        evaluate_scene(noisy_scene, noisy_scene.y[:-500])


def test_report_text_round_trip():
    rep = EvalReport([EvalRow("a", "snr+0", 1.0, 4.0, -2.0, 1.5),
                      EvalRow("b", "snr+5", 3.0, 3.5, 0.0, 0.25)])
    text = rep.to_text()
    back = EvalReport.from_text(text)
    assert len(back.rows) == 2
    assert back.mean("delta_fwssnr") == pytest.approx(1.75, abs=1e-9)
    assert "# all\t2\t" in text
    assert back.mean("delta_segsnr", "snr+5") == pytest.approx(0.25)


def test_clamp_floor_and_step_size(speech, rng):
    noise = rng.standard_normal(speech.size)
    p = np.mean(speech ** 2)

    def at(snr):
        return fwssnr(speech, speech + np.sqrt(p / 10 ** (snr / 10)) * noise)

    assert at(-60) == pytest.approx(-10.0, abs=1e-3)
    assert 5 < at(10) - at(0) < 15


def test_evaluate_scene_ceiling(noisy_scene):
    row = evaluate_scene(noisy_scene, noisy_scene.x)
    assert row.delta_fwssnr == pytest.approx(35.0 - fwssnr(noisy_scene.x, noisy_scene.y), abs=1e-12)
