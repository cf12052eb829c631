import numpy as np
import pytest

from mtlse import synth
from mtlse.scene import (
    ManifestError,
    Rir,
    build_dataset,
    fit_noise,
    make_scene,
    mean_power,
    mix_at_snr,
    noise_gain,
    parse_manifest,
    split_convolve,
    synth_rir,
)


def schroeder_t60(h, fs):
    """T60 from a T20 line fit (-5 to -25 dB) of the backward-integrated energy."""
    edc = np.cumsum(h[::-1] ** 2)[::-1]
    edc_db = 10 * np.log10(edc / edc[0])
    i5 = np.argmax(edc_db <= -5)
    i25 = np.argmax(edc_db <= -25)
    t = np.arange(i5, i25) / fs
    slope, _ = np.polyfit(t, edc_db[i5:i25], 1)
    return -60.0 / slope


@pytest.mark.parametrize("t60", [300.0, 500.0, 800.0])
def test_rir_decay_matches_t60(t60):
    rir = synth_rir(t60, 1.5 * t60, seed=2)
    est = 1000 * schroeder_t60(rir.taps, rir.sample_rate)
    assert abs(est - t60) / t60 < 0.15


def test_rir_argument_checks():
    with pytest.raises(ValueError):
        synth_rir(50.0, 500.0)
    with pytest.raises(ValueError):
        synth_rir(500.0, 300.0)


def test_early_late_partition(rir500):
    assert rir500.direct_index == round(0.002 * 16000)
    assert rir500.early_end - rir500.direct_index == 800
    early = np.zeros_like(rir500.taps)
    early[:rir500.early_end] = rir500.early()
    assert np.array_equal(early + rir500.late(), rir500.taps)
    assert np.all(rir500.late()[:rir500.early_end] == 0)


def test_split_convolve_sums_to_full(speech, rir500):
    x, r = split_convolve(speech, rir500)
    full = np.convolve(speech, rir500.taps)[:speech.size]
    assert x.size == speech.size
    assert np.allclose(x + r, full, atol=1e-12)


def test_mix_hits_requested_snr(speech, rir500):
    x, r = split_convolve(speech, rir500)
    noise = synth.synth_noise("pink", 5000, seed=1)
    for snr in (-5.0, 0.0, 5.0):
        n = mix_at_snr(x + r, noise, snr, seed=4)
        assert n.size == x.size
        measured = 10 * np.log10(np.mean((x + r) ** 2) / np.mean(n ** 2))
        assert measured == pytest.approx(snr, abs=1e-9)


def test_noise_gain_rejects_silence():
    with pytest.raises(ValueError):
        noise_gain(np.ones(10), np.zeros(10), 0.0)


def test_fit_noise_loops_short_noise():
    out = fit_noise(np.arange(7.0), 20, seed=0)
    assert out.size == 20
    assert set(out) <= set(range(7))


def test_scene_sum_and_reverb_only(speech, rir500, noisy_scene):
    s = noisy_scene
    assert np.array_equal(s.y, s.x + s.r + s.n)
    assert s.condition == "snr+0"
    dry = make_scene(speech, rir500)
    assert np.all(dry.n == 0) and dry.snr_db is None and dry.condition == "reverb"


@pytest.mark.parametrize("kind", synth.NOISE_KINDS)
def test_noise_kinds_unit_rms(kind):
    n = synth.synth_noise(kind, 16000, seed=3)
    assert mean_power(n) == pytest.approx(1.0, rel=1e-9)


def test_speech_is_deterministic():
    a = synth.synth_speech(1.0, seed=9)
    assert np.array_equal(a, synth.synth_speech(1.0, seed=9))
    assert not np.array_equal(a, synth.synth_speech(1.0, seed=10))
    assert np.sqrt(np.mean(a ** 2)) == pytest.approx(synth.SPEECH_RMS, rel=1e-6)


MANIFEST = """
[dataset]
seed = 4
snr_db = -5 0 5

[train]
speech = synth count=2 dur=1 seed=10
rir = synth t60=580 seed=1
noise = white
  babble

[test]
speech = synth count=1 dur=1 seed=30
rir = synth t60=560 seed=3
noise = ssn
snr_db = none 0
"""


def test_manifest_expands_cartesian_product():
    ds = build_dataset(parse_manifest(MANIFEST))
    assert len(ds.split("train")) == 2 * 1 * 3 * 2
    # reverb-only entries take no noise
    assert len(ds.split("test")) == 1 + 1
    conds = [s.condition for s in ds.split("test")]
    assert conds == ["reverb", "snr+0"]


def test_dataset_is_deterministic():
    a = build_dataset(parse_manifest(MANIFEST))[3]
    b = build_dataset(parse_manifest(MANIFEST))[3]
    assert np.array_equal(a.y, b.y)
    c = build_dataset(parse_manifest(MANIFEST.replace("seed = 4", "seed = 5")))[3]
    assert not np.array_equal(a.n, c.n)


def test_overlapping_splits_rejected(tmp_path):
    text = f"""
[train]
speech = {tmp_path}/a.wav
rir = synth t60=500 seed=1
[test]
speech = {tmp_path}/a.wav
rir = synth t60=500 seed=2
"""
    with pytest.raises(ManifestError, match="a.wav"):
        parse_manifest(text)


def test_shared_rir_rejected():
    text = """
[train]
speech = synth count=1 dur=1 seed=1
rir = synth t60=500 seed=1
[test]
speech = synth count=1 dur=1 seed=2
rir = synth t60=500 seed=1
"""
    with pytest.raises(ManifestError, match="RIR"):
        parse_manifest(text)


def test_manifest_needs_speech():
    with pytest.raises(ManifestError):
        parse_manifest("[train]\nrir = synth t60=500\n")


def test_rir_from_taps():
    taps = np.zeros(2000)
    taps[40] = 1.0
    taps[900] = 0.5
    rir = Rir(taps, 16000, 50.0)
    assert rir.direct_index == 40
    assert np.count_nonzero(rir.early()) == 1


def test_rir_envelope_reaches_minus_60_db():
    # mean squared tail over many seeds follows exp(-6 ln10 t / T60)
    taps = np.array([synth_rir(200.0, 200.0, seed=s).taps for s in range(200)])
    p = (taps ** 2).mean(axis=0)
    d = int(0.002 * 16000)
    head = p[d + 1:d + 33].mean()
    tail = p[-32:].mean()
    assert 10 * np.log10(tail / head) == pytest.approx(-60.0, abs=3.0)
    assert np.array_equal(synth_rir(200.0, 200.0, seed=4).taps, synth_rir(200.0, 200.0, seed=4).taps)


def test_anechoic_and_direct_only_splits(speech):
    x, r = split_convolve(speech, Rir(np.array([1.0, 0.0, 0.0])))
    assert np.array_equal(x, speech) and np.all(r == 0)
    taps = np.array([0.0, 0.8, 0.3, 0.2, 0.1])
    x, r = split_convolve(speech, Rir(taps, early_ms=0.0))
    # early part keeps the direct tap only
    assert np.allclose(x, 0.8 * np.concatenate([[0.0], speech[:-1]]))
    assert np.allclose(x + r, np.convolve(speech, taps)[:speech.size])


def test_noise_gain_closed_form(rng):
    a = rng.standard_normal(4000)
    b = rng.standard_normal(4000)
    b *= np.sqrt(mean_power(a) / mean_power(b))
    assert noise_gain(a, b, 0.0) == pytest.approx(1.0)
    assert noise_gain(a, b, 5.0) == pytest.approx(10 ** -0.25)


def test_cartesian_count_two_by_two():
    text = """
[dataset]
snr_db = -5 0 5
[train]
speech = synth count=2 dur=0.5 seed=1
rir = synth t60=500 seed=1
  synth t60=600 seed=2
noise = white
"""
    ds = build_dataset(parse_manifest(text))
    assert len(ds) == 12
    reverb = build_dataset(parse_manifest(text.replace("-5 0 5", "none")))
    assert all(s.snr_db is None and not s.n.any() for s in reverb)
