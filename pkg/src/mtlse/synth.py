"""Speech-like and noise signal generators used in place of recorded corpora.

The speech generator is a crude source-filter model: harmonic voiced
syllables shaped by vowel formants, unvoiced fricative onsets, syllabic
envelopes and pauses.  It is not meant to sound natural, only to give the
time-frequency structure (harmonics, onsets, silences) that makes masks and
speech presence learnable.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

# (F1, F2, F3) in Hz for a handful of vowels
VOWEL_FORMANTS = (
    (730, 1090, 2440),
    (270, 2290, 3010),
    (530, 1840, 2480),
    (660, 1720, 2410),
    (300, 870, 2240),
    (570, 840, 2410),
    (440, 1020, 2240),
    (490, 1350, 1690),
)
FORMANT_BANDWIDTHS = (90.0, 110.0, 170.0)

NOISE_KINDS = ("white", "pink", "brown", "babble", "ssn", "hum")

SPEECH_RMS = 0.05


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([a.sum()]), a  # unit gain at DC


def _formant_filter(x, formants, fs):
    for f, bw in zip(formants, FORMANT_BANDWIDTHS):
        b, a = _resonator(f, bw, fs)
        x = signal.lfilter(b, a, x)
    return x


def _ramp_envelope(n, ramp, rng):
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = rise
        env[n - ramp:] = rise[::-1]
    # slow loudness drift inside the syllable
    env *= 1.0 + 0.25 * np.sin(np.linspace(0, np.pi, n) * rng.uniform(0.5, 1.5))
    return env


def _voiced(n, f0_start, f0_end, formants, fs, rng):
    f0 = np.linspace(f0_start, f0_end, n) * (1 + 0.01 * rng.standard_normal(n).cumsum() / np.sqrt(n))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    n_harm = int(0.45 * fs / max(f0_start, f0_end))
    src = np.zeros(n)
    for h in range(1, n_harm + 1):
        src += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    src += 0.02 * rng.standard_normal(n)  # aspiration
    return _formant_filter(src, formants, fs)


def _fricative(n, fs, rng):
    lo = rng.uniform(2000, 4500)
    sos = signal.butter(4, [lo, min(lo + rng.uniform(1500, 3000), 0.49 * fs)],
                        btype="bandpass", fs=fs, output="sos")
    return signal.sosfilt(sos, rng.standard_normal(n))


def synth_speech(duration_s: float, seed: int, fs: int = 16000) -> np.ndarray:
    """Speech-like utterance with syllables and pauses, RMS normalised to ``SPEECH_RMS``."""
    rng = np.random.default_rng([seed, 0x5EEC])
    n_total = int(round(duration_s * fs))
    out = np.zeros(n_total)
    base_f0 = rng.uniform(90, 230)
    pos = int(rng.uniform(0.05, 0.25) * fs)
    while pos < n_total:
        n_syl = int(rng.uniform(0.12, 0.35) * fs)
        seg = np.zeros(n_syl)
        n_fric = 0
        if rng.random() < 0.4:
            n_fric = int(rng.uniform(0.03, 0.09) * fs)
            fric = _fricative(n_fric, fs, rng) * rng.uniform(0.2, 0.6)
            seg[:n_fric] += fric * _ramp_envelope(n_fric, int(0.01 * fs), rng)
        n_vow = n_syl - n_fric
        if n_vow > int(0.04 * fs):
            f0a = base_f0 * (1 + 0.12 * rng.standard_normal())
            f0b = f0a * rng.uniform(0.85, 1.15)
            formants = VOWEL_FORMANTS[rng.integers(len(VOWEL_FORMANTS))]
            formants = tuple(f * rng.uniform(0.92, 1.08) for f in formants)
            v = _voiced(n_vow, f0a, f0b, formants, fs, rng)
            v /= np.sqrt(np.mean(v ** 2)) + 1e-12
            seg[n_fric:] += v * _ramp_envelope(n_vow, int(0.03 * fs), rng) * rng.uniform(0.5, 1.0)
        stop = min(pos + n_syl, n_total)
        out[pos:stop] += seg[:stop - pos]
        pos = stop
        if rng.random() < 0.35:
            pos += int(rng.uniform(0.05, 0.35) * fs)
        else:
            pos += int(rng.uniform(0.0, 0.03) * fs)
    rms = np.sqrt(np.mean(out ** 2))
    if rms > 0:
        out *= SPEECH_RMS / rms
    return out


def _shaped_noise(n, rng, exponent):
    """Gaussian noise with power spectrum ~ 1/f**exponent."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=float)
    f[0] = 1.0
    spec /= f ** (exponent / 2)
    x = np.fft.irfft(spec, n=n)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-300)


def synth_noise(kind: str, n_samples: int, seed: int, fs: int = 16000) -> np.ndarray:
    """Noise of the given ``kind`` (see ``NOISE_KINDS``), unit RMS."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng([seed, 0x0015E])
    if kind == "white":
        x = rng.standard_normal(n_samples)
    elif kind == "pink":
        x = _shaped_noise(n_samples, rng, 1.0)
    elif kind == "brown":
        x = _shaped_noise(n_samples, rng, 2.0)
    elif kind == "babble":
        talkers = 6
        dur = n_samples / fs
        x = sum(synth_speech(dur, int(rng.integers(1 << 31)), fs)[:n_samples] for _ in range(talkers))
    elif kind == "ssn":
        # speech-shaped: low-pass tilt peaking around 500 Hz
        sos = signal.butter(2, [150, 1200], btype="bandpass", fs=fs, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n_samples)) + 0.15 * _shaped_noise(n_samples, rng, 1.0)
    elif kind == "hum":
        t = np.arange(n_samples) / fs
        f_base = rng.uniform(48, 62)
        x = sum(np.sin(2 * np.pi * f_base * h * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 12))
        x = x + 0.3 * _shaped_noise(n_samples, rng, 1.0)
    else:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    x = np.asarray(x, dtype=float)
    rms = np.sqrt(np.mean(x ** 2))
    return x / rms if rms > 0 else x
