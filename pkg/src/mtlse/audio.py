"""WAV reading/writing.

Accepts 16-bit PCM and 32-bit float mono files; writes 16-bit PCM by default.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile


class AudioFormatError(ValueError):
    pass


def read_wav(path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read a mono WAV as float64 in [-1, 1).

    No resampling is done: a rate different from ``expected_rate`` is an error.
    """
    try:
        rate, data = wavfile.read(os.fspath(path))
    except (ValueError, OSError) as exc:
        raise AudioFormatError(f"{path}: cannot read WAV ({exc})") from exc
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    return x, int(rate)


def write_wav(path, x, rate: int, float32: bool = False) -> int:
    """Write ``x`` as 16-bit PCM (or 32-bit float); returns the number of clipped samples."""
    x = np.asarray(x, dtype=np.float64)
    if float32:
        wavfile.write(os.fspath(path), int(rate), x.astype("<f4"))
        return 0
    scaled = np.round(x * 32768.0)
    clipped = int(np.count_nonzero((scaled > 32767) | (scaled < -32768)))
    pcm = np.clip(scaled, -32768, 32767).astype("<i2")
    wavfile.write(os.fspath(path), int(rate), pcm)
    return clipped
