"""STFT analysis/synthesis with a tight square-root Hann window (WOLA).

Forward transforms are unnormalized (``numpy.fft.rfft``); the inverse uses
``numpy.fft.irfft`` which scales by ``1/window_len``.  Analysis and synthesis
share the same window, whose overlapped squares sum to one at 50% overlap, so
``istft(stft(x))`` reconstructs ``x`` to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 256
    hop: int = 128
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_len <= 0 or self.window_len % 2:
            raise ValueError(f"window_len must be a positive even number, got {self.window_len}")
        if self.hop <= 0 or self.window_len % self.hop:
            raise ValueError(f"hop {self.hop} must divide window_len {self.window_len}")

    @property
    def num_bins(self) -> int:
        return self.window_len // 2 + 1


@dataclass
class ComplexSpectrogram:
    """K x L complex STFT grid plus what is needed to invert it."""

    data: np.ndarray
    config: StftConfig
    original_len: int

    @property
    def num_bins(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "ComplexSpectrogram":
        """Same framing, new coefficients (e.g. after masking)."""
        data = np.asarray(data)
        if data.shape != self.data.shape:
            raise ValueError(f"shape mismatch: {data.shape} vs {self.data.shape}")
        return ComplexSpectrogram(data, self.config, self.original_len)

    def power(self) -> np.ndarray:
        return self.data.real ** 2 + self.data.imag ** 2

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


def make_tight_window(window_len: int, hop: int) -> np.ndarray:
    """Square root of the periodic Hann window.

    Only 50% overlap is supported; at that overlap ``w[i]**2 + w[i+hop]**2 == 1``.
    """
    if window_len <= 0 or window_len % 2:
        raise ValueError(f"window_len must be a positive even number, got {window_len}")
    if hop != window_len // 2:
        raise ValueError(f"only 50% overlap is supported (hop={window_len // 2}), got hop={hop}")
    n = np.arange(window_len)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_len)
    return np.sqrt(hann)


def _num_frames(n_samples: int, cfg: StftConfig) -> int:
    head = cfg.window_len - cfg.hop
    # every original sample must lie under window_len/hop full frames
    padded = n_samples + 2 * head
    padded = -(-padded // cfg.hop) * cfg.hop
    return (padded - cfg.window_len) // cfg.hop + 1


def stft(signal, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("cannot transform an empty signal")
    window = make_tight_window(cfg.window_len, cfg.hop)
    head = cfg.window_len - cfg.hop
    n_frames = _num_frames(x.size, cfg)
    total = (n_frames - 1) * cfg.hop + cfg.window_len
    padded = np.zeros(total)
    padded[head:head + x.size] = x
    frames = sliding_window_view(padded, cfg.window_len)[::cfg.hop]
    spec = np.fft.rfft(frames * window, axis=1).T
    return ComplexSpectrogram(np.ascontiguousarray(spec), cfg, x.size)


def istft(spec: ComplexSpectrogram) -> np.ndarray:
    cfg = spec.config
    if spec.data.ndim != 2 or spec.data.shape[0] != cfg.num_bins:
        raise ValueError(f"expected {cfg.num_bins} bins, got array of shape {spec.data.shape}")
    window = make_tight_window(cfg.window_len, cfg.hop)
    frames = np.fft.irfft(spec.data.T, n=cfg.window_len, axis=1) * window
    n_frames = frames.shape[0]
    out = np.zeros((n_frames - 1) * cfg.hop + cfg.window_len)
    step = cfg.window_len // cfg.hop
    # overlap-add in `step` strided groups so every group is non-overlapping
    for offset in range(step):
        grp = frames[offset::step]
        if grp.size == 0:
            continue
        start = offset * cfg.hop
        stop = start + grp.shape[0] * cfg.window_len
        out[start:stop] += grp.reshape(-1)
    head = cfg.window_len - cfg.hop
    return out[head:head + spec.original_len].copy()


def spectral_energy(spec: ComplexSpectrogram) -> float:
    """Signal-domain energy implied by the coefficients (Parseval, half spectrum)."""
    p = spec.power()
    weights = np.full(spec.num_bins, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return float(np.sum(weights[:, None] * p) / spec.config.window_len)
