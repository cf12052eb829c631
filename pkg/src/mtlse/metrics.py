"""Frequency-weighted segmental SNR and segmental SNR, plus improvement reports."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

FRAME_LEN = 256
N_BANDS = 25
WEIGHT_EXPONENT = 0.2
SNR_MIN = -10.0
SNR_MAX = 35.0
ACTIVE_RANGE_DB = 35.0


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(n_bands: int, n_fft: int, fs: int) -> np.ndarray:
    """Triangular filters (n_bands x n_fft/2+1) spaced uniformly on the mel scale over [0, fs/2]."""
    freqs = np.arange(n_fft // 2 + 1) * fs / n_fft
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(fs / 2.0), n_bands + 2))
    fb = np.zeros((n_bands, freqs.size))
    for j in range(n_bands):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[j] = np.clip(np.minimum(rise, fall), 0.0, None)
    fb.setflags(write=False)
    return fb


def _frames(x, frame_len):
    hop = frame_len // 2
    if x.size < frame_len:
        x = np.pad(x, (0, frame_len - x.size))
    n = 1 + (x.size - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def _trim(reference, test):
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    n = min(reference.size, test.size)
    if n == 0:
        raise ValueError("signals are empty after trimming to a common length")
    return reference[:n], test[:n]


def _active(ref_frames, range_db):
    energy = np.sum(ref_frames ** 2, axis=1)
    peak = energy.max()
    if peak <= 0:
        raise ValueError("reference signal is silent")
    return energy >= peak * 10.0 ** (-range_db / 10.0)


def _clamped_db(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = 10.0 * np.log10(num / den)
    snr = np.where(den == 0, SNR_MAX, snr)
    snr = np.where(np.isnan(snr), SNR_MAX, snr)
    return np.clip(snr, SNR_MIN, SNR_MAX)


def fwssnr(reference, test, fs: int = 16000, frame_len: int = FRAME_LEN, n_bands: int = N_BANDS,
           gamma: float = WEIGHT_EXPONENT) -> float:
    """Frequency-weighted segmental SNR in dB (clamped per band to [-10, 35])."""
    ref, tst = _trim(reference, test)
    window = get_window("hann", frame_len)
    rf = _frames(ref, frame_len)
    tf = _frames(tst, frame_len)
    active = _active(rf * window, ACTIVE_RANGE_DB)
    fb = mel_filterbank(n_bands, frame_len, fs)
    bx = np.abs(np.fft.rfft(rf[active] * window, axis=1)) @ fb.T
    bt = np.abs(np.fft.rfft(tf[active] * window, axis=1)) @ fb.T
    snr = _clamped_db(bx ** 2, (bx - bt) ** 2)
    w = bx ** gamma
    wsum = w.sum(axis=1)
    keep = wsum > 0
    # averaged as offsets from the ceiling so a perfect match is exactly SNR_MAX
    frame_offsets = np.sum(w[keep] * (snr[keep] - SNR_MAX), axis=1) / wsum[keep]
    return float(SNR_MAX + np.mean(frame_offsets))


def segsnr(reference, test, frame_len: int = FRAME_LEN) -> float:
    """Time-domain segmental SNR in dB over speech-active frames, clamped to [-10, 35]."""
    ref, tst = _trim(reference, test)
    rf = _frames(ref, frame_len)
    ef = rf - _frames(tst, frame_len)
    active = _active(rf, ACTIVE_RANGE_DB)
    snr = _clamped_db(np.sum(rf[active] ** 2, axis=1), np.sum(ef[active] ** 2, axis=1))
    return float(SNR_MAX + np.mean(snr - SNR_MAX))


@dataclass
class EvalRow:
    scene_id: str
    condition: str
    fwssnr_in: float
    fwssnr_out: float
    segsnr_in: float
    segsnr_out: float

    @property
    def delta_fwssnr(self) -> float:
        return self.fwssnr_out - self.fwssnr_in

    @property
    def delta_segsnr(self) -> float:
        return self.segsnr_out - self.segsnr_in


def evaluate_scene(scene, enhanced, hop: int = 128) -> EvalRow:
    """Scores of the microphone and enhanced signals against the direct+early reference."""
    enhanced = np.asarray(enhanced, dtype=np.float64)
    if abs(enhanced.size - scene.x.size) > hop:
        raise ValueError(f"{scene.scene_id}: enhanced length {enhanced.size} differs from "
                         f"reference length {scene.x.size} by more than {hop} samples")
    fs = getattr(scene, "sample_rate", 16000)
    return EvalRow(
        scene.scene_id,
        scene.condition,
        fwssnr(scene.x, scene.y, fs),
        fwssnr(scene.x, enhanced, fs),
        segsnr(scene.x, scene.y),
        segsnr(scene.x, enhanced),
    )


REPORT_COLUMNS = ("id", "condition", "fwssnr_in", "fwssnr_out", "delta_fwssnr",
                  "segsnr_in", "segsnr_out", "delta_segsnr")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, row: EvalRow):
        self.rows.append(row)

    def mean(self, attr: str, condition: str | None = None) -> float:
        vals = [getattr(r, attr) for r in self.rows if condition is None or r.condition == condition]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def conditions(self) -> list:
        return sorted({r.condition for r in self.rows})

    def to_text(self) -> str:
        lines = ["\t".join(REPORT_COLUMNS)]
        for r in self.rows:
            lines.append("\t".join([r.scene_id, r.condition] + [
                f"{v:.10f}" for v in (r.fwssnr_in, r.fwssnr_out, r.delta_fwssnr,
                                     r.segsnr_in, r.segsnr_out, r.delta_segsnr)]))
        lines.append("")
        lines.append("# summary")
        lines.append("# condition\tcount\tfwssnr_in\tfwssnr_out\tdelta_fwssnr\tdelta_segsnr")
        for cond in [*self.conditions, None]:
            count = sum(1 for r in self.rows if cond is None or r.condition == cond)
            lines.append("# " + "\t".join([cond or "all", str(count)] + [
                f"{self.mean(a, cond):.10f}" for a in ("fwssnr_in", "fwssnr_out", "delta_fwssnr", "delta_segsnr")]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        report = cls()
        for line in text.splitlines():
            if not line or line.startswith("#") or line.startswith("id\t"):
                continue
            f = line.split("\t")
            report.add(EvalRow(f[0], f[1], float(f[2]), float(f[3]), float(f[5]), float(f[6])))
        return report
