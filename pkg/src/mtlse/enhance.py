"""Waveform reconstruction from network estimates.

All strategies keep the microphone phase.  The ``apply_*`` functions take an
estimate (learned or oracle) on the K x L grid of the microphone STFT and
return the enhanced spectrogram; ``enhance_*`` run a trained model first.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .features import (
    FeatureConfig,
    SppParams,
    TargetKind,
    decision_directed,
    input_frames,
    smooth_psd,
    stack_context,
    wiener_gain,
)
from .stft import ComplexSpectrogram, StftConfig, istft, stft

MAG_EPS = 1e-10


class ModelMismatchError(ValueError):
    pass


def feature_config(model: nn.MlpModel) -> FeatureConfig:
    """Feature settings the model was trained with (stored in its metadata)."""
    meta = model.meta
    stft_cfg = StftConfig(int(meta.get("window_len", 256)), int(meta.get("hop", 128)),
                          int(meta.get("sample_rate", 16000)))
    spp = SppParams(float(meta.get("p_h1", 0.5)), 1.0 - float(meta.get("p_h1", 0.5)),
                    float(meta.get("xi_h1_db", 15.0)))
    return FeatureConfig(stft_cfg, float(meta.get("alpha", 0.85)), int(meta.get("context", 3)), spp,
                         float(meta.get("xi_max", 1e3)), float(meta.get("eps_rel", 1e-10)))


def feature_meta(cfg: FeatureConfig) -> dict:
    return {
        "window_len": cfg.stft.window_len,
        "hop": cfg.stft.hop,
        "sample_rate": cfg.stft.sample_rate,
        "alpha": cfg.alpha,
        "context": cfg.context,
        "p_h1": cfg.spp.p_h1,
        "xi_h1_db": cfg.spp.xi_h1_db,
        "xi_max": cfg.xi_max,
        "eps_rel": cfg.eps_rel,
    }


def model_kind(model: nn.MlpModel) -> TargetKind:
    return TargetKind.parse(model.meta.get("target_kind", "gain"))


def predict_frames(model: nn.MlpModel, Y: ComplexSpectrogram, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Primary-head estimate on the K x L grid of ``Y``."""
    cfg = cfg or feature_config(model)
    frames = input_frames(Y, model_kind(model), cfg)
    return nn.predict(model, stack_context(frames, cfg.context)).T


def _require(model, kind):
    actual = model_kind(model)
    if actual is not kind:
        raise ModelMismatchError(f"model estimates {actual.value!r}, this pipeline needs {kind.value!r}")


def _psd_eps(Y: ComplexSpectrogram, cfg: FeatureConfig) -> float:
    mean = float(np.mean(smooth_psd(Y, cfg.alpha).values))
    return cfg.eps_rel * mean if mean > 0 else np.finfo(float).tiny


# --------------------------------------------------------------------------
# reconstruction from estimates

def apply_magnitude(Y: ComplexSpectrogram, mag_hat, eps: float = MAG_EPS) -> ComplexSpectrogram:
    """|X_hat| / |Y| * Y; bins with |Y| <= eps get scale 0."""
    mag_y = Y.magnitude()
    mag_hat = np.maximum(np.asarray(mag_hat, dtype=np.float64), 0.0)
    ok = mag_y > eps
    scale = np.zeros_like(mag_y)
    scale[ok] = mag_hat[ok] / mag_y[ok]
    return Y.with_data(scale * Y.data)


def apply_gain(Y: ComplexSpectrogram, gain, gain_floor: float = 0.0) -> ComplexSpectrogram:
    gain = np.clip(np.asarray(gain, dtype=np.float64), gain_floor, 1.0)
    return Y.with_data(gain * Y.data)


def apply_sir(Y: ComplexSpectrogram, xi_hat, gain_floor: float = 0.0) -> ComplexSpectrogram:
    xi_hat = np.maximum(np.asarray(xi_hat, dtype=np.float64), 0.0)
    return apply_gain(Y, wiener_gain(xi_hat), gain_floor)


def psd_gains(Y: ComplexSpectrogram, phi_i_hat, beta: float = 0.98, gain_floor: float = 0.0,
              eps: float = 1e-10) -> np.ndarray:
    """Frame-recursive decision-directed SIR -> Wiener gains (K x L)."""
    phi = np.maximum(np.asarray(phi_i_hat, dtype=np.float64), eps)
    y2 = Y.power()
    gains = np.empty_like(y2)
    prev = np.zeros(y2.shape[0])
    for l in range(y2.shape[1]):
        xi = decision_directed(prev, phi[:, l], y2[:, l], beta, eps)
        g = np.clip(wiener_gain(xi), gain_floor, 1.0)
        gains[:, l] = g
        prev = g * g * y2[:, l]
    return gains


def apply_psd(Y: ComplexSpectrogram, phi_i_hat, beta: float = 0.98, gain_floor: float = 0.0,
              eps: float | None = None, cfg: FeatureConfig = FeatureConfig()) -> ComplexSpectrogram:
    if eps is None:
        eps = _psd_eps(Y, cfg)
    return Y.with_data(psd_gains(Y, phi_i_hat, beta, gain_floor, eps) * Y.data)


# --------------------------------------------------------------------------
# model-driven pipelines

def enhance_magnitude(model: nn.MlpModel, y) -> np.ndarray:
    _require(model, TargetKind.MAGNITUDE)
    cfg = feature_config(model)
    Y = stft(y, cfg.stft)
    return istft(apply_magnitude(Y, predict_frames(model, Y, cfg)))


def enhance_gain(model: nn.MlpModel, y, gain_floor: float = 0.0) -> np.ndarray:
    _require(model, TargetKind.WIENER_GAIN)
    cfg = feature_config(model)
    Y = stft(y, cfg.stft)
    return istft(apply_gain(Y, predict_frames(model, Y, cfg), gain_floor))


def enhance_psd(model: nn.MlpModel, y, beta: float = 0.98, gain_floor: float = 0.0) -> np.ndarray:
    _require(model, TargetKind.INTERFERENCE_PSD)
    cfg = feature_config(model)
    Y = stft(y, cfg.stft)
    return istft(apply_psd(Y, predict_frames(model, Y, cfg), beta, gain_floor, cfg=cfg))


def enhance_sir(model: nn.MlpModel, y, gain_floor: float = 0.0) -> np.ndarray:
    _require(model, TargetKind.APRIORI_SIR)
    cfg = feature_config(model)
    Y = stft(y, cfg.stft)
    return istft(apply_sir(Y, predict_frames(model, Y, cfg), gain_floor))


def enhance(model: nn.MlpModel, y, beta: float = 0.98, gain_floor: float = 0.0) -> np.ndarray:
    """Dispatch on the model's primary target kind."""
    kind = model_kind(model)
    if kind is TargetKind.MAGNITUDE:
        return enhance_magnitude(model, y)
    if kind is TargetKind.WIENER_GAIN:
        return enhance_gain(model, y, gain_floor)
    if kind is TargetKind.INTERFERENCE_PSD:
        return enhance_psd(model, y, beta, gain_floor)
    if kind is TargetKind.APRIORI_SIR:
        return enhance_sir(model, y, gain_floor)
    raise ModelMismatchError("SPP models are not enhancement models")
