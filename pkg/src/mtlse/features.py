"""Network inputs and training targets.

Targets per frame (length K each):
  mag   |X(k,l)|
  gain  Wiener gain xi/(xi+1) with xi = PSD_x / PSD_i
  psd   interference PSD PSD_i
  sir   a priori SIR xi, clipped to ``xi_max``
  spp   speech presence probability from |Y|^2 / PSD_i

PSDs are recursively smoothed periodograms of the separately synthesized
components.  Inputs are |Y| stacked over +-T frames, except for the ``psd``
target whose input is the smoothed microphone PSD.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .stft import ComplexSpectrogram, StftConfig, stft


class TargetKind(str, enum.Enum):
    MAGNITUDE = "mag"
    WIENER_GAIN = "gain"
    INTERFERENCE_PSD = "psd"
    APRIORI_SIR = "sir"
    SPP = "spp"

    @property
    def bounded(self) -> bool:
        return self in (TargetKind.WIENER_GAIN, TargetKind.SPP)

    @classmethod
    def parse(cls, value) -> "TargetKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown target kind {value!r}; expected one of {names}") from None


@dataclass(frozen=True)
class SppParams:
    p_h1: float = 0.5
    p_h0: float = 0.5
    xi_h1_db: float = 15.0

    def __post_init__(self):
        if not 0.0 < self.p_h1 < 1.0:
            raise ValueError("p_h1 must lie in (0, 1)")
        if abs(self.p_h1 + self.p_h0 - 1.0) > 1e-12:
            raise ValueError("p_h1 + p_h0 must equal 1")

    @property
    def xi_h1(self) -> float:
        return 10.0 ** (self.xi_h1_db / 10.0)


@dataclass(frozen=True)
class FeatureConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    alpha: float = 0.85
    context: int = 3
    spp: SppParams = field(default_factory=SppParams)
    xi_max: float = 1e3
    eps_rel: float = 1e-10

    @property
    def input_dim(self) -> int:
        return self.stft.num_bins * (2 * self.context + 1)


@dataclass
class PsdTrack:
    values: np.ndarray
    alpha: float


def smooth_psd(spec, alpha: float = 0.85) -> PsdTrack:
    """First-order recursive average of |S|^2 over frames, initialised with frame 0."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if isinstance(spec, ComplexSpectrogram):
        power = spec.power()
    else:
        power = np.abs(np.asarray(spec)) ** 2
    if power.shape[1] == 0:
        return PsdTrack(power.copy(), alpha)
    zi = alpha * power[:, :1]
    values, _ = signal.lfilter([1.0 - alpha], [1.0, -alpha], power, axis=1, zi=zi)
    return PsdTrack(np.maximum(values, 0.0), alpha)


def stack_context(frames, T: int) -> np.ndarray:
    """L x K(2T+1) context vectors: blocks for frames l-T .. l+T, edges replicated."""
    frames = np.asarray(frames)
    K, L = frames.shape
    if L < 1:
        raise ValueError("need at least one frame")
    idx = np.clip(np.arange(L)[:, None] + np.arange(-T, T + 1)[None, :], 0, L - 1)
    return frames.T[idx].reshape(L, K * (2 * T + 1))


def wiener_gain(xi):
    xi = np.asarray(xi, dtype=np.float64)
    if np.any(xi < 0):
        raise ValueError("a priori SIR must be non-negative")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(xi), 1.0, xi / (xi + 1.0))
    return out if out.ndim else float(out)


def spp(posterior, params: SppParams = SppParams()):
    """Speech presence probability given the ratio |Y|^2 / PSD_i."""
    posterior = np.asarray(posterior, dtype=np.float64)
    xi = params.xi_h1
    ratio = params.p_h0 / params.p_h1 * (1.0 + xi)
    out = 1.0 / (1.0 + ratio * np.exp(-posterior * xi / (1.0 + xi)))
    return out if out.ndim else float(out)


def decision_directed(prev_xhat_mag2, phi_i_hat, y_mag2, beta: float = 0.98, eps: float = 1e-10):
    """A priori SIR from the previous enhanced frame and the current ML estimate."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    phi = np.maximum(np.asarray(phi_i_hat, dtype=np.float64), eps)
    ml = np.maximum(np.asarray(y_mag2, dtype=np.float64) / phi - 1.0, 0.0)
    return beta * np.asarray(prev_xhat_mag2, dtype=np.float64) / phi + (1.0 - beta) * ml


def psd_floor(phi_y: np.ndarray, cfg: FeatureConfig) -> float:
    mean = float(np.mean(phi_y))
    return cfg.eps_rel * mean if mean > 0 else np.finfo(float).tiny


@dataclass
class SceneSpectra:
    """STFTs and oracle PSDs of one scene."""

    Y: ComplexSpectrogram
    X: ComplexSpectrogram
    phi_y: np.ndarray
    phi_x: np.ndarray
    phi_i: np.ndarray
    eps: float


def scene_spectra(scene, cfg: FeatureConfig = FeatureConfig()) -> SceneSpectra:
    Y = stft(scene.y, cfg.stft)
    X = stft(scene.x, cfg.stft)
    I = stft(scene.r + scene.n, cfg.stft)
    phi_y = smooth_psd(Y, cfg.alpha).values
    phi_x = smooth_psd(X, cfg.alpha).values
    phi_i = smooth_psd(I, cfg.alpha).values
    return SceneSpectra(Y, X, phi_y, phi_x, phi_i, psd_floor(phi_y, cfg))


def oracle_sir(spectra: SceneSpectra) -> np.ndarray:
    """Unclipped PSD_x / PSD_i with the interference PSD floored."""
    return spectra.phi_x / np.maximum(spectra.phi_i, spectra.eps)


def compute_targets(scene, kind, cfg: FeatureConfig = FeatureConfig(), spectra: SceneSpectra | None = None) -> np.ndarray:
    kind = TargetKind.parse(kind)
    sp = spectra or scene_spectra(scene, cfg)
    if kind is TargetKind.MAGNITUDE:
        return sp.X.magnitude()
    if kind is TargetKind.INTERFERENCE_PSD:
        return sp.phi_i.copy()
    if kind is TargetKind.APRIORI_SIR:
        return np.clip(oracle_sir(sp), 0.0, cfg.xi_max)
    if kind is TargetKind.WIENER_GAIN:
        return wiener_gain(oracle_sir(sp))
    posterior = sp.Y.power() / np.maximum(sp.phi_i, sp.eps)
    return spp(posterior, cfg.spp)


def input_frames(Y: ComplexSpectrogram, kind, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """K x L per-frame network input before context stacking."""
    if TargetKind.parse(kind) is TargetKind.INTERFERENCE_PSD:
        return smooth_psd(Y, cfg.alpha).values
    return Y.magnitude()


def same_inputs(a, b) -> bool:
    """True when targets ``a`` and ``b`` are learned from the same input features."""
    psd = TargetKind.INTERFERENCE_PSD
    return (TargetKind.parse(a) is psd) == (TargetKind.parse(b) is psd)


@dataclass
class TrainingPair:
    input: np.ndarray
    primary_target: np.ndarray
    secondary_target: np.ndarray | None
    frame_index: int
    utterance_id: str


class FrameDataset:
    """Frames of many utterances with context stacking done on demand.

    Each utterance's input frames are stored once with ``T`` replicated edge
    frames on both sides, so ``inputs(idx)`` is a gather rather than a
    precomputed L x K(2T+1) matrix.
    """

    def __init__(self, kind, cfg: FeatureConfig, with_spp: bool = False, dtype=np.float32,
                 inputs_from: "FrameDataset | None" = None):
        self.kind = TargetKind.parse(kind)
        self.cfg = cfg
        self.with_spp = with_spp
        self.dtype = np.dtype(dtype)
        if inputs_from is not None and not same_inputs(self.kind, inputs_from.kind):
            raise ValueError(f"{self.kind.value} and {inputs_from.kind.value} use different input features")
        # a dataset fed the same scenes in the same order can borrow the
        # leader's input frames instead of storing its own copy
        self._leader = inputs_from
        self._moments = None
        self._frames = []
        self._centers = []
        self._targets = []
        self._secondary = []
        self._frame_index = []
        self.utterance_ids = []
        self._utt_of_frame = []
        self._offset = 0
        self._finalized = None

    def add_scene(self, scene, spectra: SceneSpectra | None = None):
        cfg = self.cfg
        sp = spectra or scene_spectra(scene, cfg)
        if self._leader is None:
            frames = input_frames(sp.Y, self.kind, cfg)
            L = frames.shape[1]
        else:
            L = sp.Y.num_frames
        T = cfg.context
        if self._leader is None:
            padded = frames[:, np.r_[np.zeros(T, int), np.arange(L), np.full(T, L - 1)]]
            self._frames.append(padded.T.astype(self.dtype))
        self._centers.append(self._offset + T + np.arange(L))
        self._offset += L + 2 * T
        self._targets.append(compute_targets(scene, self.kind, cfg, sp).T.astype(self.dtype))
        if self.with_spp:
            self._secondary.append(compute_targets(scene, TargetKind.SPP, cfg, sp).T.astype(self.dtype))
        self._frame_index.append(np.arange(L))
        self._utt_of_frame.append(np.full(L, len(self.utterance_ids)))
        self.utterance_ids.append(getattr(scene, "scene_id", str(len(self.utterance_ids))))
        self._finalized = None
        self._moments = None
        return self

    def _finalize(self):
        if self._finalized is None:
            if not self._centers:
                raise ValueError("dataset is empty")
            if self._leader is not None:
                frames = self._leader._finalize()[0]
                if frames.shape[0] != self._offset:
                    raise ValueError("input leader holds different scenes")
            else:
                frames = self._frames[0] if len(self._frames) == 1 else np.concatenate(self._frames)
            self._finalized = (
                frames,
                np.concatenate(self._centers),
                np.concatenate(self._targets),
                np.concatenate(self._secondary) if self.with_spp else None,
            )
            # keep only the concatenated copies
            self._frames = [self._finalized[0]]
            self._centers = [self._finalized[1]]
            self._targets = [self._finalized[2]]
            if self.with_spp:
                self._secondary = [self._finalized[3]]
            self._frame_index = [np.concatenate(self._frame_index)]
            self._utt_of_frame = [np.concatenate(self._utt_of_frame)]
        return self._finalized

    def __len__(self):
        return sum(c.size for c in self._centers)

    @property
    def owns_inputs(self) -> bool:
        return self._leader is None

    @property
    def input_dim(self) -> int:
        return self.cfg.input_dim

    @property
    def target(self) -> np.ndarray:
        return self._finalize()[2]

    @property
    def secondary(self) -> np.ndarray | None:
        return self._finalize()[3]

    def inputs(self, idx) -> np.ndarray:
        frames, centers, _, _ = self._finalize()
        T = self.cfg.context
        rows = centers[np.asarray(idx)][:, None] + np.arange(-T, T + 1)[None, :]
        return frames[rows].reshape(rows.shape[0], -1)

    def feature_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-feature mean and std of the stacked inputs over all frames."""
        if self._leader is not None:
            return self._leader.feature_moments()
        if self._moments is None:
            frames, centers, _, _ = self._finalize()
            T = self.cfg.context
            means, stds = [], []
            for off in range(-T, T + 1):
                block = frames[centers + off]
                means.append(block.mean(axis=0, dtype=np.float64))
                stds.append(block.std(axis=0, dtype=np.float64))
            self._moments = (np.concatenate(means), np.concatenate(stds))
        return self._moments

    def pair(self, i: int) -> TrainingPair:
        self._finalize()
        sec = self.secondary[i] if self.with_spp else None
        return TrainingPair(self.inputs([i])[0], self.target[i], sec,
                            int(self._frame_index[0][i]), self.utterance_ids[int(self._utt_of_frame[0][i])])


def frame_dataset(scenes, kind, cfg: FeatureConfig = FeatureConfig(), with_spp: bool = False,
                  dtype=np.float32) -> FrameDataset:
    ds = FrameDataset(kind, cfg, with_spp, dtype)
    for scene in scenes:
        ds.add_scene(scene)
    ds._finalize()
    return ds


# --------------------------------------------------------------------------
# binary feature cache

CACHE_MAGIC = b"MTLSEFC\0"
CACHE_VERSION = 1
_KIND_CODES = {k: i for i, k in enumerate(TargetKind)}
_CACHE_HEADER = struct.Struct("<8sHHHBBI")


def write_feature_cache(path, inputs, targets, context: int, kind, secondary=None):
    """Header then row-major little-endian float32: input rows, target rows[, SPP rows]."""
    inputs = np.asarray(inputs, dtype="<f4")
    targets = np.asarray(targets, dtype="<f4")
    n, K = targets.shape
    if inputs.shape != (n, K * (2 * context + 1)):
        raise ValueError(f"input shape {inputs.shape} inconsistent with K={K}, T={context}, n={n}")
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, K, context,
                                _KIND_CODES[TargetKind.parse(kind)], int(secondary is not None), n)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(inputs).tobytes())
        fh.write(np.ascontiguousarray(targets).tobytes())
        if secondary is not None:
            fh.write(np.ascontiguousarray(np.asarray(secondary, dtype="<f4")).tobytes())


def read_feature_cache(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CACHE_HEADER.size:
        raise ValueError(f"{path}: truncated feature cache header")
    magic, version, K, T, kind_code, has_sec, n = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: not a feature cache")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported feature cache version {version}")
    D = K * (2 * T + 1)
    expected = _CACHE_HEADER.size + 4 * n * (D + K * (1 + has_sec))
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size {len(raw)} != expected {expected}")
    body = np.frombuffer(raw, dtype="<f4", offset=_CACHE_HEADER.size)
    inputs = body[:n * D].reshape(n, D)
    targets = body[n * D:n * (D + K)].reshape(n, K)
    secondary = body[n * (D + K):].reshape(n, K) if has_sec else None
    return {"kind": list(TargetKind)[kind_code], "context": T, "num_bins": K,
            "inputs": inputs, "targets": targets, "secondary": secondary}
