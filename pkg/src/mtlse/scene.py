"""Reverberant/noisy scene synthesis: y = x + r + n.

``x`` is speech convolved with the direct path and early part of a room
impulse response, ``r`` the late reverberation, ``n`` additive noise scaled to
a broadband SNR relative to the reverberant speech ``x + r``.
"""

from __future__ import annotations

import configparser
import functools
import os
import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from . import synth
from .audio import AudioFormatError, read_wav

SPLITS = ("train", "validation", "test")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int = 16000
    early_ms: float = 50.0
    t60_ms: float | None = None

    @property
    def direct_index(self) -> int:
        return int(np.argmax(np.abs(self.taps)))

    @property
    def early_end(self) -> int:
        """Exclusive end of the early part; always includes the direct path."""
        n_early = int(round(self.early_ms * self.sample_rate / 1000.0))
        return min(self.direct_index + max(n_early, 1), self.taps.size)

    def early(self) -> np.ndarray:
        return self.taps[:self.early_end]

    def late(self) -> np.ndarray:
        late = np.zeros_like(self.taps)
        late[self.early_end:] = self.taps[self.early_end:]
        return late


def synth_rir(t60_ms: float, length_ms: float, direct_delay_ms: float = 2.0, seed: int = 0,
              sample_rate: int = 16000, tail_std: float = 0.04, early_ms: float = 50.0) -> Rir:
    """Exponentially decaying Gaussian tail after a unit direct-path impulse.

    The amplitude envelope ``exp(-3 ln(10) t / T60)`` makes the energy fall by
    60 dB over ``t60_ms``.  ``tail_std`` sets the per-sample tail level at the
    direct path; 0.04 gives a direct-to-reverberant ratio near 0 dB at 500 ms.
    """
    if not 100 <= t60_ms <= 2000:
        raise ValueError(f"t60_ms must lie in [100, 2000], got {t60_ms}")
    if length_ms < t60_ms:
        raise ValueError(f"length_ms ({length_ms}) must be >= t60_ms ({t60_ms})")
    n = int(round(length_ms * sample_rate / 1000.0))
    d = int(round(direct_delay_ms * sample_rate / 1000.0))
    if d >= n:
        raise ValueError("direct_delay_ms exceeds the RIR length")
    rng = np.random.default_rng([seed, 0x0B1B])
    t = np.arange(n - d - 1) + 1
    envelope = np.exp(-3.0 * np.log(10.0) * t / (t60_ms * sample_rate / 1000.0))
    taps = np.zeros(n)
    taps[d] = 1.0
    taps[d + 1:] = tail_std * rng.standard_normal(t.size) * envelope
    # the direct path must stay the absolute maximum
    taps[d + 1:] = np.clip(taps[d + 1:], -0.99, 0.99)
    return Rir(taps, sample_rate, early_ms, float(t60_ms))


def split_convolve(speech, rir: Rir) -> tuple[np.ndarray, np.ndarray]:
    """Convolve with the early and late RIR parts, truncated to ``len(speech)``."""
    s = np.asarray(speech, dtype=np.float64)
    if s.size == 0:
        raise ValueError("speech is empty")
    n = s.size
    x = signal.convolve(s, rir.early())[:n]
    late = rir.taps[rir.early_end:]
    r = np.zeros(n)
    if late.size and np.any(late) and rir.early_end < n:
        r[rir.early_end:] = signal.convolve(s, late)[:n - rir.early_end]
    return x, r


def mean_power(x) -> float:
    return float(np.mean(np.square(x)))


def noise_gain(reverberant, noise, snr_db: float) -> float:
    p_rev = mean_power(reverberant)
    p_noise = mean_power(noise)
    if p_noise == 0.0:
        raise ValueError("noise is silent; cannot scale it to a target SNR")
    return float(np.sqrt(p_rev / (p_noise * 10.0 ** (snr_db / 10.0))))


def fit_noise(noise, n_samples: int, seed: int) -> np.ndarray:
    """Crop (or loop, then crop) ``noise`` to ``n_samples`` at a seeded random offset."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise ValueError("noise is empty")
    rng = np.random.default_rng([seed, 0x0FF5])
    if noise.size < n_samples:
        reps = -(-n_samples // noise.size) + 1
        noise = np.tile(noise, reps)
    offset = int(rng.integers(0, noise.size - n_samples + 1))
    return noise[offset:offset + n_samples]


def mix_at_snr(reverberant, noise, snr_db: float, seed: int = 0) -> np.ndarray:
    """Noise segment matched in length to ``reverberant`` and scaled to ``snr_db``."""
    reverberant = np.asarray(reverberant, dtype=np.float64)
    segment = fit_noise(noise, reverberant.size, seed)
    return noise_gain(reverberant, segment, snr_db) * segment


@dataclass
class SceneComponents:
    x: np.ndarray
    r: np.ndarray
    n: np.ndarray
    y: np.ndarray
    snr_db: float | None
    t60_ms: float | None
    scene_id: str = ""
    split: str = ""
    sample_rate: int = 16000
    sources: dict = field(default_factory=dict)

    @property
    def condition(self) -> str:
        return "reverb" if self.snr_db is None else f"snr{self.snr_db:+g}"


def make_scene(speech, rir: Rir, noise=None, snr_db: float | None = None, seed: int = 0,
               **meta) -> SceneComponents:
    x, r = split_convolve(speech, rir)
    if noise is None or snr_db is None:
        n = np.zeros_like(x)
        snr_db = None
    else:
        n = mix_at_snr(x + r, noise, snr_db, seed)
    y = x + r + n
    return SceneComponents(x, r, n, y, snr_db, rir.t60_ms, sample_rate=rir.sample_rate, **meta)


# --------------------------------------------------------------------------
# manifests

@dataclass(frozen=True)
class SourceRef:
    """A speech, RIR or noise source: a file path or a synthetic generator."""

    kind: str  # "file" or "synth"
    value: str
    params: tuple = ()

    @property
    def ident(self) -> str:
        if self.kind == "file":
            return self.value
        args = " ".join(f"{k}={v}" for k, v in self.params)
        return f"synth:{self.value} {args}".strip()

    def param(self, name, default=None):
        return dict(self.params).get(name, default)


@dataclass
class SplitSpec:
    name: str
    speech: list
    rirs: list
    noises: list
    snr_db: list  # None entry means reverberant-only


@dataclass
class Manifest:
    seed: int
    sample_rate: int
    early_ms: float
    splits: dict
    base_dir: Path = Path(".")


def _parse_kv(tokens):
    out = []
    for tok in tokens:
        if "=" not in tok:
            raise ManifestError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out.append((k, v))
    return tuple(out)


def _parse_sources(text: str, what: str, base_dir: Path) -> list:
    refs = []
    for line in (text or "").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = shlex.split(line)
        if tokens[0] == "synth":
            params = _parse_kv(tokens[1:])
            if what == "speech" and "count" in dict(params):
                p = dict(params)
                count, start = int(p.pop("count")), int(p.pop("seed", 0))
                for i in range(count):
                    refs.append(SourceRef("synth", "speech", tuple(sorted({**p, "seed": str(start + i)}.items()))))
                continue
            refs.append(SourceRef("synth", what, tuple(sorted(params))))
        elif what == "noise" and tokens[0] in synth.NOISE_KINDS and len(tokens) == 1:
            refs.append(SourceRef("synth", tokens[0]))
        else:
            path = Path(line)
            if not path.is_absolute():
                path = base_dir / path
            refs.append(SourceRef("file", os.path.normpath(path)))
    return refs


def _parse_snrs(text: str) -> list:
    vals = []
    for tok in text.replace(",", " ").split():
        vals.append(None if tok.lower() == "none" else float(tok))
    if not vals:
        raise ManifestError("empty snr_db list")
    return vals


def parse_manifest(text: str, base_dir=".") -> Manifest:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    base_dir = Path(base_dir)
    ds = cp["dataset"] if cp.has_section("dataset") else {}
    seed = int(ds.get("seed", 0))
    sample_rate = int(ds.get("sample_rate", 16000))
    early_ms = float(ds.get("early_ms", 50.0))
    default_snr = ds.get("snr_db", "none")
    splits = {}
    for name in SPLITS:
        if not cp.has_section(name):
            continue
        sec = cp[name]
        spec = SplitSpec(
            name=name,
            speech=_parse_sources(sec.get("speech", ""), "speech", base_dir),
            rirs=_parse_sources(sec.get("rir", ""), "rir", base_dir),
            noises=_parse_sources(sec.get("noise", ""), "noise", base_dir),
            snr_db=_parse_snrs(sec.get("snr_db", default_snr)),
        )
        if not spec.speech:
            raise ManifestError(f"[{name}] lists no speech")
        if not spec.rirs:
            raise ManifestError(f"[{name}] lists no rir")
        if any(s is not None for s in spec.snr_db) and not spec.noises:
            raise ManifestError(f"[{name}] has SNRs but no noise sources")
        splits[name] = spec
    if not splits:
        raise ManifestError("manifest defines none of the sections " + ", ".join(SPLITS))
    _check_disjoint(splits)
    return Manifest(seed, sample_rate, early_ms, splits, base_dir)


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, base_dir=path.parent)


def _check_disjoint(splits: dict):
    for attr in ("speech", "rirs"):
        owner = {}
        clashes = []
        for name, spec in splits.items():
            for ref in getattr(spec, attr):
                prev = owner.setdefault(ref.ident, name)
                if prev != name:
                    clashes.append(f"{ref.ident} ({prev}, {name})")
        if clashes:
            label = "speech files" if attr == "speech" else "RIRs"
            raise ManifestError(f"{label} shared between splits: " + "; ".join(sorted(set(clashes))))


@functools.lru_cache(maxsize=256)
def _load_speech(ref: SourceRef, sample_rate: int) -> np.ndarray:
    if ref.kind == "file":
        x, _ = read_wav(ref.value, expected_rate=sample_rate)
        return x
    return synth.synth_speech(float(ref.param("dur", 3.0)), int(ref.param("seed", 0)), sample_rate)


@functools.lru_cache(maxsize=64)
def _load_rir(ref: SourceRef, sample_rate: int, early_ms: float) -> Rir:
    if ref.kind == "file":
        taps, _ = read_wav(ref.value, expected_rate=sample_rate)
        return Rir(taps, sample_rate, early_ms)
    t60 = float(ref.param("t60", 500))
    return synth_rir(
        t60,
        float(ref.param("length", max(1.5 * t60, t60))),
        float(ref.param("delay", 2.0)),
        int(ref.param("seed", 0)),
        sample_rate,
        float(ref.param("tail_std", 0.04)),
        early_ms,
    )


@functools.lru_cache(maxsize=16)
def _load_noise_file(path: str, sample_rate: int) -> np.ndarray:
    x, _ = read_wav(path, expected_rate=sample_rate)
    return x


def check_sources(manifest: Manifest) -> None:
    """Load every source once so missing or malformed files fail before any output is written."""
    for spec in manifest.splits.values():
        try:
            for ref in spec.speech:
                _load_speech(ref, manifest.sample_rate)
            for ref in spec.rirs:
                _load_rir(ref, manifest.sample_rate, manifest.early_ms)
            for ref in spec.noises:
                if ref.kind == "file":
                    _load_noise_file(ref.value, manifest.sample_rate)
                elif ref.value not in synth.NOISE_KINDS:
                    raise ManifestError(f"[{spec.name}] unknown noise kind {ref.value!r}")
        except (AudioFormatError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"[{spec.name}] {exc}") from exc


@dataclass(frozen=True)
class ScenePlan:
    scene_id: str
    split: str
    speech: SourceRef
    rir: SourceRef
    noise: SourceRef | None
    snr_db: float | None
    seed: int


class Dataset:
    """Deterministic scene list; scenes are rendered on access."""

    def __init__(self, manifest: Manifest, plans: list):
        self.manifest = manifest
        self.plans = plans

    def __len__(self):
        return len(self.plans)

    def __iter__(self):
        for plan in self.plans:
            yield self.render(plan)

    def __getitem__(self, i) -> SceneComponents:
        return self.render(self.plans[i])

    def split(self, name: str) -> "Dataset":
        return Dataset(self.manifest, [p for p in self.plans if p.split == name])

    def render(self, plan: ScenePlan) -> SceneComponents:
        m = self.manifest
        speech = _load_speech(plan.speech, m.sample_rate)
        rir = _load_rir(plan.rir, m.sample_rate, m.early_ms)
        noise = None
        if plan.noise is not None:
            if plan.noise.kind == "file":
                noise = _load_noise_file(plan.noise.value, m.sample_rate)
            else:
                noise = synth.synth_noise(plan.noise.value, speech.size, plan.seed, m.sample_rate)
        sources = {"speech": plan.speech.ident, "rir": plan.rir.ident,
                   "noise": plan.noise.ident if plan.noise else ""}
        return make_scene(speech, rir, noise, plan.snr_db, plan.seed,
                          scene_id=plan.scene_id, split=plan.split, sources=sources)


def build_dataset(manifest: Manifest) -> Dataset:
    """Cartesian product speech x RIR x SNR x noise per split, with per-scene seeds."""
    plans = []
    for split_idx, name in enumerate(SPLITS):
        spec = manifest.splits.get(name)
        if spec is None:
            continue
        i = 0
        for speech in spec.speech:
            for rir in spec.rirs:
                for snr in spec.snr_db:
                    noises = [None] if snr is None else spec.noises
                    for noise in noises:
                        seed = int(np.random.SeedSequence([manifest.seed, split_idx, i]).generate_state(1)[0])
                        plans.append(ScenePlan(f"{name}-{i:05d}", name, speech, rir, noise, snr, seed))
                        i += 1
    return Dataset(manifest, plans)
