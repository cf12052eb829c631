"""End-to-end comparison runs: synthesize -> features -> train -> enhance -> evaluate.

An experiment config is an INI file.  It either points at a separate scene
manifest (``manifest = path``) or carries the manifest sections itself
(``[dataset]``, ``[train]``, ``[validation]``, ``[test]``).  Extra sections:

    [experiment]  methods, seed
    [grid]        hidden_units, learning_rates, weight_decays, epochs, batch_size,
                  single_architectures, multi_architectures, dtype, selection
    [multitask]   lambda1, lambda2
    [enhance]     beta, gain_floor
    [features]    alpha, context, window_len, hop, xi_max, p_h1, xi_h1_db

Methods are ``mag``, ``gain``, ``psd``, ``sir`` (single task), ``<target>+spp``
(multi-task, adaptive loss), ``<target>+spp:fixed`` (fixed-weight loss) and
``oracle-<target>`` (oracle estimates, no training).
"""

from __future__ import annotations

import configparser
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import enhance as enh
from . import nn
from .features import (FeatureConfig, FrameDataset, SppParams, TargetKind, compute_targets, same_inputs,
                       scene_spectra)
from .metrics import EvalReport, evaluate_scene
from .scene import Manifest, ManifestError, build_dataset, load_manifest, parse_manifest
from .stft import StftConfig, istft

logger = logging.getLogger(__name__)

SINGLE_TARGETS = ("mag", "gain", "psd", "sir")


@dataclass(frozen=True)
class Method:
    name: str
    target: TargetKind
    loss_mode: str = "single"
    oracle: bool = False

    @property
    def multitask(self) -> bool:
        return self.loss_mode != "single"


def parse_method(token: str) -> Method:
    token = token.strip()
    if token.startswith("oracle-"):
        kind = TargetKind.parse(token[len("oracle-"):])
        if kind is TargetKind.SPP:
            raise ValueError("SPP is not an enhancement target")
        return Method(token, kind, "single", oracle=True)
    base, _, variant = token.partition(":")
    primary, plus, secondary = base.partition("+")
    kind = TargetKind.parse(primary)
    if kind is TargetKind.SPP:
        raise ValueError("SPP can only be estimated as the secondary task (e.g. 'gain+spp')")
    if not plus:
        if variant:
            raise ValueError(f"loss variant {variant!r} given for a single-task method {token!r}")
        return Method(token, kind)
    if secondary != "spp":
        raise ValueError(f"only SPP is supported as a secondary task, got {secondary!r}")
    mode = {"": "multi-adaptive", "adaptive": "multi-adaptive", "fixed": "multi-fixed"}.get(variant)
    if mode is None:
        raise ValueError(f"unknown loss variant {variant!r} in {token!r}")
    return Method(token, kind, mode)


@dataclass(frozen=True)
class GridConfig:
    hidden_units: tuple = (500, 1000, 1500)
    learning_rates: tuple = (1e-3, 1e-4)
    weight_decays: tuple = (0.0, 1e-3)
    epochs: int = 200
    batch_size: int = 128
    single_architectures: tuple = ("a", "b")
    multi_architectures: tuple = ("c", "d", "e")
    dtype: str = "float32"
    selection: str = "primary"


@dataclass
class ExperimentConfig:
    manifest: Manifest
    methods: list
    grid: GridConfig = field(default_factory=GridConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    beta: float = 0.98
    gain_floor: float = 0.0

    def train_config(self, method: Method) -> nn.TrainConfig:
        g = self.grid
        archs = g.multi_architectures if method.multitask else g.single_architectures
        return nn.TrainConfig(g.hidden_units, g.learning_rates, g.weight_decays, archs, g.epochs,
                              g.batch_size, self.seed, method.loss_mode, self.lambda1, self.lambda2,
                              g.selection, g.dtype)


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _words(text):
    return tuple(t for t in text.replace(",", " ").split())


def grid_from_section(s) -> GridConfig:
    d = GridConfig()
    return GridConfig(
        _ints(s["hidden_units"]) if "hidden_units" in s else d.hidden_units,
        _floats(s["learning_rates"]) if "learning_rates" in s else d.learning_rates,
        _floats(s["weight_decays"]) if "weight_decays" in s else d.weight_decays,
        int(s.get("epochs", d.epochs)),
        int(s.get("batch_size", d.batch_size)),
        _words(s["single_architectures"]) if "single_architectures" in s else d.single_architectures,
        _words(s["multi_architectures"]) if "multi_architectures" in s else d.multi_architectures,
        s.get("dtype", d.dtype),
        s.get("selection", d.selection),
    )


def load_grid(path) -> GridConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(Path(path).read_text(encoding="utf-8"))
    except (OSError, configparser.Error) as exc:
        raise ManifestError(f"cannot read grid config {path}: {exc}") from exc
    if not cp.has_section("grid"):
        raise ManifestError(f"{path}: no [grid] section")
    return grid_from_section(cp["grid"])


def parse_experiment(text: str, base_dir=".") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ManifestError(f"malformed experiment config: {exc}") from exc
    base_dir = Path(base_dir)
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    if "manifest" in ex:
        path = Path(ex["manifest"])
        manifest = load_manifest(path if path.is_absolute() else base_dir / path)
    else:
        manifest = parse_manifest(text, base_dir)
    methods = [parse_method(t) for t in _words(ex.get("methods", "mag gain psd sir"))]
    if not methods:
        raise ManifestError("no methods listed")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ManifestError(f"duplicate methods in {names}")

    grid = grid_from_section(cp["grid"]) if cp.has_section("grid") else GridConfig()
    feats = FeatureConfig()
    if cp.has_section("features"):
        s = cp["features"]
        p_h1 = float(s.get("p_h1", 0.5))
        feats = FeatureConfig(
            StftConfig(int(s.get("window_len", 256)), int(s.get("hop", 128)), manifest.sample_rate),
            float(s.get("alpha", 0.85)),
            int(s.get("context", 3)),
            SppParams(p_h1, 1.0 - p_h1, float(s.get("xi_h1_db", 15.0))),
            float(s.get("xi_max", 1e3)),
            float(s.get("eps_rel", 1e-10)),
        )
    else:
        feats = replace(feats, stft=StftConfig(sample_rate=manifest.sample_rate))
    mt = cp["multitask"] if cp.has_section("multitask") else {}
    en = cp["enhance"] if cp.has_section("enhance") else {}
    cfg = ExperimentConfig(
        manifest, methods, grid, feats,
        seed=int(ex.get("seed", manifest.seed)),
        lambda1=float(mt.get("lambda1", 1.0)),
        lambda2=float(mt.get("lambda2", 1.0)),
        beta=float(en.get("beta", 0.98)),
        gain_floor=float(en.get("gain_floor", 0.0)),
    )
    for method in methods:
        if not method.oracle:
            cfg.train_config(method)  # validates grid/architecture combinations
    for split in ("train", "validation", "test"):
        needs = split == "test" or any(not m.oracle for m in methods)
        if needs and split not in manifest.splits:
            raise ManifestError(f"experiment needs a [{split}] split")
    return cfg


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read experiment config {path}: {exc}") from exc
    return parse_experiment(text, path.parent)


def describe_plan(cfg: ExperimentConfig) -> list:
    ds = build_dataset(cfg.manifest)
    lines = []
    for split in ("train", "validation", "test"):
        n = len(ds.split(split))
        if n:
            lines.append(f"synthesize {split}: {n} scenes")
    for m in cfg.methods:
        if m.oracle:
            lines.append(f"method {m.name}: oracle {m.target.value} estimates")
            continue
        tc = cfg.train_config(m)
        n_cells = sum(1 for _ in tc.cells())
        lines.append(f"method {m.name}: target={m.target.value} loss={m.loss_mode} "
                     f"archs={','.join(tc.architectures)} cells={n_cells} epochs={tc.epochs}")
    lines.append(f"evaluate: {len(ds.split('test'))} test scenes x {len(cfg.methods)} methods")
    return lines


def frame_sets(scenes, methods, cfg: FeatureConfig, dtype="float32") -> dict:
    """One FrameDataset per (target, multitask) among ``methods``, built in one pass."""
    sets = {}
    for m in methods:
        if m.oracle:
            continue
        key = (m.target, m.multitask)
        if key not in sets:
            leader = next((ds for ds in sets.values() if ds.owns_inputs and same_inputs(ds.kind, m.target)), None)
            sets[key] = FrameDataset(m.target, cfg, with_spp=m.multitask, dtype=dtype, inputs_from=leader)
    if not sets:
        return sets
    for scene in scenes:
        sp = scene_spectra(scene, cfg)
        for ds in sets.values():
            ds.add_scene(scene, sp)
    for ds in sets.values():
        ds._finalize()
    return sets


def oracle_enhance(scene, kind: TargetKind, cfg: FeatureConfig, beta=0.98, gain_floor=0.0) -> np.ndarray:
    sp = scene_spectra(scene, cfg)
    if kind is TargetKind.MAGNITUDE:
        out = enh.apply_magnitude(sp.Y, compute_targets(scene, kind, cfg, sp))
    elif kind is TargetKind.WIENER_GAIN:
        out = enh.apply_gain(sp.Y, compute_targets(scene, kind, cfg, sp), gain_floor)
    elif kind is TargetKind.INTERFERENCE_PSD:
        out = enh.apply_psd(sp.Y, sp.phi_i, beta, gain_floor, sp.eps)
    elif kind is TargetKind.APRIORI_SIR:
        out = enh.apply_sir(sp.Y, compute_targets(scene, kind, cfg, sp), gain_floor)
    else:
        raise ValueError("SPP is not an enhancement target")
    return istft(out)


def train_method(method: Method, cfg: ExperimentConfig, train_sets: dict, val_sets: dict, log=None) -> nn.MlpModel:
    key = (method.target, method.multitask)
    meta = {"method": method.name, **enh.feature_meta(cfg.features)}
    return nn.train(train_sets[key], val_sets[key], cfg.train_config(method), method.target.value, log, meta)


@dataclass
class ExperimentResult:
    reports: dict
    models: dict
    table: str
    timings: dict


def format_table(reports: dict) -> str:
    """Rows: measures; columns: methods; one block over all scenes and one per condition."""
    names = list(reports)
    width = max(12, *(len(n) + 2 for n in names))
    conditions = sorted({c for r in reports.values() for c in r.conditions})
    blocks = [("all", None)] + ([(c, c) for c in conditions] if len(conditions) > 1 else [])
    lines = []
    for title, cond in blocks:
        count = len([r for r in next(iter(reports.values())).rows if cond is None or r.condition == cond])
        lines.append(f"[{title}] ({count} utterances)")
        lines.append("measure".ljust(14) + "".join(n.rjust(width) for n in names))
        for label, attr in (("dfwSSNR", "delta_fwssnr"), ("dsegSNR", "delta_segsnr")):
            lines.append(label.ljust(14) + "".join(f"{reports[n].mean(attr, cond):.2f}".rjust(width) for n in names))
        lines.append("")
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig, out_dir=None, save_models: bool = True) -> ExperimentResult:
    """Run every method on the manifest's splits; optionally write models, logs and reports."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        for sub in ("models", "logs", "reports"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    ds = build_dataset(cfg.manifest)
    timings = {}
    trained = [m for m in cfg.methods if not m.oracle]
    t0 = time.perf_counter()
    train_sets = frame_sets(ds.split("train"), trained, cfg.features, cfg.grid.dtype)
    val_sets = frame_sets(ds.split("validation"), trained, cfg.features, cfg.grid.dtype)
    timings["features"] = time.perf_counter() - t0

    models = {}
    for m in trained:
        t0 = time.perf_counter()
        log = []
        logger.info("training %s", m.name)
        model = train_method(m, cfg, train_sets, val_sets, log)
        models[m.name] = model
        timings[f"train:{m.name}"] = time.perf_counter() - t0
        if out is not None:
            if save_models:
                nn.save_model(model, out / "models" / f"{_safe(m.name)}.mdl")
            write_train_log(out / "logs" / f"{_safe(m.name)}.tsv", log)
    del train_sets, val_sets

    reports = {m.name: EvalReport() for m in cfg.methods}
    t0 = time.perf_counter()
    for scene in ds.split("test"):
        for m in cfg.methods:
            if m.oracle:
                enhanced = oracle_enhance(scene, m.target, cfg.features, cfg.beta, cfg.gain_floor)
            else:
                enhanced = enh.enhance(models[m.name], scene.y, cfg.beta, cfg.gain_floor)
            reports[m.name].add(evaluate_scene(scene, enhanced, cfg.features.stft.hop))
    timings["evaluate"] = time.perf_counter() - t0
    table = format_table(reports)
    if out is not None:
        for name, report in reports.items():
            (out / "reports" / f"{_safe(name)}.tsv").write_text(report.to_text(), encoding="utf-8")
        (out / "summary.txt").write_text(table, encoding="utf-8")
    return ExperimentResult(reports, models, table, timings)


def write_train_log(path, rows):
    lines = ["cell\tepoch\ttrain_loss\tval_loss"]
    lines += [f"{r['cell']}\t{r['epoch']}\t{r['train_loss']:.9g}\t{r['val_loss']:.9g}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _safe(name: str) -> str:
    return name.replace("+", "_").replace(":", "_")
