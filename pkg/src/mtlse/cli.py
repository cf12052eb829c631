"""Command-line front end: ``mtlse synthesize|train|enhance|evaluate|experiment``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import enhance as enh
from . import experiment as exp
from . import nn
from .audio import AudioFormatError, read_wav, write_wav
from .features import FeatureConfig, TargetKind
from .metrics import EvalReport, evaluate_scene
from .scene import ManifestError, build_dataset, check_sources, load_manifest
from .scenedir import SceneDirError, iter_split, load_scene, read_index, write_scene_dir
from .stft import StftConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mtlse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


def _check_out_dir(path: Path):
    if path.exists() and not path.is_dir():
        raise UsageError(f"{path} exists and is not a directory")


# --------------------------------------------------------------------------
# synthesize

def cmd_synthesize(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest = replace(manifest, seed=args.seed)
    check_sources(manifest)
    out = Path(args.out)
    _check_out_dir(out)
    ds = build_dataset(manifest)
    if args.split:
        ds = ds.split(args.split)
    if len(ds) == 0:
        raise ManifestError("manifest produces no scenes")
    n = write_scene_dir(ds, out)
    print(f"wrote {len(ds)} scenes ({n} WAV files) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train

def _grid(args) -> exp.GridConfig:
    g = exp.load_grid(args.grid) if args.grid else exp.GridConfig()
    overrides = {}
    if args.hidden:
        overrides["hidden_units"] = tuple(args.hidden)
    if args.lr:
        overrides["learning_rates"] = tuple(args.lr)
    if args.wd:
        overrides["weight_decays"] = tuple(args.wd)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.arch:
        key = "single_architectures" if args.loss == "single" else "multi_architectures"
        overrides[key] = tuple(args.arch)
    return replace(g, **overrides)


def cmd_train(args) -> int:
    if args.target == "spp":
        raise UsageError("SPP is only available as the secondary task; "
                         "use e.g. --target gain --loss multi-adaptive")
    kind = TargetKind.parse(args.target)
    method = exp.Method(kind.value if args.loss == "single" else f"{kind.value}+spp", kind, args.loss)
    grid = _grid(args)
    archs = grid.multi_architectures if method.multitask else grid.single_architectures
    try:
        tcfg = nn.TrainConfig(grid.hidden_units, grid.learning_rates, grid.weight_decays, archs,
                              grid.epochs, grid.batch_size, args.seed or 0, args.loss,
                              args.lambda1, args.lambda2, grid.selection, grid.dtype)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = read_index(args.scene_dir)
    splits = {r["split"] for r in rows}
    for needed in ("train", "validation"):
        if needed not in splits:
            raise SceneDirError(f"{args.scene_dir}: no {needed} scenes")
    rates = {int(r["sample_rate"]) for r in rows}
    if len(rates) != 1:
        raise SceneDirError(f"{args.scene_dir}: mixed sample rates {sorted(rates)}")
    out = Path(args.out)
    if out.is_dir():
        raise UsageError(f"{out} is a directory; give a model file path")
    feats = replace(FeatureConfig(), stft=StftConfig(sample_rate=rates.pop()))

    train_sets = exp.frame_sets(iter_split(args.scene_dir, "train"), [method], feats, tcfg.dtype)
    val_sets = exp.frame_sets(iter_split(args.scene_dir, "validation"), [method], feats, tcfg.dtype)
    key = (kind, method.multitask)
    history = []
    model = nn.train(train_sets[key], val_sets[key], tcfg, kind.value, history,
                     {"method": method.name, **enh.feature_meta(feats)})
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save_model(model, out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.tsv")
    exp.write_train_log(log_path, history)
    m = model.meta
    print(f"best cell {m['cell']} (arch {m['arch']}, {m['hidden_units']} units, lr {m['lr']:g}, "
          f"wd {m['weight_decay']:g}) epoch {m['epoch']} val loss {m['val_loss']:.6g}")
    if m["failed_cells"]:
        print(f"{len(m['failed_cells'])} grid cells diverged and were skipped", file=sys.stderr)
    print(f"model: {out}\nlog: {log_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# enhance

def cmd_enhance(args) -> int:
    model = nn.load_model(args.model)
    kind = enh.model_kind(model)
    if kind is TargetKind.SPP:
        raise enh.ModelMismatchError(f"{args.model} is not an enhancement model")
    rate = enh.feature_config(model).stft.sample_rate
    out = Path(args.out)
    _check_out_dir(out)
    inputs = [Path(p) for p in args.inputs]
    names = [p.name for p in inputs]
    if len(set(names)) != len(names):
        raise UsageError("input files must have distinct names")
    signals = [read_wav(p, expected_rate=rate)[0] for p in inputs]

    def run(y):
        return enh.enhance(model, y, args.beta, args.gain_floor)

    results = _map(run, signals, args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    total_clipped = 0
    for path, y, x_hat in zip(inputs, signals, results):
        assert x_hat.size == y.size
        clipped = write_wav(out / path.name, x_hat, rate)
        total_clipped += clipped
        if clipped:
            print(f"{path.name}: {clipped} samples clipped", file=sys.stderr)
    print(f"enhanced {len(inputs)} files with a {kind.value} model into {out} "
          f"({total_clipped} clipped samples)")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate

def _enhanced_path(enhanced_dir: Path, scene_id: str):
    for name in (f"{scene_id}_y.wav", f"{scene_id}.wav"):
        if (enhanced_dir / name).is_file():
            return enhanced_dir / name
    return None


def cmd_evaluate(args) -> int:
    rows = read_index(args.scene_dir)
    if args.split != "all":
        rows = [r for r in rows if r["split"] == args.split]
    if not rows:
        raise SceneDirError(f"{args.scene_dir}: no scenes in split {args.split!r}")
    enhanced_dir = Path(args.enhanced_dir)
    paths = [_enhanced_path(enhanced_dir, r["id"]) for r in rows]
    missing = [r["id"] for r, p in zip(rows, paths) if p is None]
    if missing:
        raise SceneDirError(f"{enhanced_dir}: no enhanced file for " + ", ".join(missing[:10])
                            + (" ..." if len(missing) > 10 else ""))
    report_path = Path(args.report) if args.report else enhanced_dir / "report.tsv"

    def run(item):
        row, path = item
        scene = load_scene(args.scene_dir, row)
        x_hat, _ = read_wav(path, expected_rate=scene.sample_rate)
        return evaluate_scene(scene, x_hat)

    report = EvalReport(_map(run, list(zip(rows, paths)), args.jobs))
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_text(), encoding="utf-8")
    print(f"{len(report.rows)} utterances: mean dfwSSNR {report.mean('delta_fwssnr'):.2f} dB, "
          f"mean dsegSNR {report.mean('delta_segsnr'):.2f} dB")
    print(f"report: {report_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# experiment

def cmd_experiment(args) -> int:
    cfg = exp.load_experiment(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.manifest = replace(cfg.manifest, seed=args.seed)
    if args.dry_run:
        for line in exp.describe_plan(cfg):
            print(line)
        return EXIT_OK
    check_sources(cfg.manifest)
    out = Path(args.out) if args.out else Path(args.config).with_suffix("")
    _check_out_dir(out)
    result = exp.run_experiment(cfg, out)
    print(result.table)
    print(f"outputs in {out}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mtlse", description="Single-channel speech enhancement with learned T-F targets.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synthesize", help="render the scenes of a manifest to WAV files")
    s.add_argument("manifest")
    s.add_argument("out", help="output scene directory")
    s.add_argument("--seed", type=int, help="override the manifest's master seed")
    s.add_argument("--split", choices=("train", "validation", "test"))
    s.set_defaults(func=cmd_synthesize)

    t = sub.add_parser("train", help="train a model on a scene directory")
    t.add_argument("scene_dir")
    t.add_argument("out", help="output model file")
    t.add_argument("--target", choices=("mag", "gain", "psd", "sir", "spp"), default="gain")
    t.add_argument("--loss", choices=nn.LOSS_MODES, default="single")
    t.add_argument("--lambda1", type=float, default=1.0)
    t.add_argument("--lambda2", type=float, default=1.0)
    t.add_argument("--grid", help="INI file with a [grid] section")
    t.add_argument("--hidden", type=int, nargs="+")
    t.add_argument("--lr", type=float, nargs="+")
    t.add_argument("--wd", type=float, nargs="+")
    t.add_argument("--arch", nargs="+", choices=nn.ARCHITECTURES)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", help="training log path (default: <out>.log.tsv)")
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("enhance", help="enhance WAV files with a trained model")
    e.add_argument("model")
    e.add_argument("inputs", nargs="+")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--beta", type=float, default=0.98, help="decision-directed smoothing (psd models)")
    e.add_argument("--gain-floor", type=float, default=0.0)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_enhance)

    v = sub.add_parser("evaluate", help="score enhanced files against a scene directory")
    v.add_argument("scene_dir")
    v.add_argument("enhanced_dir")
    v.add_argument("--split", default="test", help="split to score, or 'all'")
    v.add_argument("--report", help="report path (default: <enhanced_dir>/report.tsv)")
    v.add_argument("--jobs", type=int, default=1)
    v.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run a full method comparison from a config file")
    x.add_argument("config")
    x.add_argument("--out", help="output directory (default: config path without suffix)")
    x.add_argument("--seed", type=int)
    x.add_argument("--dry-run", action="store_true", help="print the plan and exit")
    x.add_argument("--jobs", type=int, default=1)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    problems = []
    if getattr(args, "jobs", 1) < 1:
        problems.append("--jobs must be >= 1")
    if not 0.0 <= getattr(args, "gain_floor", 0.0) < 1.0:
        problems.append("--gain-floor must be in [0, 1)")
    if not 0.0 <= getattr(args, "beta", 0.5) <= 1.0:
        problems.append("--beta must be in [0, 1]")
    if problems:
        parser.print_usage(sys.stderr)
        print(f"mtlse: error: {'; '.join(problems)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mtlse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (nn.TrainingError, FloatingPointError) as exc:
        print(f"mtlse {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, SceneDirError, AudioFormatError, nn.ModelFormatError,
            enh.ModelMismatchError, OSError, ValueError) as exc:
        print(f"mtlse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
