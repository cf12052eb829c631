"""On-disk scene directories: four float32 component WAVs per scene plus a TSV index."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .audio import read_wav, write_wav
from .scene import ManifestError, SceneComponents

INDEX_NAME = "index.tsv"
COMPONENTS = ("x", "r", "n", "y")
INDEX_COLUMNS = ("id", "split", "condition", "snr_db", "t60_ms", "sample_rate", "samples",
                 "speech", "rir", "noise", "x", "r", "n", "y")


class SceneDirError(ValueError):
    pass


def component_name(scene_id: str, comp: str) -> str:
    return f"{scene_id}_{comp}.wav"


def index_text(scenes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(INDEX_COLUMNS)
    for s in scenes:
        w.writerow([s.scene_id, s.split, s.condition,
                    "" if s.snr_db is None else f"{s.snr_db:g}",
                    "" if s.t60_ms is None else f"{s.t60_ms:g}",
                    s.sample_rate, s.y.size,
                    s.sources.get("speech", ""), s.sources.get("rir", ""), s.sources.get("noise", ""),
                    *(component_name(s.scene_id, c) for c in COMPONENTS)])
    return buf.getvalue()


def write_scene_dir(scenes, out_dir) -> int:
    """Write every scene; returns the number of WAV files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    n = 0
    for s in scenes:
        for comp in COMPONENTS:
            write_wav(out / component_name(s.scene_id, comp), getattr(s, comp), s.sample_rate, float32=True)
            n += 1
        written.append(s)
    (out / INDEX_NAME).write_text(index_text(written), encoding="utf-8")
    return n


def read_index(scene_dir) -> list:
    path = Path(scene_dir) / INDEX_NAME
    if not path.is_file():
        raise SceneDirError(f"{scene_dir}: no {INDEX_NAME}; not a scene directory")
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    if rows and set(INDEX_COLUMNS) - set(rows[0]):
        raise SceneDirError(f"{path}: missing columns {sorted(set(INDEX_COLUMNS) - set(rows[0]))}")
    for row in rows:
        for comp in COMPONENTS:
            if not (Path(scene_dir) / row[comp]).is_file():
                raise SceneDirError(f"{scene_dir}: scene {row['id']} is missing {row[comp]}")
    return rows


def load_scene(scene_dir, row: dict) -> SceneComponents:
    rate = int(row["sample_rate"])
    comps = {c: read_wav(Path(scene_dir) / row[c], rate)[0] for c in COMPONENTS}
    return SceneComponents(
        comps["x"], comps["r"], comps["n"], comps["y"],
        float(row["snr_db"]) if row["snr_db"] else None,
        float(row["t60_ms"]) if row["t60_ms"] else None,
        scene_id=row["id"], split=row["split"], sample_rate=rate,
        sources={"speech": row["speech"], "rir": row["rir"], "noise": row["noise"]},
    )


def iter_split(scene_dir, split: str | None = None):
    """Scenes of one split (all when ``split`` is None), loaded one at a time."""
    for row in read_index(scene_dir):
        if split is None or row["split"] == split:
            yield load_scene(scene_dir, row)


__all__ = ["INDEX_NAME", "COMPONENTS", "SceneDirError", "ManifestError", "write_scene_dir",
           "read_index", "load_scene", "iter_split", "index_text", "component_name"]
