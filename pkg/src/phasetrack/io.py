"""Readers and writers for frames, detections, annotations, caches and config.

File formats
------------
Detections (JSON lines)
    ``{"frame", "class", "x", "y", "w", "h", "score"}`` plus optional
    ``"track_id"`` and ``"kind"`` (``"detected"`` or ``"estimated"``).
Annotations (JSON lines)
    ``{"frame", "object_id", "class", "x", "y", "w", "h"}``.
Displacement cache (CSV)
    ``from_frame,to_frame,dx,dy,peak_score,flag``, one row per consecutive
    sampled pair.
Run configuration (TOML)
    Flat table of :class:`RunConfig` fields.
"""

from __future__ import annotations

import csv
import glob
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .geometry import BBox
from .metrics import GroundTruthObject
from .registration import Displacement, DisplacementTable, GrayFrame, PairResult, to_luminance
from .tracker import DETECTED, ESTIMATED, Detection, TrackerParams

IMAGE_SUFFIXES = (".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp", ".pgm")
CACHE_HEADER = ["from_frame", "to_frame", "dx", "dy", "peak_score", "flag"]

_DET_REQUIRED = ("frame", "class", "x", "y", "w", "h", "score")
_DET_OPTIONAL = ("track_id", "kind")
_ANN_REQUIRED = ("frame", "object_id", "class", "x", "y", "w", "h")


class FormatError(ValueError):
    """A file could not be parsed or failed validation."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def _num(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"field {name!r} must be a number, got {value!r}")
    return value


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"field {name!r} must be an integer, got {value!r}")
    return value


def _records(path) -> Iterable[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(path, lineno, "record must be a JSON object")
            yield lineno, rec


def _check_keys(path, lineno: int, rec: dict, required: Sequence[str], optional: Sequence[str] = ()) -> None:
    missing = [k for k in required if k not in rec]
    unknown = sorted(set(rec) - set(required) - set(optional))
    if missing:
        raise FormatError(path, lineno, f"missing fields {missing}")
    if unknown:
        raise FormatError(path, lineno, f"unknown fields {unknown}")


def _box(rec: dict) -> BBox:
    return BBox(*(_num(rec[k], k) for k in ("x", "y", "w", "h")))


def parse_detection(rec: dict) -> Detection:
    score = _num(rec["score"], "score")
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    kind = rec.get("kind")
    if kind is not None and kind not in (DETECTED, ESTIMATED):
        raise ValueError(f"kind must be {DETECTED!r} or {ESTIMATED!r}, got {kind!r}")
    track_id = rec.get("track_id")
    if track_id is not None:
        track_id = _int(track_id, "track_id")
    label = rec["class"]
    if not isinstance(label, str):
        raise ValueError(f"class must be a string, got {label!r}")
    return Detection(_int(rec["frame"], "frame"), label, _box(rec), score, track_id, kind)


def load_detections(path) -> dict[int, list[Detection]]:
    """Detections grouped by frame, each group sorted by descending score."""
    out: dict[int, list[Detection]] = {}
    for lineno, rec in _records(path):
        _check_keys(path, lineno, rec, _DET_REQUIRED, _DET_OPTIONAL)
        try:
            det = parse_detection(rec)
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        out.setdefault(det.frame, []).append(det)
    return {f: _sort_frame(v) for f, v in sorted(out.items())}


def _sort_frame(dets: list[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: -d.score)


def _fmt(v: float):
    v = float(v)
    return int(v) if v.is_integer() and abs(v) < 2**53 else v


def detection_record(d: Detection) -> dict:
    rec = {"frame": d.frame, "class": d.class_label}
    rec.update(zip(("x", "y", "w", "h"), d.box.as_tuple()))
    rec["score"] = d.score
    if d.track_id is not None:
        rec["track_id"] = d.track_id
    if d.kind is not None:
        rec["kind"] = d.kind
    return rec


def save_detections(dets: Mapping[int, Sequence[Detection]] | Iterable[Detection], path) -> None:
    if isinstance(dets, Mapping):
        flat = [d for f in sorted(dets) for d in _sort_frame(list(dets[f]))]
    else:
        flat = sorted(dets, key=lambda d: (d.frame, -d.score))
    with open(path, "w") as fh:
        for d in flat:
            fh.write(json.dumps(detection_record(d)) + "\n")


def load_annotations(path) -> list[GroundTruthObject]:
    """Ground-truth objects, one per ``object_id``, sorted by id."""
    objects: dict[int, GroundTruthObject] = {}
    for lineno, rec in _records(path):
        _check_keys(path, lineno, rec, _ANN_REQUIRED)
        try:
            frame = _int(rec["frame"], "frame")
            oid = _int(rec["object_id"], "object_id")
            label = rec["class"]
            if not isinstance(label, str):
                raise ValueError(f"class must be a string, got {label!r}")
            box = _box(rec)
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
        obj = objects.get(oid)
        if obj is None:
            objects[oid] = GroundTruthObject(oid, label, {frame: box})
            continue
        if frame in obj.boxes:
            raise FormatError(path, lineno, f"duplicate box for object {oid} on frame {frame}")
        if obj.class_label != label:
            raise FormatError(path, lineno, f"object {oid} changes class from {obj.class_label!r} to {label!r}")
        obj.boxes[frame] = box
    for obj in objects.values():
        obj.boxes = dict(sorted(obj.boxes.items()))
    return [objects[k] for k in sorted(objects)]


def save_annotations(gts: Iterable[GroundTruthObject], path) -> None:
    rows = []
    for g in gts:
        for frame, box in g.boxes.items():
            rec = {"frame": frame, "object_id": g.object_id, "class": g.class_label}
            rec.update(zip(("x", "y", "w", "h"), box.as_tuple()))
            rows.append(rec)
    rows.sort(key=lambda r: (r["frame"], r["object_id"]))
    with open(path, "w") as fh:
        for rec in rows:
            fh.write(json.dumps(rec) + "\n")


def save_displacements(table: DisplacementTable, path) -> None:
    """Write the pairwise chain behind ``table`` as a displacement cache."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CACHE_HEADER)
        for p in table.pairs:
            d = p.displacement
            w.writerow([p.from_frame, p.to_frame, _fmt(d.dx), _fmt(d.dy), repr(float(d.peak_score)), p.flag])


def load_displacements(path) -> DisplacementTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CACHE_HEADER:
            raise FormatError(path, 1, f"expected header {','.join(CACHE_HEADER)}")
        pairs = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(CACHE_HEADER):
                raise FormatError(path, lineno, f"expected {len(CACHE_HEADER)} columns, got {len(row)}")
            try:
                a, b = int(row[0]), int(row[1])
                dx, dy, score = float(row[2]), float(row[3]), float(row[4])
            except ValueError as exc:
                raise FormatError(path, lineno, str(exc)) from None
            if not all(math.isfinite(v) for v in (dx, dy, score)):
                raise FormatError(path, lineno, "non-finite value")
            pairs.append(PairResult(a, b, Displacement(dx, dy, score), row[5]))
    if not pairs:
        raise FormatError(path, None, "displacement cache has no rows")
    try:
        return DisplacementTable.from_pairs(pairs)
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


def _read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB", "RGBA"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode == "F":
            arr = np.asarray(im, dtype=np.float64)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return to_luminance(arr)


def _frame_sources(source) -> list:
    source = str(source)
    if os.path.isdir(source):
        paths = sorted(p for p in Path(source).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    elif any(ch in source for ch in "*?["):
        paths = sorted(Path(p) for p in glob.glob(source))
    elif source.endswith(".npy"):
        stack = np.load(source)
        if stack.ndim not in (3, 4):
            raise FormatError(source, None, f"expected a (n, h, w[, c]) stack, got shape {stack.shape}")
        return list(stack)
    else:
        raise FormatError(source, None, "not a frame directory, glob pattern or .npy stack")
    if not paths:
        raise FormatError(source, None, "no frame images found")
    return paths


def load_frames(source, stride: int = 1) -> list[GrayFrame]:
    """Frames ``0, stride, 2*stride, ...`` of a directory, glob or ``.npy`` stack.

    Image files are ordered by name and their position gives the ordinal.
    Samples are converted to luminance in [0, 1].
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    sources = _frame_sources(source)
    frames = []
    shape = None
    for idx in range(0, len(sources), stride):
        item = sources[idx]
        arr = _read_image(item) if isinstance(item, Path) else to_luminance(item)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise FormatError(item if isinstance(item, Path) else source, None,
                              f"frame {idx} has size {arr.shape[::-1]}, expected {shape[::-1]}")
        frames.append(GrayFrame(arr, idx))
    return frames


def save_frames(frames: Sequence[GrayFrame], directory) -> list[Path]:
    """Store frames as 16-bit greyscale PNGs named by ordinal."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for fr in frames:
        data = np.round(np.clip(fr.samples, 0.0, 1.0) * 65535.0).astype(np.uint16)
        path = directory / f"frame_{fr.frame_index:06d}.png"
        Image.fromarray(data).save(path)
        out.append(path)
    return out


def parse_grid(text: str) -> list[float]:
    """``"start:step:stop"`` (stop inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            start, step, stop = (float(v) for v in text.split(":"))
            if step <= 0:
                raise ValueError("grid step must be positive")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + i * step, 10) for i in range(max(n, 0))]
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"invalid t_v grid {text!r}: {exc}") from None
    if not values:
        raise ValueError(f"empty t_v grid {text!r}")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"t_v grid values must lie in [0, 1], got {v}")
    return values


DEFAULT_GRID = "0.05:0.05:0.95"


@dataclass
class RunConfig:
    stride: int = 1
    downscale: int | None = None
    iou_threshold: float = 0.5
    t_v: float = 0.4
    max_gap: int = 10
    track_match_threshold: float = 0.5
    confidence_floor: float = 0.05
    sweep_grid: list[float] = field(default_factory=lambda: parse_grid(DEFAULT_GRID))
    seed: int = 0
    class_aware: bool = True
    trim_trailing: bool = False
    window: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.downscale is not None and self.downscale < 1:
            raise ValueError("downscale must be >= 1")
        if not 0.0 < self.track_match_threshold <= 1.0:
            raise ValueError("track_match_threshold must be in (0, 1]")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError("confidence_floor must be in [0, 1]")
        for v in self.sweep_grid:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"sweep grid values must lie in [0, 1], got {v}")
        self.tracker_params()

    def tracker_params(self) -> TrackerParams:
        return TrackerParams(self.iou_threshold, self.t_v, self.max_gap, self.class_aware, self.trim_trailing)

    def to_dict(self) -> dict:
        return asdict(self)


_CONFIG_TYPES = {
    "stride": int, "downscale": int, "iou_threshold": float, "t_v": float, "max_gap": int,
    "track_match_threshold": float, "confidence_floor": float, "sweep_grid": list, "seed": int,
    "class_aware": bool, "trim_trailing": bool, "window": bool,
}


def config_from_dict(data: Mapping, path="<config>") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise FormatError(path, None, f"unknown config keys {unknown}")
    kw = {}
    for key, value in data.items():
        want = _CONFIG_TYPES[key]
        if key == "sweep_grid":
            if isinstance(value, str):
                value = parse_grid(value)
            elif isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
                value = [float(v) for v in value]
            else:
                raise FormatError(path, None, "sweep_grid must be a grid string or a list of numbers")
        elif want is bool:
            if not isinstance(value, bool):
                raise FormatError(path, None, f"{key} must be a boolean")
        elif want is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise FormatError(path, None, f"{key} must be an integer")
        elif isinstance(value, bool) or not isinstance(value, (int, float)):
            raise FormatError(path, None, f"{key} must be a number")
        else:
            value = float(value)
        kw[key] = value
    try:
        return RunConfig(**kw)
    except ValueError as exc:
        raise FormatError(path, None, str(exc)) from None


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(path, None, f"invalid TOML ({exc})") from None
    return config_from_dict(data, path)
