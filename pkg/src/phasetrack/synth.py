"""Synthetic translational aerial sequences with known ground truth.

A world image (blurred white noise plus bright planted rectangles) is viewed
through a window that moves along a camera path. Object boxes are known in
world coordinates, so per-frame ground truth and the exact displacement table
follow directly. :func:`corrupt` turns ground truth into detector-like output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import BBox, iou, translate
from .metrics import GroundTruthObject
from .registration import Displacement, DisplacementTable, GrayFrame, PairResult
from .tracker import Detection

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Detector failure model.

    ``fp_rate`` is the number of clutter tracks started per frame, realised
    as ``round(fp_rate * n_frames)`` clutter tracks each lasting
    ``fp_lifetime`` frames.
    """

    miss_prob: float = 0.0
    jitter_sigma: float = 0.0
    fp_rate: float = 0.0
    fp_lifetime: int = 1
    fp_size: tuple[float, float] = (16.0, 16.0)
    fp_score: tuple[float, float] = (0.3, 0.9)
    fp_anchor: str = "world"
    fp_class: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ConfigError("miss_prob must lie in [0, 1]")
        if self.jitter_sigma < 0 or self.fp_rate < 0:
            raise ConfigError("jitter_sigma and fp_rate must be non-negative")
        if self.fp_lifetime < 1:
            raise ConfigError("fp_lifetime must be >= 1")
        if self.fp_anchor not in ("world", "frame"):
            raise ConfigError("fp_anchor must be 'world' or 'frame'")
        lo, hi = self.fp_score
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("fp_score must be an ordered range inside [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    """Scene description.

    ``camera_path`` lists per-step camera moves ``(dx, dy)`` in whole pixels;
    an empty path keeps the camera still for ``n_frames`` frames. The window
    for frame 0 has its top-left corner at ``camera_origin`` in the world.
    """

    world_size: tuple[int, int] = (256, 256)
    frame_size: tuple[int, int] = (128, 128)
    camera_path: Sequence[tuple[int, int]] = ()
    camera_origin: tuple[int, int] = (64, 64)
    n_frames: int | None = None
    objects: Sequence[tuple[str, BBox]] = ()
    noise: NoiseModel = field(default_factory=NoiseModel)
    texture_seed: int = 0
    sensor_noise_sigma: float = 0.0
    blur: int = 3
    object_level: float = 1.0

    def __post_init__(self):
        path = [tuple(int(v) for v in step) for step in self.camera_path]
        for step, orig in zip(path, self.camera_path):
            if any(float(a) != b for a, b in zip(orig, step)):
                raise ConfigError("camera path steps must be whole pixels")
        object.__setattr__(self, "camera_path", tuple(path))
        n = self.n_frames if self.n_frames is not None else len(path) + 1
        if n < 1:
            raise ConfigError("need at least one frame")
        if path and len(path) != n - 1:
            raise ConfigError(f"camera path has {len(path)} steps for {n} frames")
        object.__setattr__(self, "n_frames", n)
        ww, wh = self.world_size
        fw, fh = self.frame_size
        for k, (ox, oy) in enumerate(self.positions()):
            if ox < 0 or oy < 0 or ox + fw > ww or oy + fh > wh:
                raise ConfigError(f"frame {k} window at ({ox}, {oy}) leaves the {ww}x{wh} world")
        if self.sensor_noise_sigma < 0:
            raise ConfigError("sensor_noise_sigma must be non-negative")

    def positions(self) -> list[tuple[int, int]]:
        """Top-left world coordinate of each frame's window."""
        x, y = self.camera_origin
        out = [(x, y)]
        steps = self.camera_path or [(0, 0)] * (self.n_frames - 1)
        for dx, dy in steps:
            x, y = x + dx, y + dy
            out.append((x, y))
        return out


@dataclass
class SynthScene:
    frames: list[GrayFrame]
    gt: list[GroundTruthObject]
    true_table: DisplacementTable
    world: np.ndarray
    config: SynthConfig

    def __iter__(self):
        return iter((self.frames, self.gt, self.true_table))


def constant_pan(n_frames: int, step: tuple[int, int]) -> list[tuple[int, int]]:
    return [tuple(step)] * (n_frames - 1)


def random_walk(n_frames: int, max_step: int, bound: int, seed: int) -> list[tuple[int, int]]:
    """Per-step camera moves with ``|step| <= max_step`` and position within ``+-bound``."""
    rng = np.random.default_rng(seed)
    pos = np.zeros(2, dtype=int)
    steps = []
    for _ in range(n_frames - 1):
        step = rng.integers(-max_step, max_step + 1, size=2)
        step = np.clip(pos + step, -bound, bound) - pos
        pos = pos + step
        steps.append((int(step[0]), int(step[1])))
    return steps


def make_world(config: SynthConfig) -> np.ndarray:
    ww, wh = config.world_size
    rng = np.random.default_rng(config.texture_seed)
    tex = uniform_filter(rng.standard_normal((wh, ww)), config.blur, mode="wrap")
    tex = (tex - tex.mean()) / tex.std()
    world = np.clip(0.4 + 0.1 * tex, 0.0, 0.8)
    for _, box in config.objects:
        x0, y0 = int(round(box.x)), int(round(box.y))
        x1, y1 = int(round(box.x2)), int(round(box.y2))
        world[max(y0, 0):max(y1, 0), max(x0, 0):max(x1, 0)] = config.object_level
    return world


def generate(config: SynthConfig, noise_seed: int = 0) -> SynthScene:
    """Render frames, per-frame ground truth and the true displacement table.

    Ground-truth boxes are omitted on frames where the object is not wholly
    inside the view. Table entries are content displacements, the negative
    of the cumulative camera motion.
    """
    world = make_world(config)
    fw, fh = config.frame_size
    positions = config.positions()
    rng = np.random.default_rng(noise_seed)
    frames = []
    for k, (ox, oy) in enumerate(positions):
        crop = world[oy:oy + fh, ox:ox + fw].copy()
        if config.sensor_noise_sigma > 0:
            crop = np.clip(crop + rng.normal(0.0, config.sensor_noise_sigma, crop.shape), 0.0, 1.0)
        frames.append(GrayFrame(crop, k))

    pairs = [
        PairResult(k, k + 1, Displacement(float(a[0] - b[0]), float(a[1] - b[1])))
        for k, (a, b) in enumerate(zip(positions, positions[1:]))
    ]
    table = DisplacementTable.from_pairs(pairs) if pairs else DisplacementTable(0, {0: Displacement(0.0, 0.0)})

    gts = []
    for oid, (label, wbox) in enumerate(config.objects):
        boxes = {}
        for k, (ox, oy) in enumerate(positions):
            b = translate(wbox, (-ox, -oy))
            if b.x >= 0 and b.y >= 0 and b.x2 <= fw and b.y2 <= fh:
                boxes[k] = b
        if boxes:
            gts.append(GroundTruthObject(oid, label, boxes))
    return SynthScene(frames, gts, table, world, config)


def corrupt(
    gt: Sequence[GroundTruthObject],
    noise: NoiseModel,
    seed: int = 0,
    table: DisplacementTable | None = None,
    frame_size: tuple[int, int] | None = None,
) -> dict[int, list[Detection]]:
    """Simulated detector output for the ground truth ``gt``.

    True boxes are dropped with ``miss_prob`` and shifted by Gaussian jitter;
    they keep score 1.0. Clutter needs ``table`` (frames and camera motion)
    and ``frame_size``; each clutter track starts at a random position that
    does not touch any ground-truth box, lasts ``fp_lifetime`` frames and,
    when world-anchored, moves with the scene.
    """
    rng = np.random.default_rng(seed)
    out: dict[int, list[Detection]] = {}
    for g in gt:
        for frame, box in sorted(g.boxes.items()):
            if rng.random() < noise.miss_prob:
                continue
            if noise.jitter_sigma > 0:
                jx, jy = rng.normal(0.0, noise.jitter_sigma, 2)
                box = translate(box, (jx, jy))
            out.setdefault(frame, []).append(Detection(frame, g.class_label, box, 1.0))

    if noise.fp_rate > 0:
        if table is None or frame_size is None:
            raise ConfigError("clutter injection needs the displacement table and frame size")
        out = _add_clutter(out, gt, noise, rng, table, frame_size)
    return {f: sorted(v, key=lambda d: -d.score) for f, v in sorted(out.items())}


def _add_clutter(out, gt, noise: NoiseModel, rng, table: DisplacementTable, frame_size) -> dict:
    frames = table.frames
    n_tracks = int(round(noise.fp_rate * len(frames)))
    labels = sorted({g.class_label for g in gt}) or ["clutter"]
    fw, fh = frame_size
    bw, bh = noise.fp_size
    gt_boxes: dict[int, list[BBox]] = {}
    for g in gt:
        for f, b in g.boxes.items():
            gt_boxes.setdefault(f, []).append(b)
    last_start = max(len(frames) - noise.fp_lifetime, 0)
    for _ in range(n_tracks):
        for _attempt in range(1000):
            start = int(rng.integers(0, last_start + 1))
            box = BBox(rng.uniform(0, fw - bw), rng.uniform(0, fh - bh), bw, bh)
            span = frames[start:start + noise.fp_lifetime]
            placed = []
            for f in span:
                b = box if noise.fp_anchor == "frame" else translate(box, table.between(frames[start], f))
                if b.x < 0 or b.y < 0 or b.x2 > fw or b.y2 > fh:
                    break
                if any(iou(b, o) > 0 or _touches(b, o) for o in gt_boxes.get(f, [])):
                    break
                placed.append((f, b))
            else:
                break
        else:
            raise ConfigError("could not place clutter clear of the ground truth")
        label = noise.fp_class or labels[int(rng.integers(len(labels)))]
        score = float(rng.uniform(*noise.fp_score))
        for f, b in placed:
            out.setdefault(f, []).append(Detection(f, label, b, score))
    return out


def _touches(a: BBox, b: BBox) -> bool:
    return a.x <= b.x2 and b.x <= a.x2 and a.y <= b.y2 and b.y <= a.y2


def _box_from(value) -> BBox:
    if isinstance(value, Mapping):
        return BBox(value["x"], value["y"], value["w"], value["h"])
    return BBox(*value)


def config_from_dict(data: Mapping) -> tuple[SynthConfig, dict]:
    """Build a scene config from a parsed TOML document.

    Recognised tables: top-level scene keys, ``[noise]``, ``[camera]``
    (``path = [[dx, dy], ...]`` or ``pan = [dx, dy]`` / ``random_walk``
    settings) and ``[[objects]]`` entries with ``class`` and ``box``.
    Returns the config and a dict of run settings (``seed``, ``noise_seed``).
    """
    data = dict(data)
    scene_keys = {"world_size", "frame_size", "camera_origin", "n_frames", "texture_seed",
                  "sensor_noise_sigma", "blur", "object_level"}
    known = scene_keys | {"noise", "camera", "objects", "seed", "noise_seed"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown synth config keys {unknown}")
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items() if k in scene_keys}
    cam = dict(data.get("camera", {}))
    n = kw.get("n_frames")
    if "path" in cam:
        kw["camera_path"] = [tuple(s) for s in cam.pop("path")]
    elif "pan" in cam:
        if n is None:
            raise ConfigError("camera.pan needs n_frames")
        kw["camera_path"] = constant_pan(n, tuple(cam.pop("pan")))
    elif "random_walk" in cam:
        if n is None:
            raise ConfigError("camera.random_walk needs n_frames")
        rw = dict(cam.pop("random_walk"))
        kw["camera_path"] = random_walk(n, int(rw.get("max_step", 2)), int(rw.get("bound", 16)), int(rw.get("seed", 0)))
    if cam:
        raise ConfigError(f"unknown camera keys {sorted(cam)}")
    kw["objects"] = [(o["class"], _box_from(o["box"])) for o in data.get("objects", [])]
    noise = dict(data.get("noise", {}))
    for key in ("fp_size", "fp_score"):
        if key in noise:
            noise[key] = tuple(noise[key])
    try:
        kw["noise"] = NoiseModel(**noise)
    except TypeError as exc:
        raise ConfigError(f"bad noise settings: {exc}") from None
    try:
        config = SynthConfig(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad scene settings: {exc}") from None
    extras = {"seed": int(data.get("seed", 0)), "noise_seed": int(data.get("noise_seed", 0))}
    return config, extras


def load_config(path) -> tuple[SynthConfig, dict]:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})") from None
    return config_from_dict(data)
