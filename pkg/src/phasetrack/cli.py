"""Command-line pipeline: register, track, evaluate, sweep, synth, run.

Stages talk only through files. Exit status is 0 on success, 1 when an
evaluation result is undefined and 2 for usage or I/O problems. Set
``PHASETRACK_LOG`` (e.g. ``DEBUG``) to change stderr log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import io as pio
from . import synth as psynth
from .metrics import EvalReport, UndefinedMetric, ap50, match_tracks, sweep_tv, sweep_to_csv
from .registration import DisplacementTable, register_sequence
from .tracker import build_tracks, filter_tracks, tracks_from_detections, tracks_to_detections

log = logging.getLogger("phasetrack")


class UsageError(Exception):
    pass


@contextmanager
def stage(name: str):
    t0 = time.perf_counter()
    yield
    log.info("%s finished in %.3f s", name, time.perf_counter() - t0)


def _ratio(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _grid(text: str) -> list[float]:
    try:
        return pio.parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_config(p):
    p.add_argument("--config", type=Path, help="TOML run configuration; flags override it")


def _add_registration(p):
    p.add_argument("--stride", type=_positive_int)
    p.add_argument("--downscale", type=_positive_int, help="integer downscale before correlation (default: 4 for 4K, else 1)")
    p.add_argument("--confidence-floor", type=_ratio, dest="confidence_floor")
    p.add_argument("--window", action="store_const", const=True, default=None, help="raised-cosine taper before the FFT")


def _add_tracking(p):
    p.add_argument("--tv", type=_ratio, dest="t_v", help="detection-ratio threshold (default 0.4)")
    p.add_argument("--iou", type=_ratio, dest="iou_threshold", help="association IoU threshold (default 0.5)")
    p.add_argument("--max-gap", type=_non_negative_int, dest="max_gap")
    p.add_argument("--class-agnostic", action="store_const", const=False, dest="class_aware", default=None)
    p.add_argument("--trim-trailing", action="store_const", const=True, dest="trim_trailing", default=None,
                   help="drop estimates after a track's last detection before voting")


def _add_eval(p):
    p.add_argument("--track-thresh", type=_ratio, dest="track_match_threshold", help="track IoU needed for a match (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasetrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="phase-correlate frames into a displacement cache")
    p.add_argument("frames", help="frame directory, glob pattern or .npy stack")
    p.add_argument("--out", required=True, type=Path)
    _add_registration(p)
    _add_config(p)

    p = sub.add_parser("track", help="build, vote and fill tracks")
    p.add_argument("detections", type=Path)
    p.add_argument("--cache", type=Path, help="displacement cache (default: static camera)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--summary", type=Path, help="write the track summary here instead of stdout")
    p.add_argument("--stride", type=_positive_int, help="frame step assumed when no cache is given")
    _add_tracking(p)
    _add_config(p)

    p = sub.add_parser("evaluate", help="score refined detections against annotations")
    p.add_argument("refined", type=Path)
    p.add_argument("annotations", type=Path)
    p.add_argument("--cache", type=Path)
    p.add_argument("--out", type=Path, help="also write the report here")
    _add_eval(p)
    _add_config(p)

    p = sub.add_parser("sweep", help="precision/recall over a grid of t_v")
    p.add_argument("detections", type=Path)
    p.add_argument("annotations", type=Path)
    p.add_argument("--cache", type=Path)
    p.add_argument("--grid", type=_grid, dest="sweep_grid", help="start:step:stop or comma list (default 0.05:0.05:0.95)")
    p.add_argument("--out", required=True, type=Path)
    _add_tracking(p)
    _add_eval(p)
    _add_config(p)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--config", type=Path, required=True, dest="synth_config", help="synth TOML")
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("run", help="register, track, evaluate and sweep in one go")
    p.add_argument("--synth", type=Path, help="generate the input from this synth TOML")
    p.add_argument("--frames")
    p.add_argument("--detections", type=Path)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--grid", type=_grid, dest="sweep_grid")
    p.add_argument("--out", required=True, type=Path)
    _add_registration(p)
    _add_tracking(p)
    _add_eval(p)
    _add_config(p)
    return parser


def resolve_config(args) -> pio.RunConfig:
    path = getattr(args, "config", None)
    cfg = pio.load_config(path) if path else pio.RunConfig()
    overrides = {}
    for name in pio.RunConfig.__dataclass_fields__:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    data = cfg.to_dict()
    data.update(overrides)
    try:
        return pio.RunConfig(**data)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _require(path: Path, what: str) -> None:
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")


def _table(cache: Path | None, frames, stride: int = 1) -> DisplacementTable:
    if cache is not None:
        _require(cache, "displacement cache")
        return pio.load_displacements(cache)
    frames = sorted(set(frames))
    if not frames:
        return DisplacementTable.static([0])
    return DisplacementTable.static(range(frames[0], frames[-1] + 1, stride))


def do_register(frames_src, out: Path, cfg: pio.RunConfig) -> DisplacementTable:
    src = str(frames_src)
    if not any(ch in src for ch in "*?[") and not os.path.exists(src):
        raise UsageError(f"frame source not found: {src}")
    with stage("load frames"):
        frames = pio.load_frames(src, cfg.stride)
    with stage("registration"):
        table = register_sequence(frames, 1, cfg.downscale, cfg.confidence_floor, cfg.window)
    pio.save_displacements(table, out)
    log.info("wrote %d displacement rows to %s", len(table.pairs), out)
    return table


def track_summary(tracks, kept_ids) -> list[dict]:
    return [
        {"id": t.id, "class": t.class_label, "l": t.l, "m": t.m, "v": t.v,
         "first_frame": t.frames[0], "last_frame": t.frames[-1], "kept": t.id in kept_ids}
        for t in tracks
    ]


def do_track(det_path: Path, cache: Path | None, out: Path, cfg: pio.RunConfig):
    _require(det_path, "detection file")
    dets = pio.load_detections(det_path)
    table = _table(cache, [f for f, v in dets.items() if v], cfg.stride)
    with stage("tracking"):
        tracks = build_tracks(dets, table, cfg.tracker_params())
        kept = filter_tracks(tracks, cfg.t_v)
    pio.save_detections(tracks_to_detections(kept), out)
    log.info("%d tracks built, %d kept at t_v=%g", len(tracks), len(kept), cfg.t_v)
    return tracks, kept, track_summary(tracks, {t.id for t in kept})


def do_evaluate(refined: Path, ann_path: Path, cache: Path | None, cfg: pio.RunConfig) -> EvalReport:
    _require(refined, "refined detection file")
    _require(ann_path, "annotation file")
    dets = pio.load_detections(refined)
    gts = pio.load_annotations(ann_path)
    frames = [f for f, v in dets.items() if v] + [f for g in gts for f in g.boxes]
    table = _table(cache, frames, cfg.stride)
    try:
        tracks = tracks_from_detections(dets)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with stage("evaluation"):
        m = match_tracks(tracks, gts, table, cfg.track_match_threshold)
        ap = ap50(dets, gts)
    return EvalReport.from_counts(m.tp, m.fp, m.fn, ap50=ap)


def do_sweep(det_path: Path, ann_path: Path, cache: Path | None, out: Path, cfg: pio.RunConfig):
    _require(det_path, "detection file")
    _require(ann_path, "annotation file")
    dets = pio.load_detections(det_path)
    gts = pio.load_annotations(ann_path)
    table = _table(cache, [f for f, v in dets.items() if v] + [f for g in gts for f in g.boxes], cfg.stride)
    with stage("sweep"):
        tracks = build_tracks(dets, table, cfg.tracker_params())
        points = sweep_tv(tracks, gts, table, cfg.sweep_grid, cfg.track_match_threshold)
    sweep_to_csv(points, out)
    return points


def do_synth(config_path: Path, out: Path):
    _require(config_path, "synth config")
    scfg, extras = psynth.load_config(config_path)
    scene = psynth.generate(scfg, noise_seed=extras["noise_seed"])
    dets = psynth.corrupt(scene.gt, scfg.noise, extras["seed"], table=scene.true_table, frame_size=scfg.frame_size)
    out.mkdir(parents=True, exist_ok=True)
    pio.save_frames(scene.frames, out / "frames")
    pio.save_detections(dets, out / "detections.jsonl")
    pio.save_annotations(scene.gt, out / "annotations.jsonl")
    if scene.true_table.pairs:
        pio.save_displacements(scene.true_table, out / "true_displacements.csv")
    return scene


def _emit(text: str, path: Path | None):
    if path is not None:
        path.write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PHASETRACK_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except UndefinedMetric as exc:
        print(f"phasetrack: {exc}", file=sys.stderr)
        return 1
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"phasetrack {args.command}: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "synth":
        do_synth(args.synth_config, args.out)
        return 0

    cfg = resolve_config(args)
    if args.command == "register":
        do_register(args.frames, args.out, cfg)
    elif args.command == "track":
        _, _, summary = do_track(args.detections, args.cache, args.out, cfg)
        _emit(json.dumps(summary, indent=2, sort_keys=True), args.summary)
    elif args.command == "evaluate":
        report = do_evaluate(args.refined, args.annotations, args.cache, cfg)
        if args.out is not None:
            args.out.write_text(report.to_json() + "\n")
        _emit(report.to_json(), None)
    elif args.command == "sweep":
        do_sweep(args.detections, args.annotations, args.cache, args.out, cfg)
    elif args.command == "run":
        return _run(args, cfg)
    return 0


def _run(args, cfg: pio.RunConfig) -> int:
    if args.synth is not None and (args.frames is not None or args.detections is not None):
        raise UsageError("--synth generates its own input; do not combine it with --frames/--detections")
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.synth is not None:
        do_synth(args.synth, out / "input")
        frames, detections, annotations = out / "input" / "frames", out / "input" / "detections.jsonl", out / "input" / "annotations.jsonl"
    else:
        if args.frames is None or args.detections is None:
            raise UsageError("run needs --synth, or both --frames and --detections")
        frames, detections, annotations = args.frames, args.detections, args.annotations

    cache = out / "displacements.csv"
    do_register(frames, cache, cfg)
    refined = out / "refined.jsonl"
    _, _, summary = do_track(Path(detections), cache, refined, cfg)
    (out / "tracks.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if annotations is None:
        return 0
    report = do_evaluate(refined, Path(annotations), cache, cfg)
    report.sweep = do_sweep(Path(detections), Path(annotations), cache, out / "sweep.csv", cfg)
    (out / "report.json").write_text(report.to_json() + "\n")
    sys.stdout.write(report.to_json() + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
