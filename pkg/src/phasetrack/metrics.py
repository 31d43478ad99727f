"""Detection- and track-level evaluation against ground truth."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox, intersection_area, iou, translate
from .registration import DisplacementTable
from .tracker import Detection, Track, filter_tracks, greedy_match

DEFAULT_MATCH_THRESHOLD = 0.5


class UndefinedMetric(ValueError):
    """A metric has no defined value for the given input (e.g. AP without ground truth)."""


@dataclass
class GroundTruthObject:
    object_id: int
    class_label: str
    boxes: dict[int, BBox]

    def __post_init__(self):
        if not self.boxes:
            raise ValueError(f"ground-truth object {self.object_id} has no boxes")


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    ap50: float | None = None
    sweep: list[tuple[float, float, float]] = field(default_factory=list)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, **kw) -> "EvalReport":
        pr, rc, f1 = prf(tp, fp, fn)
        return cls(tp, fp, fn, pr, rc, f1, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep"] = [{"tv": tv, "precision": p, "recall": r} for tv, p, r in self.sweep]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1; any ratio with a zero denominator is 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _boxes_of(track) -> dict[int, BBox]:
    return track.boxes if isinstance(track, (Track, GroundTruthObject)) else dict(track)


def track_iou(pred, gt, table: DisplacementTable) -> float:
    """Summed per-frame intersection over summed per-frame union.

    Both arguments may be a :class:`Track`, a :class:`GroundTruthObject` or a
    plain ``frame -> BBox`` mapping. Boxes are moved to the reference frame
    first; only frames covered by ``table`` take part. A frame where just one
    side has a box adds its area to the union only.
    """
    a = {f: b for f, b in _boxes_of(pred).items() if f in table}
    b = {f: x for f, x in _boxes_of(gt).items() if f in table}
    inter = union = 0.0
    for frame in sorted(set(a) | set(b)):
        back = -table[frame]
        if frame in a and frame in b:
            pa, pb = translate(a[frame], back), translate(b[frame], back)
            i = intersection_area(pa, pb)
            inter += i
            union += pa.area + pb.area - i
        else:
            union += (a.get(frame) or b.get(frame)).area
    return min(inter / union, 1.0) if union > 0 else 0.0


@dataclass
class TrackMatch:
    tp: int
    fp: int
    fn: int
    assignment: dict[int, int]  # pred track id -> gt object id


def match_tracks(
    preds: Sequence[Track],
    gts: Sequence[GroundTruthObject],
    table: DisplacementTable,
    thresh: float = DEFAULT_MATCH_THRESHOLD,
) -> TrackMatch:
    """Greedy one-to-one matching of predicted tracks to ground-truth objects."""
    if not 0.0 < thresh <= 1.0:
        raise ValueError(f"track match threshold must be in (0, 1], got {thresh}")
    preds, gts = list(preds), list(gts)
    if preds and gts:
        overlap = np.array([[track_iou(p, g, table) for g in gts] for p in preds])
        allowed = np.array([[p.class_label == g.class_label for g in gts] for p in preds])
        pairs = greedy_match(overlap, thresh, row_keys=[p.id for p in preds], allowed=allowed)
    else:
        pairs = []
    assignment = {preds[r].id: gts[c].object_id for r, c in pairs}
    tp = len(pairs)
    return TrackMatch(tp, len(preds) - tp, len(gts) - tp, assignment)


def _gt_by_frame(gts: Iterable[GroundTruthObject]) -> dict[int, list[tuple[str, BBox]]]:
    out: dict[int, list[tuple[str, BBox]]] = {}
    for g in gts:
        for frame, box in g.boxes.items():
            out.setdefault(frame, []).append((g.class_label, box))
    return out


def _flatten(dets) -> list[Detection]:
    if isinstance(dets, Mapping):
        return [d for v in dets.values() for d in v]
    return list(dets)


def ranked_hits(dets, gts: Sequence[GroundTruthObject], iou_threshold: float = 0.5) -> tuple[list[bool], int]:
    """Rank detections by score and mark which ones hit an unclaimed gt box.

    A detection claims the unclaimed same-class gt box of its frame with the
    highest IoU, provided that IoU reaches ``iou_threshold``. Returns the hit
    flags in rank order and the number of gt boxes.
    """
    gt_frames = _gt_by_frame(gts)
    n_gt = sum(len(v) for v in gt_frames.values())
    ranked = sorted(
        enumerate(_flatten(dets)),
        key=lambda p: (-p[1].score, p[1].frame, p[0]),
    )
    claimed: set[tuple[int, int]] = set()
    hits = []
    for _, d in ranked:
        best, best_j = iou_threshold, None
        for j, (label, box) in enumerate(gt_frames.get(d.frame, [])):
            if label != d.class_label or (d.frame, j) in claimed:
                continue
            o = iou(d.box, box)
            if o >= best:
                best, best_j = o, j
                if o == 1.0:
                    break
        if best_j is None:
            hits.append(False)
        else:
            claimed.add((d.frame, best_j))
            hits.append(True)
    return hits, n_gt


def average_precision(hits: Sequence[bool], n_gt: int) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    if n_gt <= 0:
        raise UndefinedMetric("average precision is undefined without ground-truth boxes")
    if not hits:
        return 0.0
    tp = np.cumsum(np.asarray(hits, dtype=float))
    rank = np.arange(1, len(hits) + 1)
    recall = np.concatenate([[0.0], tp / n_gt, [1.0]])
    precision = np.concatenate([[0.0], tp / rank, [0.0]])
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    step = np.nonzero(recall[1:] != recall[:-1])[0]
    return float(np.sum((recall[step + 1] - recall[step]) * precision[step + 1]))


def ap50(dets, gts: Sequence[GroundTruthObject]) -> float:
    """AP at IoU 0.5 over all frames, averaged over ground-truth classes."""
    gts = list(gts)
    classes = sorted({g.class_label for g in gts})
    if not classes:
        raise UndefinedMetric("average precision is undefined without ground-truth boxes")
    flat = _flatten(dets)
    aps = []
    for label in classes:
        hits, n_gt = ranked_hits(
            [d for d in flat if d.class_label == label],
            [g for g in gts if g.class_label == label],
        )
        aps.append(average_precision(hits, n_gt))
    return float(np.mean(aps))


def sweep_tv(
    tracks: Sequence[Track],
    gts: Sequence[GroundTruthObject],
    table: DisplacementTable,
    grid: Iterable[float],
    thresh: float = DEFAULT_MATCH_THRESHOLD,
) -> list[tuple[float, float, float]]:
    """Precision and recall of the voted tracks at each ``t_v`` of ``grid``."""
    points = []
    for tv in sorted(grid):
        if not 0.0 <= tv <= 1.0:
            raise ValueError(f"t_v grid values must lie in [0, 1], got {tv}")
        m = match_tracks(filter_tracks(tracks, tv), gts, table, thresh)
        pr, rc, _ = prf(m.tp, m.fp, m.fn)
        points.append((float(tv), pr, rc))
    return points


def sweep_to_csv(points: Iterable[tuple[float, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tv", "precision", "recall"])
        for tv, p, r in points:
            w.writerow([repr(float(tv)), repr(float(p)), repr(float(r))])
