"""Track building, gap filling and detection-ratio voting.

Detections are linked frame to frame: each open track's last box is carried
into the current frame with the camera displacement and greedily matched to
the detections there by IoU. Unmatched tracks receive a projected estimate;
a track whose run of estimates would exceed ``max_gap`` is closed. Each
track is then scored by ``v = l / m`` (detections over elements) and kept
when ``v >= t_v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox, iou, translate
from .registration import DisplacementTable

DETECTED = "detected"
ESTIMATED = "estimated"


@dataclass(frozen=True)
class Detection:
    frame: int
    class_label: str
    box: BBox
    score: float = 1.0
    track_id: int | None = None
    kind: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")
        if self.frame < 0:
            raise ValueError(f"frame ordinal must be >= 0, got {self.frame}")
        if self.kind not in (None, DETECTED, ESTIMATED):
            raise ValueError(f"unknown element kind {self.kind!r}")


@dataclass(frozen=True)
class TrackElement:
    frame: int
    box: BBox
    kind: str
    score: float | None = None

    @property
    def detected(self) -> bool:
        return self.kind == DETECTED


@dataclass
class Track:
    id: int
    class_label: str
    elements: list[TrackElement] = field(default_factory=list)

    @property
    def l(self) -> int:
        return sum(1 for e in self.elements if e.detected)

    @property
    def m(self) -> int:
        return len(self.elements)

    @property
    def v(self) -> float:
        return self.l / self.m if self.elements else 0.0

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.elements]

    @property
    def boxes(self) -> dict[int, BBox]:
        return {e.frame: e.box for e in self.elements}

    @property
    def trailing_estimates(self) -> int:
        n = 0
        for e in reversed(self.elements):
            if e.detected:
                break
            n += 1
        return n

    def mean_score(self) -> float:
        scores = [e.score for e in self.elements if e.detected and e.score is not None]
        return float(np.mean(scores)) if scores else 0.0

    def trimmed(self) -> "Track":
        """Copy without the estimates that follow the last detection."""
        n = self.trailing_estimates
        return replace(self, elements=self.elements[: len(self.elements) - n])


@dataclass(frozen=True)
class TrackerParams:
    """Association and voting parameters.

    ``trim_trailing`` drops a track's trailing estimates when it closes, so
    ``m`` spans first to last detection only. Off by default: the speculative
    estimates are what lets the vote reject short-lived clutter.
    """

    iou_threshold: float = 0.5
    t_v: float = 0.4
    max_gap: int = 10
    class_aware: bool = True
    trim_trailing: bool = False

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        if not 0.0 <= self.t_v <= 1.0:
            raise ValueError(f"t_v must be in [0, 1], got {self.t_v}")
        if self.max_gap < 0:
            raise ValueError(f"max_gap must be >= 0, got {self.max_gap}")


@dataclass(frozen=True)
class Head:
    """An open track's box carried into the current frame."""

    track_id: int
    box: BBox
    class_label: str


@dataclass
class Matching:
    pairs: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]


def greedy_match(
    overlap: np.ndarray,
    threshold: float,
    row_keys: Sequence[int] | None = None,
    col_priority: Sequence[float] | None = None,
    allowed: np.ndarray | None = None,
) -> list[tuple[int, int]]:
    """One-to-one greedy matching of rows to columns by descending overlap.

    Ties are broken by higher ``col_priority``, then lower ``row_keys``, then
    lower column index. Only pairs with ``overlap >= threshold`` (and
    ``allowed`` when given) are accepted. Returns ``(row, col)`` index pairs.
    """
    overlap = np.asarray(overlap, dtype=float)
    n_rows, n_cols = overlap.shape
    row_keys = list(range(n_rows)) if row_keys is None else list(row_keys)
    col_priority = [0.0] * n_cols if col_priority is None else list(col_priority)
    candidates = []
    for r in range(n_rows):
        for c in range(n_cols):
            if overlap[r, c] >= threshold and (allowed is None or allowed[r, c]):
                candidates.append((-overlap[r, c], -col_priority[c], row_keys[r], c, r))
    candidates.sort()
    used_r, used_c, pairs = set(), set(), []
    for _, _, _, c, r in candidates:
        if r in used_r or c in used_c:
            continue
        used_r.add(r)
        used_c.add(c)
        pairs.append((r, c))
    return pairs


def associate(heads: Sequence[Head], dets: Sequence[Detection], params: TrackerParams = TrackerParams()) -> Matching:
    """Match projected track heads to the detections of one frame.

    ``pairs`` holds ``(track_id, detection index)``; unmatched detections are
    reported by their index in ``dets``.
    """
    heads, dets = list(heads), list(dets)
    if not heads or not dets:
        return Matching([], [h.track_id for h in heads], list(range(len(dets))))
    overlap = np.array([[iou(h.box, d.box) for d in dets] for h in heads])
    allowed = None
    if params.class_aware:
        allowed = np.array([[h.class_label == d.class_label for d in dets] for h in heads])
    matches = greedy_match(
        overlap,
        params.iou_threshold,
        row_keys=[h.track_id for h in heads],
        col_priority=[d.score for d in dets],
        allowed=allowed,
    )
    matched_r = {r for r, _ in matches}
    matched_c = {c for _, c in matches}
    return Matching(
        pairs=sorted((heads[r].track_id, c) for r, c in matches),
        unmatched_tracks=[h.track_id for i, h in enumerate(heads) if i not in matched_r],
        unmatched_detections=[i for i in range(len(dets)) if i not in matched_c],
    )


def project(last: TrackElement, table: DisplacementTable, to_frame: int | None = None) -> TrackElement:
    """Carry ``last`` into the next sampled frame (or ``to_frame``) as an estimate."""
    if last.frame not in table:
        raise KeyError(f"frame {last.frame} is not covered by the displacement table")
    if to_frame is None:
        to_frame = table.next_frame(last.frame)
        if to_frame is None:
            raise KeyError(f"no sampled frame after {last.frame} in the displacement table")
    box = translate(last.box, table.between(last.frame, to_frame))
    return TrackElement(to_frame, box, ESTIMATED)


def _group(dets: Mapping[int, Sequence[Detection]] | Iterable[Detection]) -> dict[int, list[Detection]]:
    if isinstance(dets, Mapping):
        return {int(f): list(v) for f, v in dets.items()}
    out: dict[int, list[Detection]] = {}
    for d in dets:
        out.setdefault(d.frame, []).append(d)
    return out


def build_tracks(
    dets: Mapping[int, Sequence[Detection]] | Iterable[Detection],
    table: DisplacementTable,
    params: TrackerParams = TrackerParams(),
) -> list[Track]:
    """Link detections into tracks over the sampled frames of ``table``.

    Processing is forward only, starting at the first frame holding a
    detection. Tracks are returned in order of creation; ids start at 0.
    """
    by_frame = _group(dets)
    if not any(by_frame.values()):
        return []
    missing = sorted(f for f, v in by_frame.items() if v and f not in table)
    if missing:
        raise KeyError(f"detections on frames not covered by the displacement table: {missing[:5]}")
    start = min(f for f, v in by_frame.items() if v)
    frames = [f for f in table.frames if f >= start]

    tracks: list[Track] = []
    open_ids: list[int] = []
    prev = None
    for frame in frames:
        current = by_frame.get(frame, [])
        heads = []
        for tid in open_ids:
            last = tracks[tid].elements[-1]
            box = translate(last.box, table.between(prev, frame))
            heads.append(Head(tid, box, tracks[tid].class_label))
        matching = associate(heads, current, params)
        head_box = {h.track_id: h.box for h in heads}

        for tid, j in matching.pairs:
            d = current[j]
            tracks[tid].elements.append(TrackElement(frame, d.box, DETECTED, d.score))
        still_open = [tid for tid, _ in matching.pairs]
        for tid in matching.unmatched_tracks:
            if tracks[tid].trailing_estimates >= params.max_gap:
                continue
            tracks[tid].elements.append(TrackElement(frame, head_box[tid], ESTIMATED))
            still_open.append(tid)
        for j in matching.unmatched_detections:
            d = current[j]
            track = Track(len(tracks), d.class_label, [TrackElement(frame, d.box, DETECTED, d.score)])
            tracks.append(track)
            still_open.append(track.id)
        open_ids = sorted(still_open)
        prev = frame

    if params.trim_trailing:
        tracks = [t.trimmed() for t in tracks]
    return tracks


def filter_tracks(tracks: Iterable[Track], t_v: float) -> list[Track]:
    """Tracks whose detection ratio reaches ``t_v`` (inclusive), order kept."""
    return [t for t in tracks if t.v >= t_v]


def tracks_to_detections(tracks: Iterable[Track]) -> dict[int, list[Detection]]:
    """Flatten tracks back into per-frame detections tagged with their track.

    Estimates inherit the mean score of their track's detections.
    """
    out: dict[int, list[Detection]] = {}
    for t in tracks:
        fill = t.mean_score()
        for e in t.elements:
            score = e.score if e.detected and e.score is not None else fill
            det = Detection(e.frame, t.class_label, e.box, score, track_id=t.id, kind=e.kind)
            out.setdefault(e.frame, []).append(det)
    return {f: sorted(v, key=lambda d: (-d.score, d.track_id)) for f, v in sorted(out.items())}


def tracks_from_detections(dets: Mapping[int, Sequence[Detection]] | Iterable[Detection]) -> list[Track]:
    """Rebuild tracks from detections that carry ``track_id`` and ``kind``."""
    groups: dict[int, list[Detection]] = {}
    for frame_dets in _group(dets).values():
        for d in frame_dets:
            if d.track_id is None:
                raise ValueError(f"detection on frame {d.frame} has no track_id")
            groups.setdefault(d.track_id, []).append(d)
    tracks = []
    for tid in sorted(groups):
        members = sorted(groups[tid], key=lambda d: d.frame)
        labels = {d.class_label for d in members}
        if len(labels) != 1:
            raise ValueError(f"track {tid} mixes classes {sorted(labels)}")
        elements = [
            TrackElement(d.frame, d.box, d.kind or DETECTED, d.score if (d.kind or DETECTED) == DETECTED else None)
            for d in members
        ]
        tracks.append(Track(tid, members[0].class_label, elements))
    return tracks
