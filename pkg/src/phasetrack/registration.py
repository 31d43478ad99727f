"""Frame-to-frame translation estimation by phase correlation.

Conventions
-----------
A :class:`Displacement` ``d`` from frame ``f`` to frame ``g`` means scene
content at ``(x, y)`` in ``f`` appears at ``(x + dx, y + dy)`` in ``g``, i.e.
``g(x, y) = f(x - dx, y - dy)``. A box detected in ``f`` is carried into ``g``
with :func:`phasetrack.geometry.translate` by ``d``.

A :class:`DisplacementTable` holds, for every sampled frame, the cumulative
displacement of that frame's content relative to the reference frame.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

EPS = 1e-12
DEFAULT_CONFIDENCE_FLOOR = 0.05
MIN_FRAME_SIDE = 16


class IndeterminateDisplacement(ValueError):
    """Raised when a frame has no spectral content besides its mean."""


@dataclass(frozen=True)
class GrayFrame:
    """Luminance image with its ordinal in the source video."""

    samples: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError(f"frame samples must be 2-D, got shape {samples.shape}")
        h, w = samples.shape
        if h < MIN_FRAME_SIDE or w < MIN_FRAME_SIDE:
            raise ValueError(f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, got {w}x{h}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("frame samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "frame_index", int(self.frame_index))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class Displacement:
    dx: float
    dy: float
    peak_score: float = 1.0

    def __add__(self, other: "Displacement") -> "Displacement":
        return Displacement(self.dx + other.dx, self.dy + other.dy, min(self.peak_score, other.peak_score))

    def __sub__(self, other: "Displacement") -> "Displacement":
        return Displacement(self.dx - other.dx, self.dy - other.dy, min(self.peak_score, other.peak_score))

    def __neg__(self) -> "Displacement":
        return Displacement(-self.dx, -self.dy, self.peak_score)

    def as_tuple(self) -> tuple[float, float]:
        return (self.dx, self.dy)


ZERO = Displacement(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class PairResult:
    """One row of the displacement cache."""

    from_frame: int
    to_frame: int
    displacement: Displacement
    flag: str = "ok"

    @property
    def reliable(self) -> bool:
        return self.flag == "ok"


@dataclass
class DisplacementTable:
    """Cumulative displacements of sampled frames relative to ``reference_index``.

    ``pairs`` keeps the consecutive pairwise results the table was built from;
    ``entries`` is always their running sum.
    """

    reference_index: int
    entries: dict[int, Displacement]
    pairs: list[PairResult] = field(default_factory=list)

    def __post_init__(self):
        ref = self.entries.get(self.reference_index)
        if ref is None or ref.dx != 0 or ref.dy != 0:
            raise ValueError("reference frame must map to a zero displacement")

    @classmethod
    def from_pairs(cls, pairs: Sequence[PairResult], reference_index: int | None = None) -> "DisplacementTable":
        """Chain consecutive pairwise displacements into a cumulative table."""
        pairs = list(pairs)
        if reference_index is None:
            if not pairs:
                raise ValueError("need at least one pair or an explicit reference index")
            reference_index = pairs[0].from_frame
        entries = {reference_index: ZERO}
        current, frame = ZERO, reference_index
        for pair in pairs:
            if pair.from_frame != frame:
                raise ValueError(f"pair chain broken at frame {pair.from_frame}, expected {frame}")
            if pair.to_frame <= pair.from_frame:
                raise ValueError("pairs must advance in frame order")
            d = pair.displacement
            current = Displacement(current.dx + d.dx, current.dy + d.dy, d.peak_score)
            frame = pair.to_frame
            entries[frame] = current
        return cls(reference_index, entries, pairs)

    @classmethod
    def static(cls, frames: Iterable[int]) -> "DisplacementTable":
        """Zero-motion table over the given frame ordinals."""
        frames = sorted(set(int(f) for f in frames))
        if not frames:
            raise ValueError("static table needs at least one frame")
        pairs = [PairResult(a, b, ZERO) for a, b in zip(frames, frames[1:])]
        if pairs:
            return cls.from_pairs(pairs)
        return cls(frames[0], {frames[0]: ZERO}, [])

    @property
    def frames(self) -> list[int]:
        return sorted(self.entries)

    @property
    def flagged(self) -> list[int]:
        """Target frames whose pairwise registration fell under the confidence floor."""
        return [p.to_frame for p in self.pairs if not p.reliable]

    def __contains__(self, frame: int) -> bool:
        return frame in self.entries

    def __getitem__(self, frame: int) -> Displacement:
        try:
            return self.entries[frame]
        except KeyError:
            raise KeyError(f"frame {frame} is not covered by the displacement table") from None

    def between(self, src: int, dst: int) -> Displacement:
        """Displacement taking content of frame ``src`` to frame ``dst``."""
        a, b = self[src], self[dst]
        return Displacement(b.dx - a.dx, b.dy - a.dy, min(a.peak_score, b.peak_score))

    def next_frame(self, frame: int) -> int | None:
        later = [f for f in self.entries if f > frame]
        return min(later) if later else None


def to_luminance(image: np.ndarray) -> np.ndarray:
    """Grey level from an ``(H, W)`` or ``(H, W, 3|4)`` array (Rec. 601 weights)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] in (3, 4):
        return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114
    raise ValueError(f"cannot convert array of shape {image.shape} to luminance")


def cross_power_spectrum(a: np.ndarray, b: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Normalized cross-power spectrum ``a * conj(b) / max(|a * conj(b)|, eps)``.

    When ``a`` is the spectrum of ``b``'s image shifted by ``(x0, y0)``, the
    result is the phase ramp ``exp(-2j*pi*(xi*x0 + eta*y0))``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"spectrum shapes differ: {a.shape} vs {b.shape}")
    prod = a * np.conj(b)
    return prod / np.maximum(np.abs(prod), eps)


def decode_peak(index: tuple[int, int], dims: tuple[int, int]) -> tuple[int, int]:
    """Map a peak index ``(row, col)`` to a signed shift ``(dy, dx)``.

    Indices past the half-length wrap to negative shifts; exactly ``N/2``
    stays positive.
    """
    out = []
    for p, n in zip(index, dims):
        p, n = int(p), int(n)
        if not 0 <= p < n:
            raise ValueError(f"peak index {p} outside axis of length {n}")
        out.append(p if p <= n // 2 else p - n)
    return out[0], out[1]


def raised_cosine_window(shape: tuple[int, int]) -> np.ndarray:
    return np.outer(np.hanning(shape[0]), np.hanning(shape[1]))


def correlation_surface(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Inverse transform of the cross-power spectrum of ``g`` against ``f``."""
    ff = np.fft.fft2(f)
    gf = np.fft.fft2(g)
    _check_spectrum(ff)
    _check_spectrum(gf)
    return np.fft.ifft2(cross_power_spectrum(gf, ff))


def _check_spectrum(spec: np.ndarray) -> None:
    ac = np.abs(spec).ravel()
    dc = ac[0]
    if ac[1:].max(initial=0.0) <= 1e-9 * (dc + 1.0):
        raise IndeterminateDisplacement("frame has no content beyond its mean value")


def _as_array(frame) -> np.ndarray:
    if isinstance(frame, GrayFrame):
        return frame.samples
    return np.asarray(frame, dtype=np.float64)


def phase_correlate(f, g, window: bool = False) -> Displacement:
    """Integer-pixel displacement taking frame ``f`` to frame ``g``.

    Parameters
    ----------
    f, g : GrayFrame or 2-D array
        Frames of identical size.
    window : bool
        Taper both frames with a raised-cosine window before transforming.

    Returns
    -------
    Displacement
        ``peak_score`` is the share of the correlation surface energy held by
        the peak: 1 for an ideal delta, near 0 for a flat surface.
    """
    a = _as_array(f)
    b = _as_array(g)
    if a.shape != b.shape:
        raise ValueError(f"frame sizes differ: {a.shape} vs {b.shape}")
    if window:
        w = raised_cosine_window(a.shape)
        a, b = a * w, b * w
    surface = np.abs(correlation_surface(a, b))
    row, col = np.unravel_index(np.argmax(surface), surface.shape)
    dy, dx = decode_peak((row, col), surface.shape)
    energy = float(np.sum(surface**2))
    score = float(surface[row, col] ** 2 / energy) if energy > 0 else 0.0
    return Displacement(float(dx), float(dy), min(score, 1.0))


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-average by an integer factor, dropping incomplete edge blocks."""
    if factor == 1:
        return image
    h, w = image.shape
    h2, w2 = h // factor, w // factor
    if h2 < 1 or w2 < 1:
        raise ValueError(f"downscale factor {factor} too large for {w}x{h} frame")
    return image[: h2 * factor, : w2 * factor].reshape(h2, factor, w2, factor).mean(axis=(1, 3))


def auto_downscale(width: int, height: int) -> int:
    return 4 if max(width, height) >= 3840 else 1


def register_sequence(
    frames: Sequence[GrayFrame],
    stride: int = 1,
    downscale: int | None = 1,
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
    window: bool = False,
    workers: int = 1,
) -> DisplacementTable:
    """Register consecutive sampled frames and chain them into a table.

    Pairs whose peak score falls below ``confidence_floor`` are recorded as
    zero motion and flagged ``"low_confidence"``. ``downscale=None`` picks 4
    for 4K material and 1 otherwise.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    frames = list(frames)[::stride]
    if len(frames) < 2:
        raise ValueError("register_sequence needs at least two sampled frames")
    shape = frames[0].samples.shape
    for fr in frames:
        if fr.samples.shape != shape:
            raise ValueError(f"frame {fr.frame_index} has size {fr.samples.shape[::-1]}, expected {shape[::-1]}")
    if downscale is None:
        downscale = auto_downscale(shape[1], shape[0])
    if downscale < 1:
        raise ValueError("downscale must be >= 1")
    small = [downsample(fr.samples, downscale) for fr in frames]

    def one_pair(i: int) -> PairResult:
        d = phase_correlate(small[i], small[i + 1], window=window)
        src, dst = frames[i].frame_index, frames[i + 1].frame_index
        if d.peak_score < confidence_floor:
            log.warning("low-confidence registration %d->%d (score %.4f), assuming no motion", src, dst, d.peak_score)
            return PairResult(src, dst, Displacement(0.0, 0.0, d.peak_score), "low_confidence")
        return PairResult(src, dst, Displacement(d.dx * downscale, d.dy * downscale, d.peak_score))

    indices = range(len(frames) - 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(one_pair, indices))
    else:
        pairs = [one_pair(i) for i in indices]
    return DisplacementTable.from_pairs(pairs)
