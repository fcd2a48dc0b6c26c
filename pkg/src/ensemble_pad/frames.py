"""Best-frame selection and per-member region views."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import BadBandFraction, BadWeights, BoxOutOfBounds, EmptyImage, EmptyVideo, NoFaceFound
from .imaging import NEUTRAL, resize_bilinear

DEFAULT_WEIGHTS = (0.5, 0.25, 0.25)
DEFAULT_RESOLUTION = (128, 128)
DEFAULT_BAND_FRACTION = 0.25

# integer weights over 1000 keep gray frames exactly gray
_LUMA = np.array([299.0, 587.0, 114.0])


class RegionKind(str, enum.Enum):
    FULL_FRAME = "full_frame"
    FACE = "face"
    BACKGROUND = "background"
    FACE_BAND = "face_band"


@dataclass(frozen=True)
class VideoFrames:
    frames: tuple
    source_id: str = ""

    def __post_init__(self):
        frames = tuple(np.asarray(f) for f in self.frames)
        if not frames:
            raise EmptyVideo(self.source_id or "video has no frames")
        shape = frames[0].shape
        if any(f.shape != shape for f in frames):
            raise ValueError("all frames must share dimensions")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class FaceBox:
    row0: int
    col0: int
    row1: int
    col1: int
    confidence: float = 1.0

    def validate(self, height: int, width: int) -> "FaceBox":
        if not (0 <= self.row0 < self.row1 <= height and 0 <= self.col0 < self.col1 <= width):
            raise BoxOutOfBounds(f"{self} outside {height}x{width} frame")
        if not 0.0 <= self.confidence <= 1.0:
            raise BoxOutOfBounds(f"confidence {self.confidence} outside [0, 1]")
        return self

    @property
    def height(self) -> int:
        return self.row1 - self.row0

    @property
    def width(self) -> int:
        return self.col1 - self.col0


@dataclass(frozen=True)
class FrameQualityScore:
    sharpness: float
    exposure: float
    face_presence: float
    total: float


@dataclass(frozen=True)
class RegionView:
    kind: RegionKind
    pixels: np.ndarray
    provenance: FaceBox


class FaceLocator(Protocol):
    def __call__(self, frame: np.ndarray) -> FaceBox: ...


def locate_face(frame: np.ndarray) -> FaceBox:
    """Default locator: the centred box over the middle half of each axis."""
    frame = np.asarray(frame)
    if frame.ndim < 2 or frame.shape[0] == 0 or frame.shape[1] == 0:
        raise EmptyImage(f"frame shape {frame.shape}")
    h, w = frame.shape[:2]
    r0, c0 = h // 4, w // 4
    r1, c1 = r0 + max(1, h // 2), c0 + max(1, w // 2)
    return FaceBox(r0, c0, min(r1, h), min(c1, w), 1.0)


class ExternalLocator:
    """Adapter for a detector returning ``(row0, col0, row1, col1, confidence)``
    or ``None`` when no face is found. Results are checked against the frame."""

    def __init__(self, detect: Callable[[np.ndarray], tuple | None]):
        self.detect = detect

    def __call__(self, frame: np.ndarray) -> FaceBox:
        found = self.detect(frame)
        if found is None:
            raise NoFaceFound("detector reported no face")
        r0, c0, r1, c1, conf = found
        box = FaceBox(int(r0), int(c0), int(r1), int(c1), float(conf))
        return box.validate(*np.asarray(frame).shape[:2])


def luminance(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.shape[2] == 3:
        return (frame @ _LUMA) / 1000.0
    return frame.mean(axis=2)


def laplacian_variance(frame: np.ndarray) -> float:
    """Variance of the 4-neighbour Laplacian over interior pixels (0 below 3x3)."""
    lum = luminance(frame)
    if lum.shape[0] < 3 or lum.shape[1] < 3:
        return 0.0
    lap = (lum[:-2, 1:-1] + lum[2:, 1:-1] + lum[1:-1, :-2] + lum[1:-1, 2:]
           - 4.0 * lum[1:-1, 1:-1])
    return float(lap.var())


def _check_weights(weights: Sequence[float]) -> tuple[float, float, float]:
    if len(weights) != 3:
        raise BadWeights(f"need three weights, got {weights}")
    w = tuple(float(v) for v in weights)
    if any(v < 0 or not math.isfinite(v) for v in w) or abs(sum(w) - 1.0) > 1e-9:
        raise BadWeights(f"weights must be nonnegative and sum to 1, got {w}")
    return w


def score_frame_quality(frame: np.ndarray, locator: FaceLocator = locate_face,
                        weights: Sequence[float] = DEFAULT_WEIGHTS) -> FrameQualityScore:
    ws, we, wf = _check_weights(weights)
    frame = np.asarray(frame)
    if frame.size == 0:
        raise EmptyImage("empty frame")
    sharp = laplacian_variance(frame)
    exposure = 1.0 - abs(float(luminance(frame).mean()) - 0.5) / 0.5
    try:
        presence = float(locator(frame).confidence)
    except NoFaceFound:
        presence = 0.0
    total = ws * (sharp / (1.0 + sharp)) + we * exposure + wf * presence
    return FrameQualityScore(sharp, exposure, presence, total)


def select_best_frame(video: VideoFrames | Sequence[np.ndarray], locator: FaceLocator = locate_face,
                      weights: Sequence[float] = DEFAULT_WEIGHTS) -> tuple[int, FrameQualityScore]:
    """Index of the highest-quality frame; the lowest index wins ties."""
    frames = video.frames if isinstance(video, VideoFrames) else list(video)
    if len(frames) == 0:
        raise EmptyVideo("video has no frames")
    best_i, best = 0, None
    for i, frame in enumerate(frames):
        q = score_frame_quality(frame, locator, weights)
        if best is None or q.total > best.total:
            best_i, best = i, q
    return best_i, best


def extract_region(frame: np.ndarray, box: FaceBox, kind: RegionKind | str,
                   out_resolution: tuple[int, int] = DEFAULT_RESOLUTION,
                   band_fraction: float = DEFAULT_BAND_FRACTION) -> RegionView:
    frame = np.asarray(frame)
    if frame.ndim < 2 or frame.size == 0:
        raise EmptyImage(f"frame shape {frame.shape}")
    kind = RegionKind(kind)
    if not 0.0 < band_fraction <= 0.5:
        raise BadBandFraction(f"band_fraction {band_fraction} outside (0, 0.5]")
    h, w = frame.shape[:2]
    box.validate(h, w)

    if kind is RegionKind.FULL_FRAME:
        src = frame
    elif kind is RegionKind.FACE:
        src = frame[box.row0:box.row1, box.col0:box.col1]
    elif kind is RegionKind.BACKGROUND:
        src = frame.copy()
        src[box.row0:box.row1, box.col0:box.col1] = NEUTRAL
    else:
        dr = round(band_fraction * box.height)
        dc = round(band_fraction * box.width)
        r0, r1 = max(0, box.row0 - dr), min(h, box.row1 + dr)
        c0, c1 = max(0, box.col0 - dc), min(w, box.col1 + dc)
        src = frame[r0:r1, c0:c1].copy()
        src[box.row0 - r0:box.row1 - r0, box.col0 - c0:box.col1 - c0] = NEUTRAL
    return RegionView(kind, resize_bilinear(src, out_resolution), box)
