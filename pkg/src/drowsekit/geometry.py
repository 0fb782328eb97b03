"""2D face geometry: landmark containers, chin derivation, ROI rectangles.

Detectors in this pipeline report five landmarks (two eye centers, nose
tip, two mouth corners).  The chin is not detected; it is derived as an
affine extension of the eye-midpoint -> mouth-midpoint axis so that the
pose solver always sees six correspondences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFace, DegenerateRoi
from .util import round_half_away

Point2 = tuple[float, float]

# Chin extension factor: with the default face model the chin sits below
# the mouth line by 0.5625x the eye-line -> mouth-line distance.
K_CHIN = 0.5625

# ROI extents as fractions of the face bounding box.
EYE_WIDTH_FRAC = 0.20
MOUTH_WIDTH_FRAC = 0.30
ROI_HEIGHT_FRAC = 0.15

LANDMARK_ORDER = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")


@dataclass(frozen=True)
class Landmarks5:
    """The five detector-reported landmarks, image coordinates in pixels."""

    left_eye: Point2
    right_eye: Point2
    nose: Point2
    mouth_left: Point2
    mouth_right: Point2

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.left_eye, self.right_eye, self.nose, self.mouth_left, self.mouth_right],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class LandmarkSet6:
    """Five detected landmarks plus the derived chin, in solver order."""

    left_eye: Point2
    right_eye: Point2
    nose: Point2
    mouth_left: Point2
    mouth_right: Point2
    chin: Point2

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.left_eye,
                self.right_eye,
                self.nose,
                self.mouth_left,
                self.mouth_right,
                self.chin,
            ],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class FaceObservation:
    """One detected face on one frame."""

    bbox: tuple[float, float, float, float]  # x, y, w, h
    landmarks: Landmarks5
    confidence: float
    frame_index: int
    timestamp_ms: int

    def validate(self) -> None:
        x, y, w, h = self.bbox
        if not (w > 0 and h > 0):
            raise ValueError(f"bbox must have positive extent, got w={w} h={h}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")
        for name in LANDMARK_ORDER:
            px, py = getattr(self.landmarks, name)
            if not (math.isfinite(px) and math.isfinite(py)):
                raise ValueError(f"landmark {name} is not finite: ({px}, {py})")


@dataclass(frozen=True)
class RoiRect:
    """Integer pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int
    kind: str  # "eye" | "mouth"

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def derive_chin(obs: FaceObservation, k: float = K_CHIN) -> LandmarkSet6:
    """Extend the face axis past the mouth to synthesize a chin point.

    chin = m + k * (m - e) where e is the eye midpoint and m the mouth
    midpoint.  Raises DegenerateFace when the two midpoints are closer
    than one pixel, because the axis direction is then unreliable.
    """
    lm = obs.landmarks
    ex = (lm.left_eye[0] + lm.right_eye[0]) / 2.0
    ey = (lm.left_eye[1] + lm.right_eye[1]) / 2.0
    mx = (lm.mouth_left[0] + lm.mouth_right[0]) / 2.0
    my = (lm.mouth_left[1] + lm.mouth_right[1]) / 2.0
    if math.hypot(mx - ex, my - ey) < 1.0:
        raise DegenerateFace(
            f"eye midpoint ({ex:.2f}, {ey:.2f}) and mouth midpoint "
            f"({mx:.2f}, {my:.2f}) are less than 1 px apart"
        )
    chin = (mx + k * (mx - ex), my + k * (my - ey))
    return LandmarkSet6(
        left_eye=lm.left_eye,
        right_eye=lm.right_eye,
        nose=lm.nose,
        mouth_left=lm.mouth_left,
        mouth_right=lm.mouth_right,
        chin=chin,
    )


def _centered_roi(
    cx: float,
    cy: float,
    half_w: float,
    half_h: float,
    kind: str,
    image_size: tuple[int, int] | None,
) -> RoiRect:
    """Build a rectangle around a center with each corner rounded on its own.

    Corners are rounded independently (ties away from zero) before
    clamping, so the integer width may differ by one pixel from the
    rounded real width depending on the fractional part of the center.
    """
    x0 = round_half_away(cx - half_w)
    x1 = round_half_away(cx + half_w)
    y0 = round_half_away(cy - half_h)
    y1 = round_half_away(cy + half_h)
    if image_size is not None:
        img_w, img_h = image_size
        x0 = min(max(x0, 0), img_w)
        x1 = min(max(x1, 0), img_w)
        y0 = min(max(y0, 0), img_h)
        y1 = min(max(y1, 0), img_h)
    if not (x1 > x0 and y1 > y0):
        raise DegenerateRoi(
            f"{kind} ROI collapsed to ({x0}, {y0}, {x1}, {y1})"
            + (f" within image {image_size}" if image_size is not None else "")
        )
    return RoiRect(x0=x0, y0=y0, x1=x1, y1=y1, kind=kind)


def eye_roi(
    obs: FaceObservation,
    which: str,
    image_size: tuple[int, int] | None = None,
) -> RoiRect:
    """Rectangle around one eye center, sized from the face bounding box.

    Width is 20% of the bbox width, height 15% of the bbox height.  Pass
    image_size=(w, h) to clamp to the image; None returns the unclamped
    rectangle.
    """
    if which not in ("left", "right"):
        raise ValueError(f"which must be 'left' or 'right', got {which!r}")
    cx, cy = obs.landmarks.left_eye if which == "left" else obs.landmarks.right_eye
    _, _, bw, bh = obs.bbox
    return _centered_roi(
        cx, cy, EYE_WIDTH_FRAC * bw / 2.0, ROI_HEIGHT_FRAC * bh / 2.0, "eye", image_size
    )


def mouth_roi(
    obs: FaceObservation,
    image_size: tuple[int, int] | None = None,
) -> RoiRect:
    """Rectangle around the mouth-corner midpoint.

    Width is 30% of the bbox width, height 15% of the bbox height.
    """
    ml = obs.landmarks.mouth_left
    mr = obs.landmarks.mouth_right
    cx = (ml[0] + mr[0]) / 2.0
    cy = (ml[1] + mr[1]) / 2.0
    _, _, bw, bh = obs.bbox
    return _centered_roi(
        cx, cy, MOUTH_WIDTH_FRAC * bw / 2.0, ROI_HEIGHT_FRAC * bh / 2.0, "mouth", image_size
    )


def select_face(candidates: list[FaceObservation]) -> FaceObservation | None:
    """Pick the face to track: largest bbox area, ties broken by confidence,
    then by left-most bbox x so the choice is deterministic."""
    if not candidates:
        return None
    return max(candidates, key=lambda f: (f.bbox[2] * f.bbox[3], f.confidence, -f.bbox[0]))
