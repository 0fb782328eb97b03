"""Shared fixtures and reference helpers for the test suite.

Reference implementations here are deliberately written differently from
the package code (different algorithms or libraries) so they can serve
as independent oracles.
"""

from __future__ import annotations

import numpy as np
import pytest

from drowsekit.geometry import FaceObservation, Landmarks5
from drowsekit.pose import CameraModel


def make_obs(
    bbox=(0.0, 0.0, 200.0, 300.0),
    left_eye=(60.0, 80.0),
    right_eye=(140.0, 80.0),
    nose=(100.0, 150.0),
    mouth_left=(70.0, 220.0),
    mouth_right=(130.0, 220.0),
    confidence=1.0,
    frame_index=0,
    timestamp_ms=0,
):
    return FaceObservation(
        bbox=tuple(float(v) for v in bbox),
        landmarks=Landmarks5(
            left_eye=tuple(map(float, left_eye)),
            right_eye=tuple(map(float, right_eye)),
            nose=tuple(map(float, nose)),
            mouth_left=tuple(map(float, mouth_left)),
            mouth_right=tuple(map(float, mouth_right)),
        ),
        confidence=confidence,
        frame_index=frame_index,
        timestamp_ms=timestamp_ms,
    )


def project_reference(points3d: np.ndarray, R: np.ndarray, t: np.ndarray,
                      cam: CameraModel) -> np.ndarray:
    """Projection written point-by-point, independent of pose.project."""
    out = []
    for p in np.asarray(points3d, dtype=float):
        X = R @ p + t
        assert X[2] > 0, "reference projection needs points in front of the camera"
        out.append([cam.fx * X[0] / X[2] + cam.cx, -cam.fy * X[1] / X[2] + cam.cy])
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(20260818)
