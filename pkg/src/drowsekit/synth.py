"""Synthetic detection-stream generator with exact ground truth.

A scenario script describes piecewise-linear head motion and eye/mouth
states over time.  The generator projects the canonical face through a
pinhole camera, perturbs the five detector landmarks with seeded
Gaussian noise, and emits the same JSONL detection format a real
detector stage would produce, alongside a ground-truth stream for
accuracy checks.  Output is deterministic: the same scenario (including
seed) yields byte-identical streams.

Each emitted face also carries the pixel crops ("roi") a detector stage
would have handed to the classifiers: a two-band pattern for open (dark
top half, bright bottom half) and a uniform field for closed.  The crops
are sized with the same ROI geometry the extraction pipeline uses.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateRoi, ScenarioError
from .geometry import FaceObservation, Landmarks5, eye_roi, mouth_roi
from .pose import CANONICAL_FACE_MODEL, CameraModel, FaceModel3D, default_camera, euler_to_rotation

BBOX_INFLATE = 0.25  # per-side inflation of the landmark extent box


@dataclass(frozen=True)
class PoseSegment:
    """Linear interpolation of angles over [start_ms, end_ms)."""

    start_ms: int
    end_ms: int
    yaw: tuple[float, float]
    pitch: tuple[float, float]
    roll: tuple[float, float]
    eye: str  # open | closed
    mouth: str  # open | closed


@dataclass(frozen=True)
class Scenario:
    fps: float
    duration_ms: int
    camera: CameraModel
    tvec: tuple[float, float, float]
    segments: list[PoseSegment]
    noise_px: float = 0.0
    dropout: list[tuple[int, int]] = field(default_factory=list)
    seed: int = 0
    model: FaceModel3D = CANONICAL_FACE_MODEL

    def validate(self) -> None:
        if not (self.fps > 0):
            raise ScenarioError(f"fps must be positive, got {self.fps}")
        if self.duration_ms <= 0:
            raise ScenarioError(f"duration_ms must be positive, got {self.duration_ms}")
        if self.noise_px < 0:
            raise ScenarioError(f"noise_px must be >= 0, got {self.noise_px}")
        if self.tvec[2] <= 0:
            raise ScenarioError(f"face must be in front of the camera, got z={self.tvec[2]}")
        if not self.segments:
            raise ScenarioError("scenario needs at least one segment")
        expect = 0
        for k, seg in enumerate(self.segments):
            if seg.start_ms != expect:
                raise ScenarioError(
                    f"segment {k} starts at {seg.start_ms}, expected {expect} "
                    "(segments must tile the duration without gaps or overlap)"
                )
            if seg.end_ms <= seg.start_ms:
                raise ScenarioError(f"segment {k} has non-positive length")
            if seg.eye not in ("open", "closed") or seg.mouth not in ("open", "closed"):
                raise ScenarioError(f"segment {k} states must be open or closed")
            expect = seg.end_ms
        if expect < self.duration_ms:
            raise ScenarioError(
                f"segments end at {expect} but duration is {self.duration_ms}"
            )
        for k, (a, b) in enumerate(self.dropout):
            if b <= a:
                raise ScenarioError(f"dropout window {k} is empty: [{a}, {b})")


def _angles_pair(v, name: str) -> tuple[float, float]:
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return (float(v[0]), float(v[1]))
    raise ScenarioError(f"{name} must be a number or [start, end] pair, got {v!r}")


def load_scenario(source) -> Scenario:
    """Build a Scenario from a JSON file path or an already-parsed dict."""
    if isinstance(source, dict):
        obj = source
    else:
        with open(source, encoding="utf-8") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise ScenarioError(f"scenario is not valid JSON: {e}")
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        cam_spec = obj.get("camera", {"width": 640, "height": 480})
        if not isinstance(cam_spec, dict):
            raise ScenarioError(f"camera must be an object, got {cam_spec!r}")
        if "fx" in cam_spec:
            cam = CameraModel(
                fx=float(cam_spec["fx"]),
                fy=float(cam_spec["fy"]),
                cx=float(cam_spec["cx"]),
                cy=float(cam_spec["cy"]),
                image_width=int(cam_spec["width"]),
                image_height=int(cam_spec["height"]),
            )
            cam.validate()
        else:
            cam = default_camera(int(cam_spec["width"]), int(cam_spec["height"]))
        segments = []
        for k, s in enumerate(obj.get("segments", [])):
            segments.append(
                PoseSegment(
                    start_ms=int(s["start_ms"]),
                    end_ms=int(s["end_ms"]),
                    yaw=_angles_pair(s.get("yaw", 0.0), f"segment {k} yaw"),
                    pitch=_angles_pair(s.get("pitch", 0.0), f"segment {k} pitch"),
                    roll=_angles_pair(s.get("roll", 0.0), f"segment {k} roll"),
                    eye=s.get("eye", "open"),
                    mouth=s.get("mouth", "closed"),
                )
            )
        tv = obj.get("tvec", [0.0, 0.0, 1000.0])
        if not (isinstance(tv, (list, tuple)) and len(tv) == 3):
            raise ScenarioError(f"tvec must be [x, y, z], got {tv!r}")
        model = CANONICAL_FACE_MODEL
        if "face_model_mm" in obj:
            model = FaceModel3D.from_rows(obj["face_model_mm"])
            model.validate()
        scn = Scenario(
            fps=float(obj["fps"]),
            duration_ms=int(obj["duration_ms"]),
            camera=cam,
            tvec=(float(tv[0]), float(tv[1]), float(tv[2])),
            segments=segments,
            noise_px=float(obj.get("noise_px", 0.0)),
            dropout=[(int(a), int(b)) for a, b in obj.get("dropout", [])],
            seed=int(obj.get("seed", 0)),
            model=model,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"bad scenario field: {e}")
    scn.validate()
    return scn


def frame_times(scn: Scenario) -> list[int]:
    """Frame timestamps: t_k = round(k * 1000 / fps) while t_k < duration."""
    times = []
    k = 0
    while True:
        t = math.floor(k * 1000.0 / scn.fps + 0.5)
        if t >= scn.duration_ms:
            break
        times.append(t)
        k += 1
    return times


def _segment_at(scn: Scenario, t: int) -> PoseSegment:
    for seg in scn.segments:
        if seg.start_ms <= t < seg.end_ms:
            return seg
    return scn.segments[-1]


def pose_at(scn: Scenario, t: int) -> tuple[float, float, float, str, str]:
    """(yaw, pitch, roll, eye, mouth) at time t by linear interpolation."""
    seg = _segment_at(scn, t)
    a = (t - seg.start_ms) / (seg.end_ms - seg.start_ms)
    return (
        seg.yaw[0] + a * (seg.yaw[1] - seg.yaw[0]),
        seg.pitch[0] + a * (seg.pitch[1] - seg.pitch[0]),
        seg.roll[0] + a * (seg.roll[1] - seg.roll[0]),
        seg.eye,
        seg.mouth,
    )


def _roi_pattern(state: str, width: int, height: int) -> bytes:
    """Pixels the classifiers should call `state`: open is a dark top
    half over a bright bottom half (strong row structure), closed is a
    uniform mid-gray field (no structure)."""
    if state == "open":
        top = height // 2
        return bytes([0]) * (top * width) + bytes([255]) * ((height - top) * width)
    return bytes([128]) * (width * height)


def _roi_payload(state: str, rect) -> dict:
    px = _roi_pattern(state, rect.width, rect.height)
    return {
        "w": rect.width,
        "h": rect.height,
        "px_b64": base64.b64encode(px).decode("ascii"),
    }


def _fmt(x: float) -> float:
    # keep payload floats short and stable across platforms
    return float(f"{x:.4f}")


def generate(scn: Scenario) -> tuple[list[str], list[str]]:
    """Produce (detection_lines, truth_lines), both JSONL without newlines.

    Detection frames inside a dropout window carry an empty face list;
    the truth stream always carries every frame.  Landmark noise is drawn
    from numpy's default_rng(seed) per emitted face, in landmark order,
    x before y, so identical scenarios produce identical bytes.
    """
    scn.validate()
    rng = np.random.default_rng(scn.seed)
    cam = scn.camera
    model_pts = scn.model.as_array()
    tvec = np.asarray(scn.tvec, dtype=np.float64)
    det_lines: list[str] = []
    truth_lines: list[str] = []
    for k, t in enumerate(frame_times(scn)):
        yaw, pitch, roll, eye, mouth = pose_at(scn, t)
        R = euler_to_rotation(yaw, pitch, roll)
        X = model_pts @ R.T + tvec
        if np.any(X[:, 2] <= 0.0):
            raise BehindCamera(f"frame {k} at t={t}: face behind camera")
        u = cam.fx * X[:, 0] / X[:, 2] + cam.cx
        v = -cam.fy * X[:, 1] / X[:, 2] + cam.cy
        pts = np.stack([u, v], axis=1)

        truth_lines.append(
            json.dumps(
                {
                    "frame": k,
                    "t_ms": t,
                    "yaw": _fmt(yaw),
                    "pitch": _fmt(pitch),
                    "roll": _fmt(roll),
                    "eye": eye,
                    "mouth": mouth,
                },
                separators=(",", ":"),
            )
        )

        dropped = any(a <= t < b for a, b in scn.dropout)
        if dropped:
            det_lines.append(
                json.dumps({"frame": k, "t_ms": t, "faces": []}, separators=(",", ":"))
            )
            continue

        # bbox: extent of all six noiseless projections, inflated per side
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        bw, bh = x1 - x0, y1 - y0
        bbox = (
            x0 - BBOX_INFLATE * bw,
            y0 - BBOX_INFLATE * bh,
            bw * (1 + 2 * BBOX_INFLATE),
            bh * (1 + 2 * BBOX_INFLATE),
        )
        lm = pts[:5].copy()
        if scn.noise_px > 0:
            lm += rng.normal(0.0, scn.noise_px, size=lm.shape)

        face = {
            "bbox": [_fmt(b) for b in bbox],
            "landmarks": {
                "left_eye": [_fmt(lm[0, 0]), _fmt(lm[0, 1])],
                "right_eye": [_fmt(lm[1, 0]), _fmt(lm[1, 1])],
                "nose": [_fmt(lm[2, 0]), _fmt(lm[2, 1])],
                "mouth_left": [_fmt(lm[3, 0]), _fmt(lm[3, 1])],
                "mouth_right": [_fmt(lm[4, 0]), _fmt(lm[4, 1])],
            },
            "confidence": 1.0,
        }
        obs = FaceObservation(
            bbox=(bbox[0], bbox[1], bbox[2], bbox[3]),
            landmarks=Landmarks5(
                left_eye=(float(lm[0, 0]), float(lm[0, 1])),
                right_eye=(float(lm[1, 0]), float(lm[1, 1])),
                nose=(float(lm[2, 0]), float(lm[2, 1])),
                mouth_left=(float(lm[3, 0]), float(lm[3, 1])),
                mouth_right=(float(lm[4, 0]), float(lm[4, 1])),
            ),
            confidence=1.0,
            frame_index=k,
            timestamp_ms=t,
        )
        roi = {}
        try:
            rect = eye_roi(obs, "left", (cam.image_width, cam.image_height))
            if rect.height >= 2:  # the open pattern needs two rows
                roi["eye"] = _roi_payload(eye, rect)
        except DegenerateRoi:
            pass
        try:
            rect = mouth_roi(obs, (cam.image_width, cam.image_height))
            if rect.height >= 2:
                roi["mouth"] = _roi_payload(mouth, rect)
        except DegenerateRoi:
            pass
        if roi:
            face["roi"] = roi
        det_lines.append(
            json.dumps({"frame": k, "t_ms": t, "faces": [face]}, separators=(",", ":"))
        )
    return det_lines, truth_lines


def write_lines(lines: list[str], sink) -> int:
    """Write JSONL lines (UTF-8, LF) to a path or binary file-like;
    returns bytes written."""
    payload = ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        with open(sink, "wb") as f:
            f.write(payload)
    return len(payload)
