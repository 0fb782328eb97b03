"""The extraction pipeline: detection JSONL in, frame records out.

Per frame: select the face to track, derive the chin landmark, cut the
eye/mouth ROIs, classify any attached ROI crops, solve head pose from
the six landmarks, and hand the outcome to the Recorder (which applies
the hold policy).  Frames whose face cannot be used (degenerate
landmark geometry) are treated as detection gaps with a warning rather
than aborting the stream.

Pose continuity: each frame's solve starts from the previous converged
pose, falling back to the full multi-start sweep when that refinement
is rejected.  Privacy: nothing wider than the eye/mouth crops is ever
consumed, and only states, confidences and angles are emitted.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
from dataclasses import dataclass

from .classify import BaselineClassifier, ExternalClassifier, RoiImage, UNKNOWN_VERDICT, classify_roi
from .config import PipelineConfig
from .errors import DegenerateFace, DegenerateRoi, ParseError
from .geometry import FaceObservation, Landmarks5, derive_chin, eye_roi, mouth_roi, select_face
from .recorder import FrameOutcome, FrameRecord, Recorder, record_to_csv_line, record_to_jsonl_line, CSV_HEADER
from .pose import solve_pnp

log = logging.getLogger(__name__)


@dataclass
class ExtractStats:
    frames: int = 0
    detected: int = 0
    held: int = 0
    pose_failures: int = 0
    skipped_faces: int = 0  # degenerate-geometry faces treated as gaps


def _parse_point(v, name: str, line_no: int) -> tuple[float, float]:
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ParseError(line_no, f"{name} must be [x, y], got {v!r}")
    try:
        return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise ParseError(line_no, f"{name} coordinates must be numbers, got {v!r}")


def _parse_roi_payload(obj, which: str, line_no: int) -> RoiImage | None:
    spec = obj.get(which)
    if spec is None:
        return None
    try:
        w, h = int(spec["w"]), int(spec["h"])
        px = base64.b64decode(spec["px_b64"], validate=True)
    except (KeyError, TypeError, ValueError, binascii.Error) as e:
        raise ParseError(line_no, f"bad {which} roi payload: {e}")
    img = RoiImage(kind=which, width=w, height=h, pixels=px)
    try:
        img.validate()
    except ValueError as e:
        raise ParseError(line_no, f"bad {which} roi payload: {e}")
    return img


def parse_detection_line(
    line: str, line_no: int
) -> tuple[int, int, list[FaceObservation], dict[int, dict[str, RoiImage]]]:
    """One detection JSONL line -> (frame, t_ms, faces, crops per face).

    A face object carries bbox [x, y, w, h], five named landmarks,
    confidence, and optionally "roi": {"eye"/"mouth": {w, h, px_b64}}
    crops for the classifier stage.  Raises ParseError with the line
    number on any malformed content.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(line_no, f"not valid JSON: {e}")
    if not isinstance(obj, dict):
        raise ParseError(line_no, f"frame must be an object, got {type(obj).__name__}")
    try:
        frame = int(obj["frame"])
        t_ms = int(obj["t_ms"])
    except (KeyError, TypeError, ValueError):
        raise ParseError(line_no, "frame and t_ms must be present integers")
    faces_raw = obj.get("faces", [])
    if not isinstance(faces_raw, list):
        raise ParseError(line_no, f"faces must be a list, got {type(faces_raw).__name__}")
    faces: list[FaceObservation] = []
    crops: dict[int, dict[str, RoiImage]] = {}
    for fi, f in enumerate(faces_raw):
        if not isinstance(f, dict):
            raise ParseError(line_no, f"face {fi} must be an object")
        bbox = f.get("bbox")
        if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
            raise ParseError(line_no, f"face {fi} bbox must be [x, y, w, h], got {bbox!r}")
        try:
            bbox = tuple(float(b) for b in bbox)
        except (TypeError, ValueError):
            raise ParseError(line_no, f"face {fi} bbox values must be numbers")
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise ParseError(line_no, f"face {fi} bbox extent must be positive, got {bbox!r}")
        lm = f.get("landmarks")
        if not isinstance(lm, dict):
            raise ParseError(line_no, f"face {fi} landmarks must be an object")
        try:
            pts = {
                name: _parse_point(lm[name], f"face {fi} {name}", line_no)
                for name in ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")
            }
        except KeyError as e:
            raise ParseError(line_no, f"face {fi} missing landmark {e}")
        conf = f.get("confidence", 1.0)
        if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not (0.0 <= conf <= 1.0):
            raise ParseError(line_no, f"face {fi} confidence must be in [0,1], got {conf!r}")
        obs = FaceObservation(
            bbox=bbox,
            landmarks=Landmarks5(**pts),
            confidence=float(conf),
            frame_index=frame,
            timestamp_ms=t_ms,
        )
        faces.append(obs)
        roi_spec = f.get("roi")
        if roi_spec is not None:
            if not isinstance(roi_spec, dict):
                raise ParseError(line_no, f"face {fi} roi must be an object")
            per_face: dict[str, RoiImage] = {}
            for which in ("eye", "mouth"):
                img = _parse_roi_payload(roi_spec, which, line_no)
                if img is not None:
                    per_face[which] = img
            crops[fi] = per_face
    return frame, t_ms, faces, crops


def make_backend(cfg: PipelineConfig):
    if cfg.classifier.kind == "external":
        return ExternalClassifier(cfg.classifier.command, timeout_ms=cfg.classifier.timeout_ms)
    return BaselineClassifier()


class Extractor:
    """Stateful per-stream pipeline; feed lines, collect FrameRecords."""

    def __init__(self, cfg: PipelineConfig, backend=None):
        cfg.validate()
        self.cfg = cfg
        self.camera = cfg.resolved_camera()
        self.chin_k = cfg.resolved_chin_k()
        # The observed chin is an affine extension of 2D landmarks, so the
        # solver must match it against the same affine extension of the 3D
        # model, not the anatomical chin (see FaceModel3D.with_axis_chin).
        self.solve_model = cfg.face_model.with_axis_chin(self.chin_k)
        self.backend = backend if backend is not None else make_backend(cfg)
        self._own_backend = backend is None
        self.recorder = Recorder(cfg.hold.enabled, cfg.hold.max_hold_ms)
        self.stats = ExtractStats()
        self._warm = None  # last converged HeadPose

    def close(self) -> None:
        if self._own_backend:
            self.backend.close()

    def __enter__(self) -> "Extractor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def process_line(self, line: str, line_no: int) -> FrameRecord:
        frame, t_ms, faces, crops = parse_detection_line(line, line_no)
        face = select_face(faces)
        outcome = None
        if face is not None:
            face_idx = faces.index(face)
            try:
                outcome = self._process_face(face, crops.get(face_idx, {}))
            except DegenerateFace as e:
                log.warning("frame %d: unusable face geometry (%s); treating as gap", frame, e)
                self.stats.skipped_faces += 1
                outcome = None
        rec = self.recorder.record_frame(frame, t_ms, outcome)
        self.stats.frames += 1
        self.stats.detected += rec.face_detected
        self.stats.held += rec.held
        return rec

    def _process_face(self, face: FaceObservation, crops: dict[str, RoiImage]) -> FrameOutcome:
        landmarks = derive_chin(face, self.chin_k)
        image_size = (self.camera.image_width, self.camera.image_height)
        # ROI geometry runs every frame so degenerate crops surface here
        # even though classification reads the detector-provided crops.
        try:
            eye_roi(face, self.cfg.eye, image_size)
            mouth_roi(face, image_size)
        except DegenerateRoi as e:
            log.debug("degenerate roi: %s", e)

        eye_v = mouth_v = UNKNOWN_VERDICT
        if "eye" in crops:
            eye_v = classify_roi(crops["eye"], self.backend)
        if "mouth" in crops:
            mouth_v = classify_roi(crops["mouth"], self.backend)

        pose = solve_pnp(
            landmarks, self.solve_model, self.camera, params=self.cfg.solver, init=self._warm
        )
        if pose.converged:
            self._warm = pose
            return FrameOutcome(
                eye_state=eye_v.state,
                eye_conf=eye_v.confidence,
                mouth_state=mouth_v.state,
                mouth_conf=mouth_v.confidence,
                yaw_deg=pose.yaw_deg,
                pitch_deg=pose.pitch_deg,
                roll_deg=pose.roll_deg,
                reproj_rms_px=pose.reproj_rms_px,
            )
        self._warm = None
        self.stats.pose_failures += 1
        log.warning(
            "frame %d: pose solve did not converge (rms %.3f px); omitting pose",
            face.frame_index,
            pose.reproj_rms_px,
        )
        return FrameOutcome(
            eye_state=eye_v.state,
            eye_conf=eye_v.confidence,
            mouth_state=mouth_v.state,
            mouth_conf=mouth_v.confidence,
        )


def extract_records(lines, cfg: PipelineConfig, backend=None) -> tuple[list[FrameRecord], ExtractStats]:
    """Run the pipeline over an iterable of detection lines."""
    records: list[FrameRecord] = []
    with Extractor(cfg, backend=backend) as ex:
        for line_no, line in enumerate(lines, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                records.append(ex.process_line(line, line_no))
            except ParseError as e:
                raise ParseError(e.line_no, str(e).split(": ", 1)[1], records)
        return records, ex.stats


def extract_to_sink(lines, cfg: PipelineConfig, sink, fmt: str, backend=None) -> ExtractStats:
    """Streaming variant: write each record as it is produced.

    sink must be a binary file-like object; fmt is csv or jsonl.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"format must be csv or jsonl, got {fmt!r}")
    to_line = record_to_csv_line if fmt == "csv" else record_to_jsonl_line
    with Extractor(cfg, backend=backend) as ex:
        if fmt == "csv":
            sink.write((CSV_HEADER + "\n").encode("utf-8"))
        for line_no, line in enumerate(lines, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            rec = ex.process_line(line, line_no)
            sink.write((to_line(rec) + "\n").encode("utf-8"))
        return ex.stats
