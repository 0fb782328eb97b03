"""Per-frame result records, the hold policy, and timeseries round trips.

What leaves this pipeline is a privacy-preserving timeseries: per frame
only booleans, two categorical states with confidences, and head pose
angles.  Records quantize every float field to 6 decimal places on
construction so that writing and re-reading a stream in either format
(CSV or JSONL) reproduces the records exactly, bit for bit.

The hold policy bridges short detector dropouts: while a gap is at most
max_hold_ms long, records repeat the last detected frame's states and
pose flagged held=true; past that the stream reverts to unknown.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass

from .errors import NonMonotonicFrame, ParseError
from .util import quantize6

CSV_HEADER = "frame,t_ms,detected,held,eye,eye_conf,mouth,mouth_conf,yaw,pitch,roll,rms"

_VALID_STATES = ("open", "closed", "unknown")


@dataclass(frozen=True)
class FrameOutcome:
    """What the extraction stages produced for one detected face."""

    eye_state: str = "unknown"
    eye_conf: float = 0.0
    mouth_state: str = "unknown"
    mouth_conf: float = 0.0
    yaw_deg: float | None = None
    pitch_deg: float | None = None
    roll_deg: float | None = None
    reproj_rms_px: float | None = None


@dataclass(frozen=True)
class FrameRecord:
    """One timeseries row.  Float fields are stored already quantized to
    the 6-decimal wire precision (see module docstring)."""

    frame_index: int
    timestamp_ms: int
    face_detected: bool
    held: bool
    eye_state: str
    eye_conf: float
    mouth_state: str
    mouth_conf: float
    yaw_deg: float | None = None
    pitch_deg: float | None = None
    roll_deg: float | None = None
    reproj_rms_px: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "eye_conf", quantize6(self.eye_conf))
        object.__setattr__(self, "mouth_conf", quantize6(self.mouth_conf))
        for name in ("yaw_deg", "pitch_deg", "roll_deg", "reproj_rms_px"):
            object.__setattr__(self, name, quantize6(getattr(self, name)))

    @property
    def has_pose(self) -> bool:
        return self.yaw_deg is not None

    def validate(self) -> None:
        if self.face_detected and self.held:
            raise ValueError("a record cannot be both detected and held")
        if self.eye_state not in _VALID_STATES or self.mouth_state not in _VALID_STATES:
            raise ValueError(
                f"states must be one of {_VALID_STATES}, got "
                f"eye={self.eye_state!r} mouth={self.mouth_state!r}"
            )
        for name in ("eye_conf", "mouth_conf"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0,1], got {v}")
        pose = (self.yaw_deg, self.pitch_deg, self.roll_deg, self.reproj_rms_px)
        present = [v is not None for v in pose]
        if any(present) and not all(present):
            raise ValueError("pose fields must be all present or all absent")
        if all(present) and not all(math.isfinite(v) for v in pose):
            raise ValueError("pose fields must be finite")


class Recorder:
    """Turns per-frame outcomes into a monotonic record stream with holds."""

    def __init__(self, hold_enabled: bool = True, max_hold_ms: int = 2000):
        if max_hold_ms < 0:
            raise ValueError(f"max_hold_ms must be >= 0, got {max_hold_ms}")
        self.hold_enabled = hold_enabled
        self.max_hold_ms = max_hold_ms
        self._last: FrameRecord | None = None
        self._last_valid: FrameRecord | None = None

    def record_frame(
        self, frame_index: int, timestamp_ms: int, outcome: FrameOutcome | None
    ) -> FrameRecord:
        """Produce the record for one frame; outcome None means no face.

        Raises NonMonotonicFrame when the frame index does not strictly
        increase or the timestamp decreases.
        """
        if self._last is not None:
            if frame_index <= self._last.frame_index:
                raise NonMonotonicFrame(
                    f"frame index {frame_index} after {self._last.frame_index}"
                )
            if timestamp_ms < self._last.timestamp_ms:
                raise NonMonotonicFrame(
                    f"timestamp {timestamp_ms} after {self._last.timestamp_ms}"
                )
        if outcome is not None:
            rec = FrameRecord(
                frame_index=frame_index,
                timestamp_ms=timestamp_ms,
                face_detected=True,
                held=False,
                eye_state=outcome.eye_state,
                eye_conf=outcome.eye_conf,
                mouth_state=outcome.mouth_state,
                mouth_conf=outcome.mouth_conf,
                yaw_deg=outcome.yaw_deg,
                pitch_deg=outcome.pitch_deg,
                roll_deg=outcome.roll_deg,
                reproj_rms_px=outcome.reproj_rms_px,
            )
            self._last_valid = rec
        elif (
            self.hold_enabled
            and self._last_valid is not None
            and timestamp_ms - self._last_valid.timestamp_ms <= self.max_hold_ms
        ):
            lv = self._last_valid
            rec = FrameRecord(
                frame_index=frame_index,
                timestamp_ms=timestamp_ms,
                face_detected=False,
                held=True,
                eye_state=lv.eye_state,
                eye_conf=lv.eye_conf,
                mouth_state=lv.mouth_state,
                mouth_conf=lv.mouth_conf,
                yaw_deg=lv.yaw_deg,
                pitch_deg=lv.pitch_deg,
                roll_deg=lv.roll_deg,
                reproj_rms_px=lv.reproj_rms_px,
            )
        else:
            rec = FrameRecord(
                frame_index=frame_index,
                timestamp_ms=timestamp_ms,
                face_detected=False,
                held=False,
                eye_state="unknown",
                eye_conf=0.0,
                mouth_state="unknown",
                mouth_conf=0.0,
            )
        self._last = rec
        return rec


def _fmt6(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def record_to_csv_line(rec: FrameRecord) -> str:
    return (
        f"{rec.frame_index},{rec.timestamp_ms},"
        f"{int(rec.face_detected)},{int(rec.held)},"
        f"{rec.eye_state},{rec.eye_conf:.6f},"
        f"{rec.mouth_state},{rec.mouth_conf:.6f},"
        f"{_fmt6(rec.yaw_deg)},{_fmt6(rec.pitch_deg)},"
        f"{_fmt6(rec.roll_deg)},{_fmt6(rec.reproj_rms_px)}"
    )


def record_to_jsonl_line(rec: FrameRecord) -> str:
    obj = {
        "frame_index": rec.frame_index,
        "timestamp_ms": rec.timestamp_ms,
        "face_detected": rec.face_detected,
        "held": rec.held,
        "eye_state": rec.eye_state,
        "eye_conf": rec.eye_conf,
        "mouth_state": rec.mouth_state,
        "mouth_conf": rec.mouth_conf,
    }
    if rec.has_pose:
        obj["yaw_deg"] = rec.yaw_deg
        obj["pitch_deg"] = rec.pitch_deg
        obj["roll_deg"] = rec.roll_deg
        obj["reproj_rms_px"] = rec.reproj_rms_px
    return json.dumps(obj, separators=(",", ":"))


def write_timeseries(records, sink, format: str = "csv") -> int:
    """Write records to a path or binary file-like object.

    Output is UTF-8 with LF line endings regardless of platform; returns
    the number of bytes written.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"format must be csv or jsonl, got {format!r}")
    if format == "csv":
        lines = [CSV_HEADER]
        lines.extend(record_to_csv_line(r) for r in records)
    else:
        lines = [record_to_jsonl_line(r) for r in records]
    payload = ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
    if hasattr(sink, "write"):
        sink.write(payload)
    else:
        with open(sink, "wb") as f:
            f.write(payload)
    return len(payload)


def _parse_flag(s: str, name: str, line_no: int) -> bool:
    if s == "0":
        return False
    if s == "1":
        return True
    raise ParseError(line_no, f"{name} must be 0 or 1, got {s!r}")


def _parse_state(s: str, name: str, line_no: int) -> str:
    if s not in _VALID_STATES:
        raise ParseError(line_no, f"{name} must be one of {_VALID_STATES}, got {s!r}")
    return s


def _parse_conf(s: str, name: str, line_no: int) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ParseError(line_no, f"{name} is not a number: {s!r}")
    if not (0.0 <= v <= 1.0):
        raise ParseError(line_no, f"{name} must be in [0,1], got {v}")
    return v


def _parse_opt_float(s: str, name: str, line_no: int) -> float | None:
    if s == "":
        return None
    try:
        v = float(s)
    except ValueError:
        raise ParseError(line_no, f"{name} is not a number: {s!r}")
    if not math.isfinite(v):
        raise ParseError(line_no, f"{name} must be finite, got {v}")
    return v


def _record_from_csv(fields: list[str], line_no: int) -> FrameRecord:
    if len(fields) != 12:
        raise ParseError(line_no, f"expected 12 CSV fields, got {len(fields)}")
    try:
        frame = int(fields[0])
        t_ms = int(fields[1])
    except ValueError:
        raise ParseError(line_no, f"frame/t_ms must be integers, got {fields[:2]}")
    rec = FrameRecord(
        frame_index=frame,
        timestamp_ms=t_ms,
        face_detected=_parse_flag(fields[2], "detected", line_no),
        held=_parse_flag(fields[3], "held", line_no),
        eye_state=_parse_state(fields[4], "eye", line_no),
        eye_conf=_parse_conf(fields[5], "eye_conf", line_no),
        mouth_state=_parse_state(fields[6], "mouth", line_no),
        mouth_conf=_parse_conf(fields[7], "mouth_conf", line_no),
        yaw_deg=_parse_opt_float(fields[8], "yaw", line_no),
        pitch_deg=_parse_opt_float(fields[9], "pitch", line_no),
        roll_deg=_parse_opt_float(fields[10], "roll", line_no),
        reproj_rms_px=_parse_opt_float(fields[11], "rms", line_no),
    )
    try:
        rec.validate()
    except ValueError as e:
        raise ParseError(line_no, str(e))
    return rec


def _record_from_json(line: str, line_no: int) -> FrameRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(line_no, f"not valid JSON: {e}")
    if not isinstance(obj, dict):
        raise ParseError(line_no, f"record must be an object, got {type(obj).__name__}")
    try:
        rec = FrameRecord(
            frame_index=int(obj["frame_index"]),
            timestamp_ms=int(obj["timestamp_ms"]),
            face_detected=bool(obj["face_detected"]),
            held=bool(obj["held"]),
            eye_state=obj["eye_state"],
            eye_conf=float(obj["eye_conf"]),
            mouth_state=obj["mouth_state"],
            mouth_conf=float(obj["mouth_conf"]),
            yaw_deg=obj.get("yaw_deg"),
            pitch_deg=obj.get("pitch_deg"),
            roll_deg=obj.get("roll_deg"),
            reproj_rms_px=obj.get("reproj_rms_px"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(line_no, f"bad record fields: {e}")
    try:
        rec.validate()
    except ValueError as e:
        raise ParseError(line_no, str(e))
    return rec


def read_timeseries(source, format: str = "csv") -> list[FrameRecord]:
    """Read records from a path, text, or binary file-like source.

    Raises ParseError on the first malformed line; the exception carries
    the records parsed before it.  Frame indexes must strictly increase
    and timestamps must not decrease.
    """
    if format not in ("csv", "jsonl"):
        raise ValueError(f"format must be csv or jsonl, got {format!r}")
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
    elif isinstance(source, (str, os.PathLike)) and not isinstance(source, io.IOBase):
        with open(source, encoding="utf-8") as f:
            data = f.read()
    else:
        raise TypeError(f"cannot read from {type(source).__name__}")
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    records: list[FrameRecord] = []
    start = 0
    if format == "csv":
        if not lines or lines[0] != CSV_HEADER:
            got = lines[0] if lines else "<empty file>"
            raise ParseError(1, f"bad CSV header: {got!r}", records)
        start = 1
    for i, line in enumerate(lines[start:], start=start + 1):
        if line == "":
            raise ParseError(i, "blank line inside stream", records)
        try:
            if format == "csv":
                rec = _record_from_csv(line.split(","), i)
            else:
                rec = _record_from_json(line, i)
        except ParseError as e:
            raise ParseError(e.line_no, str(e).split(": ", 1)[1], records)
        if records:
            prev = records[-1]
            if rec.frame_index <= prev.frame_index:
                raise ParseError(
                    i, f"frame index {rec.frame_index} after {prev.frame_index}", records
                )
            if rec.timestamp_ms < prev.timestamp_ms:
                raise ParseError(
                    i, f"timestamp {rec.timestamp_ms} after {prev.timestamp_ms}", records
                )
        records.append(rec)
    return records
