"""Episode segmentation and drowsiness event detection over a timeseries.

Time model: each frame owns the half-open interval from its timestamp to
the next frame's timestamp; the last frame's duration repeats the
previous inter-frame gap (1 ms for a single-frame stream).  Held frames
count as known observations (that is the point of holding); unknown
frames at the stream edges belong to no episode, unknown frames between
episodes extend the preceding one.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from .errors import ConfigError, EmptyStream
from .recorder import FrameRecord


@dataclass(frozen=True)
class EventConfig:
    blink_max_ms: int = 500
    closure_min_ms: int = 2000
    yawn_min_ms: int = 2000
    nod_delta_deg: float = 15.0
    nod_fall_max_ms: int = 1000
    nod_recover_max_ms: int = 2000
    debounce_ms: int = 100
    baseline_window_ms: int = 30000

    def validate(self) -> None:
        for name in (
            "blink_max_ms",
            "closure_min_ms",
            "yawn_min_ms",
            "nod_fall_max_ms",
            "nod_recover_max_ms",
            "baseline_window_ms",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.debounce_ms < 0:
            raise ConfigError(f"debounce_ms must be >= 0, got {self.debounce_ms}")
        if self.nod_delta_deg <= 0:
            raise ConfigError(f"nod_delta_deg must be positive, got {self.nod_delta_deg}")
        if self.blink_max_ms >= self.closure_min_ms:
            raise ConfigError(
                f"blink_max_ms ({self.blink_max_ms}) must be below "
                f"closure_min_ms ({self.closure_min_ms})"
            )


@dataclass(frozen=True)
class Episode:
    """Maximal run of one state on one channel, time span [start, end)."""

    channel: str  # "eye" | "mouth"
    state: str  # "open" | "closed"
    start_ms: int
    end_ms: int
    first_frame: int  # frame_index of the first record in the span
    last_frame: int  # frame_index of the last record in the span

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class DrowsinessEvent:
    kind: str  # blink | prolonged_closure | yawn | nod
    start_ms: int
    end_ms: int
    magnitude: float  # ms for duration events, peak pitch drop (deg) for nods


@dataclass(frozen=True)
class WindowStats:
    window_start_ms: int
    window_end_ms: int
    blink_count: int
    yawn_count: int
    nod_count: int
    closed_fraction: float | None  # None when the window has no known eye time
    held_fraction: float
    valid_fraction: float
    mean_pitch_deg: float | None  # None when the window has no pose


def frame_durations(records: list[FrameRecord]) -> list[int]:
    """Duration in ms owned by each frame (see module docstring)."""
    n = len(records)
    if n == 0:
        return []
    if n == 1:
        return [1]
    durs = [records[i + 1].timestamp_ms - records[i].timestamp_ms for i in range(n - 1)]
    durs.append(records[-1].timestamp_ms - records[-2].timestamp_ms)
    return durs


def stream_end_ms(records: list[FrameRecord]) -> int:
    """Timestamp just past the last frame's owned interval."""
    if not records:
        raise EmptyStream("no records")
    return records[-1].timestamp_ms + frame_durations(records)[-1]


def segment_episodes(
    records: list[FrameRecord], channel: str, debounce_ms: int = 100
) -> list[Episode]:
    """Split one state channel into debounced constant-state episodes.

    Runs shorter than debounce_ms are flicker: each such run (leftmost
    first) is merged into its neighbours until every episode is at least
    debounce_ms long or no merge is possible.  A lone short run is kept;
    nothing is invented.
    """
    if channel not in ("eye", "mouth"):
        raise ValueError(f"channel must be 'eye' or 'mouth', got {channel!r}")
    attr = f"{channel}_state"
    n = len(records)
    known = [i for i in range(n) if getattr(records[i], attr) != "unknown"]
    if not known:
        return []
    durs = frame_durations(records)
    last_known = known[-1]
    tail_end = records[last_known].timestamp_ms + durs[last_known]

    # runs as [state, start_ms, end_ms, first_rec_idx, last_rec_idx]
    runs: list[list] = []
    for pos, i in enumerate(known):
        state = getattr(records[i], attr)
        if runs and runs[-1][0] == state:
            continue
        if runs:
            runs[-1][2] = records[i].timestamp_ms  # close previous at this start
            runs[-1][4] = i - 1  # previous span absorbs interior unknowns
        runs.append([state, records[i].timestamp_ms, tail_end, i, last_known])

    if debounce_ms > 0:
        while len(runs) > 1:
            idx = next(
                (j for j, r in enumerate(runs) if r[2] - r[1] < debounce_ms), None
            )
            if idx is None:
                break
            r = runs.pop(idx)
            if 0 < idx <= len(runs) - 1:
                # interior: both neighbours share a state; fuse all three
                left, right = runs[idx - 1], runs[idx]
                left[2] = right[2]
                left[4] = right[4]
                runs.pop(idx)
            elif idx == 0:
                runs[0][1] = r[1]
                runs[0][3] = r[3]
            else:
                runs[-1][2] = r[2]
                runs[-1][4] = r[4]

    return [
        Episode(
            channel=channel,
            state=st,
            start_ms=s,
            end_ms=e,
            first_frame=records[i0].frame_index,
            last_frame=records[i1].frame_index,
        )
        for st, s, e, i0, i1 in runs
    ]


def _detect_nods(records: list[FrameRecord], cfg: EventConfig) -> list[DrowsinessEvent]:
    """Nods on the pitch channel, measured as drop below a rolling median.

    d(t) = baseline(t) - pitch(t) where baseline is the median pitch over
    the trailing baseline_window_ms (current sample included).  An
    excursion arms when d >= delta/2; it becomes a nod when d reaches
    delta within nod_fall_max_ms of arming and returns to delta/2 within
    nod_recover_max_ms of the trigger.  The event spans arm..recovery and
    its magnitude is the peak drop.  Frames without pose are skipped.
    """
    samples = [
        (r.timestamp_ms, r.pitch_deg) for r in records if r.pitch_deg is not None
    ]
    events: list[DrowsinessEvent] = []
    if not samples:
        return events
    delta = cfg.nod_delta_deg
    half = delta / 2.0
    window: list[tuple[int, float]] = []
    state = "idle"  # idle | armed | triggered
    arm_t = 0
    trig_t = 0
    peak = 0.0
    for t, pitch in samples:
        window.append((t, pitch))
        cutoff = t - cfg.baseline_window_ms
        while window and window[0][0] <= cutoff:
            window.pop(0)
        d = statistics.median(p for _, p in window) - pitch
        if state == "idle":
            if d >= half:
                state, arm_t, peak = "armed", t, d
        if state == "armed":
            peak = max(peak, d)
            if d >= delta:
                if t - arm_t <= cfg.nod_fall_max_ms:
                    state, trig_t = "triggered", t
                else:
                    state = "toolate"  # too slow a fall; wait out the excursion
        elif state == "triggered":
            peak = max(peak, d)
            if d <= half:
                if t - trig_t <= cfg.nod_recover_max_ms:
                    events.append(
                        DrowsinessEvent(
                            kind="nod", start_ms=arm_t, end_ms=t, magnitude=peak
                        )
                    )
                state = "idle"
            elif t - trig_t > cfg.nod_recover_max_ms:
                state = "toolate"
        if state in ("armed", "toolate") and d < half:
            state = "idle"  # excursion over; re-arm on the next rise
    return events


def detect_events(
    records: list[FrameRecord], cfg: EventConfig | None = None
) -> list[DrowsinessEvent]:
    """All drowsiness events in a stream, sorted by (start, end, kind).

    blink: closed-eye episode no longer than blink_max_ms;
    prolonged_closure: closed-eye episode at least closure_min_ms;
    closed episodes between the two thresholds produce no event.
    yawn: open-mouth episode at least yawn_min_ms.  nod: see _detect_nods.
    Duration events carry their episode duration (ms) as magnitude.
    """
    cfg = cfg or EventConfig()
    cfg.validate()
    events: list[DrowsinessEvent] = []
    for ep in segment_episodes(records, "eye", cfg.debounce_ms):
        if ep.state != "closed":
            continue
        if ep.duration_ms <= cfg.blink_max_ms:
            events.append(
                DrowsinessEvent(
                    kind="blink",
                    start_ms=ep.start_ms,
                    end_ms=ep.end_ms,
                    magnitude=float(ep.duration_ms),
                )
            )
        elif ep.duration_ms >= cfg.closure_min_ms:
            events.append(
                DrowsinessEvent(
                    kind="prolonged_closure",
                    start_ms=ep.start_ms,
                    end_ms=ep.end_ms,
                    magnitude=float(ep.duration_ms),
                )
            )
    for ep in segment_episodes(records, "mouth", cfg.debounce_ms):
        if ep.state == "open" and ep.duration_ms >= cfg.yawn_min_ms:
            events.append(
                DrowsinessEvent(
                    kind="yawn",
                    start_ms=ep.start_ms,
                    end_ms=ep.end_ms,
                    magnitude=float(ep.duration_ms),
                )
            )
    events.extend(_detect_nods(records, cfg))
    events.sort(key=lambda e: (e.start_ms, e.end_ms, e.kind))
    return events


def window_stats(
    records: list[FrameRecord],
    events: list[DrowsinessEvent],
    window_ms: int,
    stride_ms: int,
) -> list[WindowStats]:
    """Aggregate a stream into sliding windows.

    Windows start at the first frame's timestamp and advance by
    stride_ms while the window start lies before the stream end.  Frames
    belong to a window by timestamp; events belong by their start.
    closed_fraction is closed time over known eye time (time-weighted);
    valid_fraction counts frames whose two states are both known;
    held_fraction counts held frames.
    """
    if not records:
        raise EmptyStream("cannot window an empty stream")
    if stride_ms <= 0 or window_ms <= 0:
        raise ValueError(f"window and stride must be positive, got {window_ms}/{stride_ms}")
    if stride_ms > window_ms:
        raise ValueError(
            f"stride ({stride_ms}) larger than window ({window_ms}) would skip frames"
        )
    durs = frame_durations(records)
    t0 = records[0].timestamp_ms
    end = stream_end_ms(records)
    out: list[WindowStats] = []
    w_start = t0
    i_lo = 0
    n = len(records)
    while w_start < end:
        w_end = w_start + window_ms
        while i_lo < n and records[i_lo].timestamp_ms < w_start:
            i_lo += 1
        i = i_lo
        frames = 0
        held = 0
        valid = 0
        known_ms = 0
        closed_ms = 0
        pitch_sum = 0.0
        pitch_n = 0
        while i < n and records[i].timestamp_ms < w_end:
            r = records[i]
            frames += 1
            held += r.held
            if r.eye_state != "unknown" and r.mouth_state != "unknown":
                valid += 1
            if r.eye_state != "unknown":
                known_ms += durs[i]
                if r.eye_state == "closed":
                    closed_ms += durs[i]
            if r.pitch_deg is not None:
                pitch_sum += r.pitch_deg
                pitch_n += 1
            i += 1
        counts = {"blink": 0, "yawn": 0, "nod": 0}
        for e in events:
            if w_start <= e.start_ms < w_end and e.kind in counts:
                counts[e.kind] += 1
        out.append(
            WindowStats(
                window_start_ms=w_start,
                window_end_ms=w_end,
                blink_count=counts["blink"],
                yawn_count=counts["yawn"],
                nod_count=counts["nod"],
                closed_fraction=(closed_ms / known_ms) if known_ms > 0 else None,
                held_fraction=(held / frames) if frames > 0 else 0.0,
                valid_fraction=(valid / frames) if frames > 0 else 0.0,
                mean_pitch_deg=(pitch_sum / pitch_n) if pitch_n > 0 else None,
            )
        )
        w_start += stride_ms
    return out
