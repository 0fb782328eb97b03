"""Command-line interface.

Exit codes: 0 success; 1 configuration or validation problem (including
a pose solve that does not converge); 2 malformed or unusable input
(parse errors name the offending line).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys

from .classify import ModelReportRow, format_model_comparison
from .config import apply_overrides, load_config
from .errors import ConfigError, DrowsekitError, EmptyStream, ParseError, ScenarioError
from .events import detect_events, window_stats
from .pipeline import extract_to_sink
from .pose import solve_pnp
from .recorder import read_timeseries
from .synth import generate, load_scenario, write_lines

log = logging.getLogger(__name__)

STATS_HEADER = (
    "win_start_ms,win_end_ms,blinks,yawns,nods,closed_frac,held_frac,valid_frac,mean_pitch"
)


@contextlib.contextmanager
def _in_stream(path: str):
    """Text line source; '-' reads stdin."""
    if path == "-":
        yield sys.stdin
    else:
        f = open(path, encoding="utf-8")
        try:
            yield f
        finally:
            f.close()


@contextlib.contextmanager
def _out_stream(path: str):
    """Binary sink; '-' writes stdout."""
    if path == "-":
        yield sys.stdout.buffer
        sys.stdout.buffer.flush()
    else:
        f = open(path, "wb")
        try:
            yield f
        finally:
            f.close()


def _fmt_opt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def cmd_extract(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(
        cfg,
        classifier_kind=args.classifier,
        backend_cmd=args.backend_cmd,
        no_hold=args.no_hold,
        output_format=args.format,
    )
    fmt = cfg.output_format
    with _in_stream(args.input) as src, _out_stream(args.out) as sink:
        stats = extract_to_sink(src, cfg, sink, fmt)
    if stats.pose_failures:
        print(
            f"warning: pose did not converge on {stats.pose_failures} frame(s)",
            file=sys.stderr,
        )
    return 0


def cmd_pose(args) -> int:
    cfg = load_config(args.config)
    if args.image_size:
        from dataclasses import replace

        cfg = replace(cfg, image_size=(args.image_size[0], args.image_size[1]))
        cfg.validate()
    coords = args.landmarks
    points = [(coords[i], coords[i + 1]) for i in range(0, 12, 2)]
    # The sixth point is the derived chin, so solve against the matching
    # axis-extension model exactly as the extract pipeline does.
    model = cfg.face_model.with_axis_chin(cfg.resolved_chin_k())
    pose = solve_pnp(points, model, cfg.resolved_camera(), params=cfg.solver)
    out = {
        "yaw": round(pose.yaw_deg, 6),
        "pitch": round(pose.pitch_deg, 6),
        "roll": round(pose.roll_deg, 6),
        "rms": round(pose.reproj_rms_px, 6),
        "converged": pose.converged,
    }
    print(json.dumps(out, separators=(",", ":")))
    if not pose.converged:
        print("error: pose solve did not converge", file=sys.stderr)
        return 1
    return 0


def cmd_events(args) -> int:
    cfg = load_config(args.config)
    with _in_stream(args.input) as src:
        records = read_timeseries(src, format=args.format)
    if not records:
        raise EmptyStream("input timeseries has no records")
    events = detect_events(records, cfg.events)
    lines = [
        json.dumps(
            {
                "kind": e.kind,
                "start_ms": e.start_ms,
                "end_ms": e.end_ms,
                "magnitude": round(e.magnitude, 6),
            },
            separators=(",", ":"),
        )
        for e in events
    ]
    with _out_stream(args.out) as sink:
        write_lines(lines, sink)
    return 0


def cmd_stats(args) -> int:
    cfg = load_config(args.config)
    with _in_stream(args.input) as src:
        records = read_timeseries(src, format=args.format)
    try:
        events = detect_events(records, cfg.events) if records else []
        windows = window_stats(records, events, args.window_ms, args.stride_ms)
    except ValueError as e:
        raise ConfigError(str(e))
    lines = [STATS_HEADER]
    for w in windows:
        lines.append(
            f"{w.window_start_ms},{w.window_end_ms},"
            f"{w.blink_count},{w.yawn_count},{w.nod_count},"
            f"{_fmt_opt(w.closed_fraction)},{w.held_fraction:.6f},"
            f"{w.valid_fraction:.6f},{_fmt_opt(w.mean_pitch_deg)}"
        )
    with _out_stream(args.out) as sink:
        sink.write(("\n".join(lines) + "\n").encode("utf-8"))
    return 0


def cmd_synth(args) -> int:
    scn = load_scenario(args.scenario)
    if args.seed is not None:
        from dataclasses import replace

        scn = replace(scn, seed=args.seed)
    det, truth = generate(scn)
    with _out_stream(args.out_detections) as sink:
        write_lines(det, sink)
    if args.out_truth:
        with _out_stream(args.out_truth) as sink:
            write_lines(truth, sink)
    return 0


def cmd_report(args) -> int:
    rows = []
    with _in_stream(args.input) as src:
        for line_no, line in enumerate(src, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rows.append(
                    ModelReportRow(
                        model_name=str(obj["model"]),
                        accuracy=float(obj["accuracy"]),
                        loss=float(obj["loss"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(line_no, f"bad report row: {e}")
    table = format_model_comparison(rows)
    with _out_stream(args.out) as sink:
        sink.write((table + "\n").encode("utf-8"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="drowsekit",
        description="Extract drowsiness timeseries and events from facial-landmark streams.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    px = sub.add_parser("extract", help="detections JSONL -> per-frame timeseries")
    px.add_argument("--in", dest="input", required=True, help="detections JSONL ('-' = stdin)")
    px.add_argument("--out", default="-", help="output path ('-' = stdout)")
    px.add_argument("--config", default=None, help="config JSON path")
    px.add_argument("--format", choices=("csv", "jsonl"), default=None, help="output format")
    px.add_argument("--classifier", choices=("baseline", "external"), default=None)
    px.add_argument("--backend-cmd", default=None, help="external classifier command")
    px.add_argument("--no-hold", action="store_true", help="disable the dropout hold policy")
    px.set_defaults(func=cmd_extract)

    pp = sub.add_parser("pose", help="solve head pose from six inline landmarks")
    pp.add_argument(
        "--landmarks",
        nargs=12,
        type=float,
        required=True,
        metavar="C",
        help="x y pairs: left_eye right_eye nose mouth_left mouth_right chin(derived)",
    )
    pp.add_argument("--config", default=None)
    pp.add_argument("--image-size", nargs=2, type=int, default=None, metavar=("W", "H"))
    pp.set_defaults(func=cmd_pose)

    pe = sub.add_parser("events", help="timeseries -> drowsiness events JSONL")
    pe.add_argument("--in", dest="input", required=True, help="timeseries path ('-' = stdin)")
    pe.add_argument("--out", default="-")
    pe.add_argument("--config", default=None)
    pe.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="input format")
    pe.set_defaults(func=cmd_events)

    ps = sub.add_parser("stats", help="timeseries -> sliding-window statistics CSV")
    ps.add_argument("--in", dest="input", required=True)
    ps.add_argument("--out", default="-")
    ps.add_argument("--config", default=None)
    ps.add_argument("--format", choices=("csv", "jsonl"), default="csv", help="input format")
    ps.add_argument("--window-ms", type=int, default=60000)
    ps.add_argument("--stride-ms", type=int, default=None)
    ps.set_defaults(func=cmd_stats)

    py = sub.add_parser("synth", help="scenario JSON -> synthetic detections + truth")
    py.add_argument("--scenario", required=True)
    py.add_argument("--out-detections", required=True)
    py.add_argument("--out-truth", default=None)
    py.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    py.set_defaults(func=cmd_synth)

    pr = sub.add_parser("report", help="model metric rows -> comparison table")
    pr.add_argument("--in", dest="input", required=True, help="JSONL of model/accuracy/loss")
    pr.add_argument("--out", default="-")
    pr.set_defaults(func=cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "stride_ms", None) is None and args.command == "stats":
        args.stride_ms = args.window_ms
    try:
        return args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except EmptyStream as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: cannot read input: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DrowsekitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
