"""Pipeline configuration: defaults, JSON loading, cross-field checks.

Everything has a working default; a config file only overrides what it
names.  Camera intrinsics may be the string "auto", which derives
nominal intrinsics from image_size (fx = fy = width, principal point at
the center).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .events import EventConfig
from .pose import CANONICAL_FACE_MODEL, CameraModel, FaceModel3D, SolverParams, default_camera


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "baseline"  # baseline | external
    command: str | None = None  # required for external
    timeout_ms: int = 200

    def validate(self) -> None:
        if self.kind not in ("baseline", "external"):
            raise ConfigError(f"classifier kind must be baseline or external, got {self.kind!r}")
        if self.kind == "external" and not (self.command and self.command.strip()):
            raise ConfigError("external classifier needs a non-empty command")
        if self.timeout_ms <= 0:
            raise ConfigError(f"classifier timeout_ms must be positive, got {self.timeout_ms}")


@dataclass(frozen=True)
class HoldConfig:
    enabled: bool = True
    max_hold_ms: int = 2000

    def validate(self) -> None:
        if self.max_hold_ms < 0:
            raise ConfigError(f"max_hold_ms must be >= 0, got {self.max_hold_ms}")


@dataclass(frozen=True)
class PipelineConfig:
    camera: CameraModel | str = "auto"
    image_size: tuple[int, int] = (640, 480)
    face_model: FaceModel3D = CANONICAL_FACE_MODEL
    chin_k: float | None = None  # None: derive from face_model proportions
    solver: SolverParams = field(default_factory=SolverParams)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    hold: HoldConfig = field(default_factory=HoldConfig)
    events: EventConfig = field(default_factory=EventConfig)
    eye: str = "left"  # which eye the eye channel tracks
    output_format: str = "csv"

    def validate(self) -> None:
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ConfigError(f"image_size must be positive, got {w}x{h}")
        if isinstance(self.camera, CameraModel):
            self.camera.validate()
        elif self.camera != "auto":
            raise ConfigError(f"camera must be \"auto\" or an intrinsics object, got {self.camera!r}")
        self.face_model.validate()
        if self.chin_k is not None and not (self.chin_k > 0):
            raise ConfigError(f"chin_k must be positive, got {self.chin_k}")
        self.solver.validate()
        self.classifier.validate()
        self.hold.validate()
        self.events.validate()
        if self.eye not in ("left", "right"):
            raise ConfigError(f"eye must be left or right, got {self.eye!r}")
        if self.output_format not in ("csv", "jsonl"):
            raise ConfigError(f"output_format must be csv or jsonl, got {self.output_format!r}")

    def resolved_camera(self) -> CameraModel:
        if isinstance(self.camera, CameraModel):
            return self.camera
        return default_camera(*self.image_size)

    def resolved_chin_k(self) -> float:
        """Chin extension factor consistent with the configured 3D model."""
        if self.chin_k is not None:
            return self.chin_k
        return self.face_model.chin_axis_factor()


def _take(obj: dict, key: str, typ, default):
    v = obj.get(key, default)
    if v is default:
        return default
    try:
        return typ(v)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} has invalid value {v!r}")


def _build_camera(spec, image_size) -> CameraModel | str:
    if spec == "auto":
        return "auto"
    if not isinstance(spec, dict):
        raise ConfigError(f"camera must be \"auto\" or an object, got {spec!r}")
    try:
        cam = CameraModel(
            fx=float(spec["fx"]),
            fy=float(spec["fy"]),
            cx=float(spec["cx"]),
            cy=float(spec["cy"]),
            image_width=int(spec.get("width", image_size[0])),
            image_height=int(spec.get("height", image_size[1])),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"camera object needs numeric fx, fy, cx, cy: {e}")
    return cam


def config_from_dict(obj: dict) -> PipelineConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"config must be a JSON object, got {type(obj).__name__}")
    known = {
        "camera",
        "image_size",
        "face_model_mm",
        "chin_k",
        "solver",
        "classifier",
        "hold",
        "events",
        "eye",
        "output_format",
    }
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    cfg = PipelineConfig()
    size = obj.get("image_size", list(cfg.image_size))
    if not (isinstance(size, (list, tuple)) and len(size) == 2):
        raise ConfigError(f"image_size must be [width, height], got {size!r}")
    image_size = (int(size[0]), int(size[1]))

    camera = _build_camera(obj.get("camera", "auto"), image_size)

    face_model = cfg.face_model
    if "face_model_mm" in obj:
        face_model = FaceModel3D.from_rows(obj["face_model_mm"])

    solver = cfg.solver
    if "solver" in obj:
        s = obj["solver"]
        if not isinstance(s, dict):
            raise ConfigError(f"solver must be an object, got {s!r}")
        solver = SolverParams(
            max_iters=_take(s, "max_iters", int, solver.max_iters),
            tol=_take(s, "tol", float, solver.tol),
            lambda0=_take(s, "lambda0", float, solver.lambda0),
            warm_rms_px=_take(s, "warm_rms_px", float, solver.warm_rms_px),
        )

    classifier = cfg.classifier
    if "classifier" in obj:
        c = obj["classifier"]
        if not isinstance(c, dict):
            raise ConfigError(f"classifier must be an object, got {c!r}")
        command = c.get("command", classifier.command)
        classifier = ClassifierConfig(
            kind=_take(c, "kind", str, classifier.kind),
            command=str(command) if command is not None else None,
            timeout_ms=_take(c, "timeout_ms", int, classifier.timeout_ms),
        )

    hold = cfg.hold
    if "hold" in obj:
        hd = obj["hold"]
        if not isinstance(hd, dict):
            raise ConfigError(f"hold must be an object, got {hd!r}")
        hold = HoldConfig(
            enabled=bool(hd.get("enabled", hold.enabled)),
            max_hold_ms=_take(hd, "max_hold_ms", int, hold.max_hold_ms),
        )

    events = cfg.events
    if "events" in obj:
        ev = obj["events"]
        if not isinstance(ev, dict):
            raise ConfigError(f"events must be an object, got {ev!r}")
        events = EventConfig(
            blink_max_ms=_take(ev, "blink_max_ms", int, events.blink_max_ms),
            closure_min_ms=_take(ev, "closure_min_ms", int, events.closure_min_ms),
            yawn_min_ms=_take(ev, "yawn_min_ms", int, events.yawn_min_ms),
            nod_delta_deg=_take(ev, "nod_delta_deg", float, events.nod_delta_deg),
            nod_fall_max_ms=_take(ev, "nod_fall_max_ms", int, events.nod_fall_max_ms),
            nod_recover_max_ms=_take(ev, "nod_recover_max_ms", int, events.nod_recover_max_ms),
            debounce_ms=_take(ev, "debounce_ms", int, events.debounce_ms),
            baseline_window_ms=_take(ev, "baseline_window_ms", int, events.baseline_window_ms),
        )

    chin_k = obj.get("chin_k")
    result = PipelineConfig(
        camera=camera,
        image_size=image_size,
        face_model=face_model,
        chin_k=float(chin_k) if chin_k is not None else None,
        solver=solver,
        classifier=classifier,
        hold=hold,
        events=events,
        eye=_take(obj, "eye", str, cfg.eye),
        output_format=_take(obj, "output_format", str, cfg.output_format),
    )
    result.validate()
    return result


def load_config(path: str | None) -> PipelineConfig:
    """Config from a JSON file; None gives all defaults."""
    if path is None:
        cfg = PipelineConfig()
        cfg.validate()
        return cfg
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    return config_from_dict(obj)


def apply_overrides(
    cfg: PipelineConfig,
    *,
    classifier_kind: str | None = None,
    backend_cmd: str | None = None,
    no_hold: bool = False,
    output_format: str | None = None,
) -> PipelineConfig:
    """Apply command-line overrides on top of a loaded config."""
    if classifier_kind or backend_cmd:
        cls = cfg.classifier
        cls = ClassifierConfig(
            kind=classifier_kind or cls.kind,
            command=backend_cmd if backend_cmd is not None else cls.command,
            timeout_ms=cls.timeout_ms,
        )
        cfg = replace(cfg, classifier=cls)
    if no_hold:
        cfg = replace(cfg, hold=HoldConfig(enabled=False, max_hold_ms=cfg.hold.max_hold_ms))
    if output_format:
        cfg = replace(cfg, output_format=output_format)
    cfg.validate()
    return cfg
