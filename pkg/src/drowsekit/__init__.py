"""drowsekit: drowsiness information extraction from landmark streams.

The pipeline consumes per-frame face detections (five landmarks plus a
bounding box), derives the chin, classifies eye/mouth crops as open or
closed, solves head pose from six 2D-3D correspondences, and emits a
privacy-preserving timeseries from which blinks, prolonged closures,
yawns and nods are detected.  A synthetic generator produces detection
streams with exact ground truth for end-to-end verification.
"""

from .errors import (
    BackendUnavailable,
    BehindCamera,
    ConfigError,
    DegenerateFace,
    DegenerateRoi,
    DrowsekitError,
    EmptyMatrix,
    EmptyStream,
    InsufficientData,
    InvalidDimensions,
    NonMonotonicFrame,
    NotARotation,
    ParseError,
    ProtocolError,
    ScenarioError,
)
from .geometry import (
    FaceObservation,
    LandmarkSet6,
    Landmarks5,
    RoiRect,
    derive_chin,
    eye_roi,
    mouth_roi,
    select_face,
)
from .pose import (
    CANONICAL_FACE_MODEL,
    CameraModel,
    FaceModel3D,
    HeadPose,
    SolverParams,
    default_camera,
    euler_to_rotation,
    project,
    rodrigues,
    rotation_to_euler,
    rotation_to_rvec,
    solve_pnp,
)
from .classify import (
    BaselineClassifier,
    ConfusionMatrix,
    EvaluationReport,
    ExternalClassifier,
    ManifestItem,
    Metrics,
    ModelReportRow,
    RoiImage,
    StateVerdict,
    baseline_classify,
    classify_roi,
    compute_metrics,
    evaluate_dataset,
    format_model_comparison,
    load_manifest,
)
from .recorder import FrameOutcome, FrameRecord, Recorder, read_timeseries, write_timeseries
from .events import (
    DrowsinessEvent,
    Episode,
    EventConfig,
    WindowStats,
    detect_events,
    segment_episodes,
    window_stats,
)
from .synth import PoseSegment, Scenario, generate, load_scenario
from .config import ClassifierConfig, HoldConfig, PipelineConfig, load_config
from .pipeline import Extractor, extract_records, parse_detection_line

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
