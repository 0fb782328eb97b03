"""Open/closed classification of eye and mouth regions, plus evaluation.

Two interchangeable backends produce StateVerdict results:

  * BaselineClassifier: a threshold on horizontal-banding energy.  An
    open eye or mouth shows strong row-to-row intensity structure
    (sclera/iris bands, mouth cavity), a closed one is near uniform, so
    the ratio of row-mean variance to total pixel variance separates the
    two without shipping any image anywhere.
  * ExternalClassifier: a line-oriented JSON protocol over a child
    process's stdin/stdout, for plugging in trained models.  The parent
    never blocks forever: late replies are abandoned and the frame is
    reported unknown.

Pixels are 8-bit grayscale, row-major.  Only tiny eye/mouth crops ever
reach a backend; full frames stay outside this pipeline by design.
"""

from __future__ import annotations

import base64
import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .errors import BackendUnavailable, EmptyMatrix, InsufficientData, ParseError, ProtocolError
from .util import clamp, round_half_away

log = logging.getLogger(__name__)

OPEN = "open"
CLOSED = "closed"
UNKNOWN = "unknown"
STATES = (OPEN, CLOSED, UNKNOWN)

# Banding-energy thresholds per ROI kind.
BASELINE_TAU = {"eye": 0.15, "mouth": 0.10}


@dataclass(frozen=True)
class RoiImage:
    """A grayscale crop: kind is "eye" or "mouth"."""

    kind: str
    width: int
    height: int
    pixels: bytes  # row-major, len == width * height

    def validate(self) -> None:
        if self.kind not in ("eye", "mouth"):
            raise ValueError(f"kind must be 'eye' or 'mouth', got {self.kind!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"ROI must be at least 1x1, got {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height:
            raise ValueError(
                f"pixel buffer has {len(self.pixels)} bytes, "
                f"expected {self.width * self.height}"
            )

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, kind: str, arr: np.ndarray) -> "RoiImage":
        arr = np.asarray(arr, dtype=np.uint8)
        h, w = arr.shape
        return cls(kind=kind, width=w, height=h, pixels=arr.tobytes())


@dataclass(frozen=True)
class StateVerdict:
    state: str  # open | closed | unknown
    confidence: float  # in [0, 1]; 0.0 for unknown


UNKNOWN_VERDICT = StateVerdict(state=UNKNOWN, confidence=0.0)


def banding_energy(img: RoiImage) -> float:
    """Ratio of row-mean variance to total pixel variance (population
    variances).  0 when the crop has no intensity variation at all."""
    arr = img.as_array().astype(np.float64)
    total = float(arr.var())
    if total == 0.0:
        return 0.0
    return float(arr.mean(axis=1).var()) / total


def baseline_classify(img: RoiImage, tau: float | None = None) -> StateVerdict:
    """Threshold banding energy: open iff E >= tau (default per-kind
    threshold).  Confidence is the relative margin |E - tau| / tau,
    clamped to [0, 1]."""
    img.validate()
    if tau is None:
        tau = BASELINE_TAU[img.kind]
    e = banding_energy(img)
    state = OPEN if e >= tau else CLOSED
    conf = clamp(abs(e - tau) / tau, 0.0, 1.0)
    return StateVerdict(state=state, confidence=conf)


class BaselineClassifier:
    """Stateless built-in backend wrapping baseline_classify."""

    def classify(self, img: RoiImage) -> StateVerdict:
        return baseline_classify(img)

    def close(self) -> None:  # symmetric with ExternalClassifier
        pass


def encode_request(req_id: int, img: RoiImage) -> str:
    """One protocol request line (no trailing newline)."""
    return json.dumps(
        {
            "id": req_id,
            "kind": img.kind,
            "w": img.width,
            "h": img.height,
            "px_b64": base64.b64encode(img.pixels).decode("ascii"),
        },
        separators=(",", ":"),
    )


def decode_response(line: str) -> tuple[int, StateVerdict]:
    """Parse one protocol response line; ProtocolError on any defect."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"response is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError(f"response must be an object, got {type(obj).__name__}")
    try:
        rid = obj["id"]
        state = obj["state"]
        conf = obj["conf"]
    except KeyError as e:
        raise ProtocolError(f"response missing field {e}") from e
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise ProtocolError(f"response id must be an integer, got {rid!r}")
    if state not in STATES:
        raise ProtocolError(f"response state must be one of {STATES}, got {state!r}")
    if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not (0.0 <= conf <= 1.0):
        raise ProtocolError(f"response conf must be a number in [0,1], got {conf!r}")
    return rid, StateVerdict(state=state, confidence=float(conf))


class ExternalClassifier:
    """Client for a line-oriented JSON classifier child process.

    Requests carry an incrementing id.  A reader thread feeds replies
    into a queue so a slow backend cannot block the pipeline past
    timeout_ms; replies to abandoned requests (stale ids) are discarded
    when they eventually arrive.  A reply with an id from the future is a
    protocol violation and raises.  If the process is not running, or
    exits mid-request, classify raises BackendUnavailable.
    """

    def __init__(self, command: list[str] | str, timeout_ms: int = 200):
        if isinstance(command, str):
            import shlex

            command = shlex.split(command)
        if not command:
            raise ValueError("backend command must not be empty")
        self._command = command
        self._timeout_s = timeout_ms / 1000.0
        self._proc: subprocess.Popen | None = None
        self._replies: queue.Queue = queue.Queue()
        self._reader: threading.Thread | None = None
        self._next_id = 0
        # Sticky death marker: poll() can lag the EOF we observe on the
        # child's stdout, so "the stream closed" is remembered here
        # instead of re-derived from the process state.
        self._dead = False

    def _ensure_started(self) -> None:
        if self._dead:
            raise BackendUnavailable("backend process is gone")
        if self._proc is not None:
            if self._proc.poll() is None:
                return
            self._dead = True
            raise BackendUnavailable(
                f"backend exited with code {self._proc.returncode}"
            )
        try:
            self._proc = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,  # line buffered
            )
        except OSError as e:
            raise BackendUnavailable(f"cannot start backend {self._command!r}: {e}") from e
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        assert self._proc is not None and self._proc.stdout is not None
        for line in self._proc.stdout:
            line = line.strip()
            if line:
                self._replies.put(line)
        self._replies.put(None)  # EOF marker: process closed its stdout

    def classify(self, img: RoiImage) -> StateVerdict:
        img.validate()
        self._ensure_started()
        assert self._proc is not None and self._proc.stdin is not None
        req_id = self._next_id
        self._next_id += 1
        try:
            self._proc.stdin.write(encode_request(req_id, img) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            self._dead = True
            raise BackendUnavailable(f"backend pipe closed: {e}") from e
        deadline = self._timeout_s
        while True:
            try:
                line = self._replies.get(timeout=deadline)
            except queue.Empty:
                log.warning("classifier backend reply timed out; reporting unknown")
                return UNKNOWN_VERDICT
            if line is None:
                self._dead = True
                raise BackendUnavailable("backend closed its output stream")
            rid, verdict = decode_response(line)
            if rid == req_id:
                return verdict
            if rid > req_id:
                raise ProtocolError(
                    f"backend answered request {rid} before request {req_id}"
                )
            # rid < req_id: late reply to an abandoned request; drop it.
            log.debug("discarding stale backend reply id=%d", rid)

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            self._proc.wait(timeout=2.0)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalClassifier":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def classify_roi(img: RoiImage, backend) -> StateVerdict:
    """Classify one crop, degrading to unknown when the backend is gone.

    A dead or unreachable backend must not poison the whole stream, so
    BackendUnavailable is logged and absorbed; protocol violations still
    raise because they mean the backend cannot be trusted at all.
    """
    try:
        return backend.classify(img)
    except BackendUnavailable as e:
        log.error("classifier backend unavailable: %s", e)
        return UNKNOWN_VERDICT


# --- evaluation -----------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float | None  # None when tp + fp == 0
    recall: float | None  # None when tp + fn == 0


def compute_metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has no entries")
    precision = cm.tp / (cm.tp + cm.fp) if (cm.tp + cm.fp) > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if (cm.tp + cm.fn) > 0 else None
    return Metrics(accuracy=(cm.tp + cm.tn) / cm.total, precision=precision, recall=recall)


@dataclass(frozen=True)
class ManifestItem:
    path: str  # PGM file, relative paths resolved against the manifest dir
    kind: str  # eye | mouth
    label: str  # open | closed


@dataclass(frozen=True)
class EvaluationReport:
    matrix: ConfusionMatrix
    metrics: Metrics | None  # None when every test verdict was unknown
    n_train: int
    n_test: int
    n_unknown: int


def load_manifest(path) -> list[ManifestItem]:
    """Read a JSONL dataset manifest of {"path", "kind", "label"} rows."""
    import os

    items: list[ManifestItem] = []
    base = os.path.dirname(os.fspath(path))
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(line_no, f"manifest line is not valid JSON: {e}")
            try:
                p, kind, label = obj["path"], obj["kind"], obj["label"]
            except (TypeError, KeyError):
                raise ParseError(line_no, "manifest line needs path, kind and label")
            if kind not in ("eye", "mouth"):
                raise ParseError(line_no, f"kind must be eye or mouth, got {kind!r}")
            if label not in (OPEN, CLOSED):
                raise ParseError(line_no, f"label must be open or closed, got {label!r}")
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            items.append(ManifestItem(path=p, kind=kind, label=label))
    return items


def read_pgm(path) -> tuple[int, int, bytes]:
    """Read a binary (P5) PGM file with maxval <= 255.

    Returns (width, height, pixels).  Only the subset this package
    writes is supported: single whitespace-separated header tokens with
    optional '#' comment lines.
    """
    with open(path, "rb") as f:
        data = f.read()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        # skip whitespace and comment lines
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j > i:
            tokens.append(data[i:j])
        i = j
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header")
    if w < 1 or h < 1 or not (0 < maxval <= 255):
        raise ValueError(f"{path}: unsupported PGM geometry {w}x{h} maxval {maxval}")
    pixels = data[i + 1 : i + 1 + w * h]
    if len(pixels) != w * h:
        raise ValueError(f"{path}: truncated PGM pixel data")
    return w, h, pixels


def write_pgm(path, width: int, height: int, pixels: bytes) -> None:
    if len(pixels) != width * height:
        raise ValueError(f"pixel buffer has {len(pixels)} bytes for {width}x{height}")
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(pixels)


def evaluate_dataset(manifest: list[ManifestItem], backend, split_seed: int) -> EvaluationReport:
    """Train/test a backend on a labelled crop dataset.

    Shuffles with random.Random(split_seed), holds out the last 10%
    (rounded half away from zero) as the test set, calls
    backend.train(items) if the backend has one, then scores the test
    items.  Positive class is "open".  Unknown verdicts are excluded from
    the confusion matrix and reported in n_unknown.
    """
    import random

    n_open = sum(1 for it in manifest if it.label == OPEN)
    n_closed = sum(1 for it in manifest if it.label == CLOSED)
    if len(manifest) < 10 or n_open == 0 or n_closed == 0:
        raise InsufficientData(
            f"need at least 10 items with both labels present, got "
            f"{len(manifest)} items ({n_open} open, {n_closed} closed)"
        )
    items = list(manifest)
    random.Random(split_seed).shuffle(items)
    n_test = round_half_away(0.10 * len(items))
    train, test = items[: len(items) - n_test], items[len(items) - n_test :]
    if hasattr(backend, "train"):
        backend.train([(it.path, it.kind, it.label) for it in train])
    tp = fp = tn = fn = unknown = 0
    for it in test:
        w, h, px = read_pgm(it.path)
        verdict = classify_roi(RoiImage(kind=it.kind, width=w, height=h, pixels=px), backend)
        if verdict.state == UNKNOWN:
            unknown += 1
        elif verdict.state == OPEN:
            tp += it.label == OPEN
            fp += it.label == CLOSED
        else:
            tn += it.label == CLOSED
            fn += it.label == OPEN
    cm = ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)
    metrics = compute_metrics(cm) if cm.total > 0 else None
    return EvaluationReport(
        matrix=cm, metrics=metrics, n_train=len(train), n_test=n_test, n_unknown=unknown
    )


# --- model comparison table -----------------------------------------------


@dataclass(frozen=True)
class ModelReportRow:
    model_name: str
    accuracy: float
    loss: float


def format_model_comparison(rows: list[ModelReportRow]) -> str:
    """Fixed-width table, best accuracy first, ties broken by lower loss.

    Numbers render with 3 decimals.  Returns the table without a trailing
    newline.
    """
    ordered = sorted(rows, key=lambda r: (-r.accuracy, r.loss, r.model_name))
    name_w = max([len("model")] + [len(r.model_name) for r in ordered])
    lines = [f"{'model':<{name_w}}  {'accuracy':>8}  {'loss':>8}"]
    for r in ordered:
        lines.append(f"{r.model_name:<{name_w}}  {r.accuracy:>8.3f}  {r.loss:>8.3f}")
    return "\n".join(lines)
