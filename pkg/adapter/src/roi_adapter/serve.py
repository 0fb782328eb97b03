"""Line-delimited JSON classifier service for eye/mouth ROI crops.

Run with exactly one argument, the config path:

    python3 serve.py config.json

Each stdin line is a request {"id", "kind", "w", "h", "px_b64"}; each
request gets exactly one response line {"id", "state", "conf"}, in
request order.  Malformed requests never crash the service: they get
{"id": <echoed or -1>, "state": "closed", "conf": 0.0} plus a
diagnostic on stderr.  The process exits 0 when stdin closes.

The default "heuristic" model scores the crop's horizontal banding
energy (variance of row means over variance of all pixels) against a
per-kind threshold: a crop with strong row structure reads as an open
eye or mouth, a flat crop as closed.  A model file (JSON, type
"threshold") can replace the thresholds with trained values; the file
must resolve at startup or the service exits nonzero before reading
any request.  This file is deliberately dependency-free so the service
runs anywhere a Python interpreter does.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import json
import os
import sys

DEFAULT_THRESHOLDS = {"eye": 0.15, "mouth": 0.10}
KINDS = ("eye", "mouth")


class AdapterError(Exception):
    """Startup-time configuration or model problem."""


class AdapterConfig:
    def __init__(self, model: str = "heuristic", thresholds: dict | None = None):
        self.model = model
        self.explicit_thresholds = dict(thresholds or {})
        self.thresholds = dict(DEFAULT_THRESHOLDS)
        self.thresholds.update(self.explicit_thresholds)

    @classmethod
    def load(cls, path: str) -> "AdapterConfig":
        try:
            with open(path, encoding="utf-8") as f:
                obj = json.load(f)
        except OSError as e:
            raise AdapterError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise AdapterError(f"config {path} is not valid JSON: {e}")
        if not isinstance(obj, dict):
            raise AdapterError("config must be a JSON object")
        unknown = set(obj) - {"model", "thresholds"}
        if unknown:
            raise AdapterError(f"unknown config keys: {sorted(unknown)}")
        model = obj.get("model", "heuristic")
        if not isinstance(model, str) or not model.strip():
            raise AdapterError(f"model must be \"heuristic\" or a file path, got {model!r}")
        thresholds = obj.get("thresholds")
        if thresholds is not None:
            if not isinstance(thresholds, dict):
                raise AdapterError(f"thresholds must be an object, got {thresholds!r}")
            unknown = set(thresholds) - set(KINDS)
            if unknown:
                raise AdapterError(f"unknown threshold kinds: {sorted(unknown)}")
            for kind, tau in thresholds.items():
                if not isinstance(tau, (int, float)) or isinstance(tau, bool) or tau <= 0:
                    raise AdapterError(f"threshold for {kind} must be a positive number, got {tau!r}")
        cfg = cls(model=model, thresholds=thresholds)
        return cfg


def resolve_model(cfg: AdapterConfig) -> dict:
    """Thresholds to serve with; fails fast on an unusable model spec.

    "heuristic" keeps the configured thresholds.  Anything else is a
    path to a JSON model file of type "threshold" carrying trained
    per-kind thresholds; config-file thresholds win over model-file
    ones when both are present.  Other model types (a CNN slot, for
    instance) have no bundled weights and are refused at startup.
    """
    if cfg.model == "heuristic":
        return dict(cfg.thresholds)
    if not os.path.exists(cfg.model):
        raise AdapterError(f"model file not found: {cfg.model}")
    try:
        with open(cfg.model, encoding="utf-8") as f:
            spec = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise AdapterError(f"cannot load model {cfg.model}: {e}")
    if not isinstance(spec, dict) or "type" not in spec:
        raise AdapterError(f"model {cfg.model} must be an object with a \"type\"")
    if spec["type"] != "threshold":
        raise AdapterError(
            f"unsupported model type {spec['type']!r} in {cfg.model}: "
            "no weights are bundled for learned models; use \"threshold\" or \"heuristic\""
        )
    taus = dict(DEFAULT_THRESHOLDS)
    loaded = spec.get("thresholds", {})
    if not isinstance(loaded, dict):
        raise AdapterError(f"model {cfg.model} thresholds must be an object")
    for kind, tau in loaded.items():
        if kind not in KINDS or not isinstance(tau, (int, float)) or isinstance(tau, bool) or tau <= 0:
            raise AdapterError(f"model {cfg.model} has a bad threshold {kind!r}: {tau!r}")
        taus[kind] = float(tau)
    taus.update(cfg.explicit_thresholds)
    return taus


def banding_energy(width: int, height: int, pixels: bytes) -> float:
    """Variance of row means over variance of all pixels (0 when flat)."""
    n = width * height
    mean = sum(pixels) / n
    var = sum((p - mean) ** 2 for p in pixels) / n
    if var == 0.0:
        return 0.0
    row_means = []
    for r in range(height):
        row = pixels[r * width : (r + 1) * width]
        row_means.append(sum(row) / width)
    rmean = sum(row_means) / height
    rvar = sum((m - rmean) ** 2 for m in row_means) / height
    return rvar / var


def classify(kind: str, width: int, height: int, pixels: bytes, taus: dict) -> tuple[str, float]:
    tau = taus[kind]
    energy = banding_energy(width, height, pixels)
    state = "open" if energy >= tau else "closed"
    conf = min(abs(energy - tau) / tau, 1.0)
    return state, conf


class BadRequest(Exception):
    def __init__(self, message: str, rid: int = -1):
        super().__init__(message)
        self.rid = rid


def _salvage_id(obj) -> int:
    rid = obj.get("id") if isinstance(obj, dict) else None
    if isinstance(rid, int) and not isinstance(rid, bool):
        return rid
    return -1


def parse_request(line: str) -> tuple[int, str, int, int, bytes]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise BadRequest(f"not valid JSON: {e}")
    if not isinstance(obj, dict):
        raise BadRequest(f"request must be an object, got {type(obj).__name__}")
    rid = _salvage_id(obj)
    if rid == -1 and obj.get("id") != -1:
        raise BadRequest(f"id must be an integer, got {obj.get('id')!r}")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise BadRequest(f"kind must be one of {KINDS}, got {kind!r}", rid)
    w, h = obj.get("w"), obj.get("h")
    for name, v in (("w", w), ("h", h)):
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise BadRequest(f"{name} must be a positive integer, got {v!r}", rid)
    px_b64 = obj.get("px_b64")
    if not isinstance(px_b64, str):
        raise BadRequest(f"px_b64 must be a string, got {type(px_b64).__name__}", rid)
    try:
        pixels = base64.b64decode(px_b64, validate=True)
    except (binascii.Error, ValueError) as e:
        raise BadRequest(f"px_b64 does not decode: {e}", rid)
    if len(pixels) != w * h:
        raise BadRequest(f"pixel payload is {len(pixels)} bytes, expected {w}x{h}={w * h}", rid)
    return rid, kind, w, h, pixels


def serve(source, sink, taus: dict) -> int:
    """Request/response loop; returns the process exit code."""
    for line in source:
        line = line.strip()
        if not line:
            continue
        try:
            rid, kind, w, h, pixels = parse_request(line)
            state, conf = classify(kind, w, h, pixels, taus)
            response = {"id": rid, "state": state, "conf": conf}
        except BadRequest as e:
            print(f"bad request: {e}", file=sys.stderr)
            response = {"id": e.rid, "state": "closed", "conf": 0.0}
        except Exception as e:  # never crash mid-stream
            print(f"internal error: {e}", file=sys.stderr)
            response = {"id": -1, "state": "closed", "conf": 0.0}
        try:
            sink.write(json.dumps(response, separators=(",", ":")) + "\n")
            sink.flush()
        except BrokenPipeError:
            return 0  # client went away; nothing left to serve
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="roi-adapter",
        description="Classify eye/mouth ROI crops over stdin/stdout JSON lines.",
    )
    parser.add_argument("config", help="adapter config JSON path")
    args = parser.parse_args(argv)
    try:
        cfg = AdapterConfig.load(args.config)
        taus = resolve_model(cfg)
    except AdapterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return serve(sys.stdin, sys.stdout, taus)


if __name__ == "__main__":
    sys.exit(main())
