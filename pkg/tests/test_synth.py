"""Synthetic detection-stream generator: determinism, geometry, scripting."""

import base64
import io
import json
import math

import numpy as np
import pytest

from drowsekit.classify import RoiImage, baseline_classify
from drowsekit.errors import BehindCamera, ScenarioError
from drowsekit.pose import (
    CANONICAL_FACE_MODEL,
    euler_to_rotation,
    project,
    rotation_to_rvec,
)
from drowsekit.synth import (
    BBOX_INFLATE,
    Scenario,
    frame_times,
    generate,
    load_scenario,
    pose_at,
    write_lines,
)


def scn_dict(**kw):
    base = {
        "fps": 10,
        "duration_ms": 1000,
        "camera": {"width": 640, "height": 480},
        "segments": [
            {
                "start_ms": 0,
                "end_ms": 1000,
                "yaw": 0,
                "pitch": 0,
                "roll": 0,
                "eye": "open",
                "mouth": "closed",
            }
        ],
    }
    base.update(kw)
    return base


# --- frame timing ------------------------------------------------------------------


def test_frame_times_simple():
    scn = load_scenario(scn_dict(fps=10, duration_ms=250))
    assert frame_times(scn) == [0, 100, 200]


def test_frame_times_rounding_at_30fps():
    scn = load_scenario(
        scn_dict(fps=30, duration_ms=1000,
                 segments=[dict(start_ms=0, end_ms=1000)])
    )
    ts = frame_times(scn)
    assert ts[:5] == [0, 33, 67, 100, 133]
    assert len(ts) == 30
    assert ts[-1] == 967
    assert all(t == math.floor(k * 1000 / 30 + 0.5) for k, t in enumerate(ts))


def test_frame_times_exclusive_end():
    # a frame landing exactly on duration_ms is not emitted
    scn = load_scenario(scn_dict(fps=10, duration_ms=200))
    assert frame_times(scn) == [0, 100]


# --- pose scripting ----------------------------------------------------------------


def test_pose_at_interpolates_linearly():
    scn = load_scenario(
        scn_dict(
            duration_ms=2000,
            segments=[
                dict(start_ms=0, end_ms=1000, yaw=[0, 10], pitch=5, roll=[-4, 4]),
                dict(start_ms=1000, end_ms=2000, yaw=10, pitch=[5, -5], eye="closed"),
            ],
        )
    )
    yaw, pitch, roll, eye, mouth = pose_at(scn, 500)
    assert (yaw, pitch, roll) == (5.0, 5.0, 0.0)
    assert (eye, mouth) == ("open", "closed")
    # boundary instant belongs to the segment that starts there
    yaw, pitch, roll, eye, _ = pose_at(scn, 1000)
    assert (yaw, pitch, eye) == (10.0, 5.0, "closed")
    _, pitch, _, _, _ = pose_at(scn, 1500)
    assert pitch == 0.0


def test_scalar_and_pair_angles_equivalent():
    a = load_scenario(scn_dict(segments=[dict(start_ms=0, end_ms=1000, yaw=7)]))
    b = load_scenario(scn_dict(segments=[dict(start_ms=0, end_ms=1000, yaw=[7, 7])]))
    assert pose_at(a, 321) == pose_at(b, 321)


# --- scenario validation --------------------------------------------------------------


@pytest.mark.parametrize(
    "mutation",
    [
        {"fps": 0},
        {"fps": -5},
        {"duration_ms": 0},
        {"noise_px": -1},
        {"tvec": [0, 0, 0]},
        {"tvec": [0, 0, -100]},
        {"tvec": [0, 0]},
        {"segments": []},
        {"segments": [dict(start_ms=100, end_ms=1000)]},  # gap at origin
        {"segments": [dict(start_ms=0, end_ms=400), dict(start_ms=500, end_ms=1000)]},
        {"segments": [dict(start_ms=0, end_ms=600), dict(start_ms=500, end_ms=1000)]},
        {"segments": [dict(start_ms=0, end_ms=900)]},  # does not cover duration
        {"segments": [dict(start_ms=0, end_ms=0)]},
        {"segments": [dict(start_ms=0, end_ms=1000, eye="ajar")]},
        {"segments": [dict(start_ms=0, end_ms=1000, yaw=[1, 2, 3])]},
        {"dropout": [[300, 300]]},
        {"camera": "auto"},
    ],
)
def test_scenario_rejections(mutation):
    with pytest.raises(ScenarioError):
        load_scenario(scn_dict(**mutation))


def test_scenario_missing_fps_rejected():
    d = scn_dict()
    del d["fps"]
    with pytest.raises(ScenarioError):
        load_scenario(d)


def test_scenario_file_roundtrip(tmp_path):
    p = tmp_path / "scn.json"
    p.write_text(json.dumps(scn_dict(seed=7, noise_px=1.5)))
    scn = load_scenario(p)
    assert scn.seed == 7 and scn.noise_px == 1.5
    assert scn.camera.fx == 640.0 and scn.camera.cx == 320.0
    assert scn.tvec == (0.0, 0.0, 1000.0)


def test_scenario_bad_json_file(tmp_path):
    p = tmp_path / "scn.json"
    p.write_text("{nope")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_scenario_full_intrinsics():
    scn = load_scenario(
        scn_dict(camera=dict(fx=500, fy=510, cx=320, cy=240, width=640, height=480))
    )
    assert (scn.camera.fx, scn.camera.fy) == (500.0, 510.0)


def test_scenario_custom_face_model():
    rows = [list(p) for p in CANONICAL_FACE_MODEL.as_array() * 1.1]
    scn = load_scenario(scn_dict(face_model_mm=rows))
    assert scn.model.nose == (0.0, 0.0, 0.0)
    assert scn.model.chin[1] == pytest.approx(-363.0)


# --- generation --------------------------------------------------------------------


def test_generate_deterministic_bytes():
    d = scn_dict(noise_px=1.2, seed=42, dropout=[[300, 500]])
    det1, tru1 = generate(load_scenario(d))
    det2, tru2 = generate(load_scenario(d))
    assert det1 == det2 and tru1 == tru2


def test_generate_seed_changes_noise():
    det1, _ = generate(load_scenario(scn_dict(noise_px=1.2, seed=1)))
    det2, _ = generate(load_scenario(scn_dict(noise_px=1.2, seed=2)))
    assert det1 != det2


def test_generate_noiseless_matches_projection():
    scn = load_scenario(
        scn_dict(segments=[dict(start_ms=0, end_ms=1000, yaw=20, pitch=-10, roll=5)])
    )
    det, _ = generate(scn)
    face = json.loads(det[0])["faces"][0]
    R = euler_to_rotation(20, -10, 5)
    pts = project(
        CANONICAL_FACE_MODEL, rotation_to_rvec(R), np.array([0.0, 0.0, 1000.0]), scn.camera
    )
    names = ["left_eye", "right_eye", "nose", "mouth_left", "mouth_right"]
    for i, name in enumerate(names):
        assert face["landmarks"][name][0] == float(f"{pts[i, 0]:.4f}")
        assert face["landmarks"][name][1] == float(f"{pts[i, 1]:.4f}")
    # bbox covers all six projections inflated a quarter width per side
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    bw, bh = x1 - x0, y1 - y0
    want = [x0 - BBOX_INFLATE * bw, y0 - BBOX_INFLATE * bh, 1.5 * bw, 1.5 * bh]
    assert face["bbox"] == [float(f"{b:.4f}") for b in want]


def test_generate_noise_draw_order_oracle():
    scn = load_scenario(scn_dict(noise_px=2.0, seed=99, dropout=[[200, 400]]))
    det, _ = generate(scn)
    clean, _ = generate(load_scenario(scn_dict(noise_px=0.0)))
    rng = np.random.default_rng(99)
    for noisy_line, clean_line in zip(det, clean):
        noisy = json.loads(noisy_line)
        if not noisy["faces"]:
            continue  # dropout frames draw nothing
        expected = rng.normal(0.0, 2.0, size=(5, 2))
        lm_n = noisy["faces"][0]["landmarks"]
        lm_c = json.loads(clean_line)["faces"][0]["landmarks"]
        for i, name in enumerate(
            ["left_eye", "right_eye", "nose", "mouth_left", "mouth_right"]
        ):
            for j in range(2):
                got = lm_n[name][j] - lm_c[name][j]
                assert got == pytest.approx(expected[i, j], abs=2e-4)


def test_generate_dropout_and_truth_cardinality():
    scn = load_scenario(scn_dict(dropout=[[300, 500]]))
    det, tru = generate(scn)
    assert len(det) == len(tru) == 10
    for line in det:
        obj = json.loads(line)
        if 300 <= obj["t_ms"] < 500:
            assert obj["faces"] == []
        else:
            assert len(obj["faces"]) == 1
    for line in tru:
        obj = json.loads(line)
        assert set(obj) == {"frame", "t_ms", "yaw", "pitch", "roll", "eye", "mouth"}


def test_generate_truth_values():
    scn = load_scenario(
        scn_dict(
            duration_ms=1000,
            segments=[
                dict(start_ms=0, end_ms=500, yaw=[0, 10], eye="closed", mouth="open"),
                dict(start_ms=500, end_ms=1000, yaw=10),
            ],
        )
    )
    _, tru = generate(scn)
    t3 = json.loads(tru[3])  # t=300
    assert t3["yaw"] == pytest.approx(6.0)
    assert t3["eye"] == "closed" and t3["mouth"] == "open"
    t7 = json.loads(tru[7])
    assert t7["yaw"] == 10.0 and t7["eye"] == "open"


def test_generate_roi_payloads_classify_correctly():
    scn = load_scenario(
        scn_dict(
            duration_ms=400,
            segments=[
                dict(start_ms=0, end_ms=200, eye="open", mouth="closed"),
                dict(start_ms=200, end_ms=400, eye="closed", mouth="open"),
            ],
        )
    )
    det, _ = generate(scn)
    seen = 0
    for line in det:
        obj = json.loads(line)
        face = obj["faces"][0]
        assert "roi" in face
        for kind in ("eye", "mouth"):
            payload = face["roi"][kind]
            img = RoiImage(
                kind=kind,
                width=payload["w"],
                height=payload["h"],
                pixels=base64.b64decode(payload["px_b64"]),
            )
            img.validate()
            want = "open" if (obj["t_ms"] < 200) == (kind == "eye") else "closed"
            verdict = baseline_classify(img)
            assert verdict.state == want
            assert verdict.confidence == 1.0
            seen += 1
    assert seen == 8


def test_generate_face_behind_camera():
    scn = load_scenario(scn_dict(tvec=[0, 0, 50]))
    with pytest.raises(BehindCamera):
        generate(scn)


def test_generate_compact_json():
    det, tru = generate(load_scenario(scn_dict()))
    for line in det + tru:
        assert ": " not in line and ", " not in line
        assert json.dumps(json.loads(line), separators=(",", ":")) == line


def test_write_lines():
    buf = io.BytesIO()
    n = write_lines(["a", "b"], buf)
    assert buf.getvalue() == b"a\nb\n" and n == 4
    assert write_lines([], io.BytesIO()) == 0


def test_write_lines_to_path(tmp_path):
    p = tmp_path / "out.jsonl"
    write_lines(["x"], p)
    assert p.read_bytes() == b"x\n"
