import json
import subprocess
import sys
from pathlib import Path

import pytest

SRC = Path(__file__).resolve().parent.parent / "src"
SERVE = SRC / "roi_adapter" / "serve.py"
FIXTURES = Path(__file__).resolve().parent / "fixtures"

if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))


@pytest.fixture
def heuristic_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"model": "heuristic"}))
    return p


def run_adapter(cfg_path, stdin_text, timeout=30):
    """Run the service as a real subprocess; returns (rc, stdout, stderr)."""
    r = subprocess.run(
        [sys.executable, str(SERVE), str(cfg_path)],
        input=stdin_text,
        capture_output=True,
        text=True,
        timeout=timeout,
    )
    return r.returncode, r.stdout, r.stderr


@pytest.fixture
def adapter():
    return run_adapter
