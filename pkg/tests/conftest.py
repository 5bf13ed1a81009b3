import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_log import ACCEPTANCE_LINES  # noqa: E402
from symmcal.cli import main  # noqa: E402

STUDY_SPEC = {"seed": 5, "n_images": 300, "dim": 3, "theta_true": 35,
              "raters": {"n_raters": 6}, "occlusion_rate": 0.2}


def write_study(root: Path, spec=None, config_extra=None) -> Path:
    """Simulated inputs plus a pipeline config under ``root``; returns the config path."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "spec.json").write_text(json.dumps(spec or STUDY_SPEC))
    rc = main(["simulate", "--spec", str(root / "spec.json"), "--out-keypoints", str(root / "kp.json"),
               "--out-ratings", str(root / "ratings.csv"), "--out-truth", str(root / "truth.csv"),
               "--out-occlusion", str(root / "occ.csv")])
    assert rc == 0
    config = {"seed": 11, "sources": {"pose3d": {"keypoints": "kp.json", "dim": 3}},
              "ratings": "ratings.csv", "occlusion": "occ.csv", **(config_extra or {})}
    (root / "config.json").write_text(json.dumps(config))
    return root / "config.json"


@pytest.fixture(scope="session")
def study(tmp_path_factory):
    return write_study(tmp_path_factory.mktemp("study"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
