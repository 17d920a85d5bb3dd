from pathlib import Path

import numpy as np
import pytest

from flipflop import pipeline
from flipflop.config import default_config_path, load_config

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bundled_cfg():
    return load_config()


@pytest.fixture(scope="session")
def bundled_ensemble(bundled_cfg):
    return pipeline.build_ensemble(bundled_cfg)


SMALL_OVERRIDES = {
    "sphere_radius_nm = 100": "sphere_radius_nm = 45",
    "core_margin_nm = 20": "core_margin_nm = 12",
    "n_times = 200": "n_times = 40",
}


def write_small_config(directory: Path, extra: dict | None = None) -> Path:
    """Bundled config scaled down to a ~45 nm sphere for fast end-to-end runs."""
    text = default_config_path().read_text(encoding="utf-8")
    for old, new in {**SMALL_OVERRIDES, **(extra or {})}.items():
        assert old in text, old
        text = text.replace(old, new)
    path = Path(directory) / "small.cfg"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def small_config(tmp_path):
    return write_small_config(tmp_path)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
