import re

import numpy as np
import pytest
from hypothesis import strategies as st

from berrycount.raster import InstanceMap, SemanticMask
from berrycount.synth import SceneSpec, generate_scene

SMALL = SceneSpec(width=320, height=240, n_bunches=3, berries_per_bunch=(6, 10), radius=(5.0, 9.0),
                  ellipticity=(0.7, 1.0), bunch_spread=40.0, n_crescents=2, separation=0.75)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneSpec(**{**SMALL.__dict__, "seed": 11}))


def instance_map(rows):
    return InstanceMap(np.array(rows, dtype=np.int32))


@st.composite
def semantic_masks(draw, max_side=12):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    cells = draw(st.lists(st.integers(0, 2), min_size=w * h, max_size=w * h))
    return SemanticMask(np.array(cells, dtype=np.uint8).reshape(h, w))


@st.composite
def tiled_instance_maps(draw, max_side=14, max_ids=6):
    """Random instance maps built from axis-aligned blocks (later blocks occlude earlier)."""
    h = draw(st.integers(3, max_side))
    w = draw(st.integers(3, max_side))
    ids = np.zeros((h, w), dtype=np.int32)
    n = draw(st.integers(0, max_ids))
    for k in range(1, n + 1):
        x0 = draw(st.integers(0, w - 1))
        y0 = draw(st.integers(0, h - 1))
        x1 = draw(st.integers(x0 + 1, w))
        y1 = draw(st.integers(y0 + 1, h))
        ids[y0:y1, x0:x1] = k
    return ids


# --- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[dict]()
_CRITERION = re.compile(r"test_c(\d+)_")


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = {}


@pytest.fixture
def verdict(request):
    """record(n, ok, detail): store and print one PASS/FAIL line, then assert ok."""
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}"
        lines[n] = line
        print(line)
        assert ok, line

    return record


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None or report.when != "call" or not report.failed:
        return
    lines = _config.stash[ACCEPTANCE_LINES]
    n = int(m.group(1))
    if n not in lines:
        msg = str(report.longrepr).strip().splitlines()[-1] if report.longrepr else "error"
        lines[n] = f"FAIL criterion {n:2d}: {msg}"


_config = None


def pytest_sessionstart(session):
    global _config
    _config = session.config


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[ACCEPTANCE_LINES]
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
