import types

import numpy as np
import pytest

from sensearea import geometry as geo
from sensearea.scene import SceneConfig, flat_surface

# Desk-scale scene config shared by the slower tests: a quarter of the canonical
# resolution with the focal length scaled to match, so the field of view is the same.
SMALL = SceneConfig(width=160, height=120, focal=100.0)


@pytest.fixture
def small_config():
    return SMALL


@pytest.fixture
def canonical():
    return geo.canonical_rig()


def flat_scene(depth=0.3, rig=None, probe=None):
    """Minimal duck-typed scene: a flat phantom filling the view."""
    rig = rig or geo.make_rig(160, 120, 100.0)
    return types.SimpleNamespace(rig=rig, surface=flat_surface(depth, extent=(2.0, 2.0)), probe=probe)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12 poses x 4 stages at 160x120 with depth, split 8/2/2 by pose."""
    from dataclasses import replace

    from sensearea.dataset import generate_dataset

    root = tmp_path_factory.mktemp("small_dataset")
    config = replace(SMALL, with_depth=True, invalid_depth_fraction=0.1)
    manifest = generate_dataset(root, n_poses=12, n_stages=4, seed=0, config=config)
    return root, manifest


@pytest.fixture(scope="session")
def small_splits(small_dataset):
    from sensearea.dataset import read_split

    root, manifest = small_dataset
    return {tag: list(read_split(manifest, tag, root)) for tag in ("train", "val", "test")}


# One pass/fail line per acceptance criterion, repeated in the terminal summary
# so it survives output capture.
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
