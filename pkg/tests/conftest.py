import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smearscope.dataset import SynthConfig, generate_corpus  # noqa: E402


def disk_mask(shape, centers, radius):
    yy, xx = np.indices(shape)
    m = np.zeros(shape, dtype=bool)
    for cy, cx in centers:
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six small smears with every stage present; shared by slow-ish tests."""
    cfg = SynthConfig(width=320, height=240, cells_per_image=(14, 16),
                      class_mix=(0.6, 0.1, 0.1, 0.1, 0.1), seed=77)
    return generate_corpus(cfg, 6, tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def trained_tsc(tmp_path_factory):
    """Cascade trained on its own seeded corpus, disjoint from every test image."""
    from smearscope.classification import TrainConfig, save_model, train_tsc
    from smearscope.evaluation import cell_dataset

    cfg = SynthConfig(width=400, height=300, cells_per_image=(24, 28),
                      class_mix=(0.6, 0.1, 0.1, 0.1, 0.1), seed=9000)
    out = tmp_path_factory.mktemp("train")
    manifest = generate_corpus(cfg, 10, out / "corpus")
    x, y = cell_dataset(manifest, [im.image_id for im in manifest.images])
    model = train_tsc(x, y, TrainConfig(seed=0))
    path = out / "model.json"
    save_model(model, path)
    return model, path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
