import numpy as np
import pytest

from peohoi.config import ModelConfig, TrainConfig
from peohoi.data.synth import SynthConfig, generate_synthetic

TINY_DIMS = {"d_v": 8, "d_w": 6, "d_g": 4}


@pytest.fixture(scope="session")
def tiny_synth():
    cfg = SynthConfig(seed=3, num_videos=4, num_test_videos=2, frames_per_video=6, pairs_per_frame=3, **TINY_DIMS)
    return generate_synthetic(cfg)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(d_model=16, heads=2, window=3)


@pytest.fixture
def tiny_train_cfg(tiny_model_cfg):
    return TrainConfig(seed=5, steps=6, batch_size=4, model=tiny_model_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL line for the acceptance summary and echo it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, name, ok, detail):
        line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
