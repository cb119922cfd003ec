import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lrpkt.config import RunConfig, resolve  # noqa: E402
from lrpkt.data import Dataset, generate_synthetic, split  # noqa: E402
from lrpkt.model import ModelParams, param_shapes  # noqa: E402
from lrpkt.training import train  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
ROOT = Path(__file__).parent.parent

ACCEPTANCE_LINES = []


def random_params(rng, num_concepts, hidden_size, scale=0.8):
    return ModelParams(**{
        name: rng.normal(0.0, scale, size=shape)
        for name, shape in param_shapes(num_concepts, hidden_size).items()
    })


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@dataclass
class DeskRun:
    config: RunConfig
    params: ModelParams
    train_set: Dataset
    test_set: Dataset
    seconds: float


@pytest.fixture(scope="session")
def desk_run():
    """Synthetic data and a model trained at the desk-scale configuration."""
    cfg = resolve(ROOT / "configs" / "desk_scale.toml", environ={}).validate()
    start = time.perf_counter()
    dataset = generate_synthetic(cfg.bkt_params())
    train_set, test_set = split(dataset, cfg.train_fraction, cfg.seed)
    params, _ = train(train_set, cfg.model_config(dataset.num_concepts), cfg.train_config())
    return DeskRun(cfg, params, train_set, test_set, time.perf_counter() - start)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
