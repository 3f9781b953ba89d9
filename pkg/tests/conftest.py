import numpy as np
import pytest

from jerseyid.protocol import RosterIndex, TeamSide, Tracklet
from jerseyid.synthgen import SyntheticDataset, gen_game
from jerseyid.utils.config import AugmentConfig, LoggingConfig, ModelConfig, RunConfig, SynthConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow experiment tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tracklet(visibility, label=12, tracklet_id="t", shape=(4, 4, 1), team_side=TeamSide.HOME):
    n = len(visibility)
    frames = np.stack([np.full(shape, k / max(n, 1), dtype=np.float32) for k in range(n)])
    return Tracklet(
        id=tracklet_id,
        frames=frames,
        team_side=team_side,
        label=label,
        visibility=[bool(b) for b in visibility],
    )


@pytest.fixture
def tracklet_factory():
    return make_tracklet


@pytest.fixture
def tiny_synth():
    return SynthConfig(
        num_classes=9,
        frame_height=16,
        frame_width=16,
        min_length=8,
        max_length=16,
        roster_size=6,
        game_length_s=600.0,
    )


@pytest.fixture
def tiny_run(tiny_synth):
    return RunConfig(
        model=ModelConfig(width=16, layers=1, heads=2, head_dim=8, window=4, num_classes=9,
                          embedder_channels=(4, 8, 8)),
        synth=tiny_synth,
        augment=AugmentConfig.zero(),
        logging=LoggingConfig(dont_save_events=True, record_wall_clock=False),
        batch_size=4,
        iterations=20,
        metrics_every=5,
        eval_every=10,
        milestones=[10, 15],
    )


@pytest.fixture
def tiny_dataset(tiny_synth):
    tracklets, shift_db = gen_game(tiny_synth, 24, seed=3, split="train")
    return SyntheticDataset(tracklets=tracklets, shift_db=shift_db, roster=RosterIndex.default(9))


@pytest.fixture
def tiny_eval_dataset(tiny_synth):
    tracklets, shift_db = gen_game(tiny_synth, 8, seed=4, split="test")
    return SyntheticDataset(tracklets=tracklets, shift_db=shift_db, roster=RosterIndex.default(9))
