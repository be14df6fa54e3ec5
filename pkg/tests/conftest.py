import json
import time
from pathlib import Path

import pytest

from neurostrike import maze, qnet

CACHE_DIR = Path(__file__).parent / ".cache"


@pytest.fixture(scope="session")
def grid():
    return maze.default_maze()


@pytest.fixture(scope="session")
def trained(grid):
    """Weights from the default training config, trained once per machine
    and cached; the sidecar records the measured training wall time."""
    CACHE_DIR.mkdir(exist_ok=True)
    cfg = qnet.TrainConfig()
    weights_path = CACHE_DIR / f"weights-seed{cfg.seed}.txt"
    meta_path = CACHE_DIR / f"weights-seed{cfg.seed}.json"
    if weights_path.exists() and meta_path.exists():
        net = qnet.load_weights(weights_path)
        meta = json.loads(meta_path.read_text())
    else:
        t0 = time.time()
        net = qnet.train(grid, cfg)
        elapsed = time.time() - t0
        qnet.save_weights(net, weights_path)
        meta = {"train_seconds": elapsed, "seed": cfg.seed}
        meta_path.write_text(json.dumps(meta))
    return net, meta


@pytest.fixture(scope="session")
def trained_net(trained):
    return trained[0]
