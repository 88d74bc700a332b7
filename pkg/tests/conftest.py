import time
from dataclasses import dataclass

import numpy as np
import pytest

from haarpilot import synthetic
from haarpilot.boost import Cascade, TrainConfig, cascade_accepts, fit_cascade, save_cascade
from haarpilot.labels import GESTURES, GestureLabel


@dataclass
class EdgeTask:
    cascade: Cascade
    seconds: float
    stages: list
    detection_rate: float
    false_positive_rate: float


@pytest.fixture(scope="session")
def edge_task():
    """Cascade trained on 500 bright-left/dark-right positives and 900 noise windows, seed 42."""
    rng = np.random.default_rng(42)
    pos = np.stack([synthetic.render_edge(20, rng) for _ in range(500)])
    neg = synthetic.noise_samples(900, 20, rng)
    held_pos = np.stack([synthetic.render_edge(20, rng) for _ in range(500)])
    held_neg = synthetic.noise_samples(900, 20, rng)
    t = time.perf_counter()
    tr = fit_cascade(pos, list(neg), TrainConfig(seed=42), GestureLabel.PALM)
    seconds = time.perf_counter() - t
    return EdgeTask(
        tr.cascade,
        seconds,
        tr.stages,
        float(cascade_accepts(tr.cascade, held_pos).mean()),
        float(cascade_accepts(tr.cascade, held_neg).mean()),
    )


@pytest.fixture(scope="session")
def gesture_cascades():
    """One cascade per gesture, trained on the synthetic silhouette sets (a few minutes)."""
    pos, pools = synthetic.gesture_training_sets(np.random.default_rng(42), 300)
    cfg = TrainConfig(seed=42, neg_draw_factor=300)
    return [fit_cascade(pos[g], pools[g], cfg, g).cascade for g in GESTURES]


@pytest.fixture(scope="session")
def models_dir(gesture_cascades, tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    for c in gesture_cascades:
        save_cascade(c, d / f"{c.label.value}.cascade")
    return d
