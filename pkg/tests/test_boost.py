import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haarpilot.boost import (
    ALPHA_CAP,
    BoostingStallError,
    Cascade,
    CascadeParseError,
    CascadeVersionError,
    DegenerateDataError,
    Stage,
    Stump,
    TrainConfig,
    TrainingCollapseError,
    adaboost_update,
    cascade_accepts,
    dumps_cascade,
    feature_matrix,
    fit_cascade,
    load_cascade,
    loads_cascade,
    save_cascade,
    select_best_stump,
    train_stage,
    train_stump,
)
from haarpilot.haar import HaarFeature, HaarKind, WindowSpec, feature_index
from haarpilot.labels import GestureLabel
from haarpilot import synthetic

from oracles import feature_oracle, random_stump_instance, stump_oracle


def split_windows(n, rng, bright_left=True):
    """Noisy 20x20 windows, one half at 200 and the other at 50."""
    a = rng.normal(0, 10, (n, 20, 20))
    hi, lo = (200, 50) if bright_left else (50, 200)
    a[:, :, :10] += hi
    a[:, :, 10:] += lo
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def test_train_stump_separable():
    thr, pol, err = train_stump([1, 2, 8, 9], [-1, -1, 1, 1], [0.25] * 4)
    assert (thr, pol, err) == (5.0, 1, 0.0)


def test_train_stump_reversed_polarity():
    thr, pol, err = train_stump([1, 2, 8, 9], [1, 1, -1, -1], [0.25] * 4)
    assert (thr, pol, err) == (5.0, -1, 0.0)


def test_train_stump_constant_feature():
    thr, pol, err = train_stump([4, 4, 4, 4], [1, -1, 1, -1], [0.25] * 4)
    assert pol == 1 and err == pytest.approx(0.5)
    assert thr < 4


def test_train_stump_single_class():
    with pytest.raises(DegenerateDataError):
        train_stump([1, 2, 3], [1, 1, 1], [1 / 3] * 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_train_stump_matches_oracle(seed):
    X, y, w = random_stump_instance(np.random.default_rng(seed), 60, 1)
    thr, pol, err = train_stump(X[:, 0], y, w)
    o_thr, o_pol, o_err = stump_oracle(X[:, 0], y, w)
    assert err == pytest.approx(o_err, abs=1e-12)
    assert (thr, pol) == (o_thr, o_pol)


def test_planted_separator_column():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 20))
    y = np.arange(40) < 20
    X[:, 7] = np.where(y, 5.0, -5.0) + rng.normal(0, 0.1, 40)
    c = select_best_stump(X, y, np.full(40, 1 / 40))
    assert c.feature_index == 7 and c.error == 0.0


def test_equal_error_tie_goes_to_lower_index():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 16)) * 0.01
    y = np.arange(30) < 15
    sep = np.where(y, 1.0, -1.0)
    X[:, 3] = sep
    X[:, 12] = sep
    assert select_best_stump(X, y, np.full(30, 1 / 30)).feature_index == 3


def test_select_best_stump_small_instances_match_oracle():
    rng = np.random.default_rng(2)
    for _ in range(50):
        X, y, w = random_stump_instance(rng, 100, 300)
        c = select_best_stump(X, y, w)
        err, j = feature_oracle(X, y, w)
        assert c.feature_index == j
        assert c.error == pytest.approx(err, abs=1e-12)


def test_adaboost_update_arithmetic():
    w = np.full(10, 0.1)
    mistakes = np.zeros(10, dtype=bool)
    mistakes[:2] = True
    new, alpha = adaboost_update(w, mistakes, 0.2)
    assert alpha == pytest.approx(math.log(4), abs=1e-12)
    assert new.sum() == pytest.approx(1.0, abs=1e-12)
    # correctly classified samples shrink by beta = 0.25 before renormalization
    assert new[5] / new[0] == pytest.approx(0.25)


def test_adaboost_limits():
    w = np.full(4, 0.25)
    _, alpha = adaboost_update(w, [True, False, False, False], 0.5 - 1e-12)
    assert 0 < alpha < 1e-10
    same, alpha = adaboost_update(w, [False] * 4, 0.0)
    assert alpha == ALPHA_CAP and np.array_equal(same, w)
    with pytest.raises(BoostingStallError):
        adaboost_update(w, [True] * 4, 0.5)


def test_planted_stage_has_one_stump():
    rng = np.random.default_rng(3)
    res = train_stage(split_windows(60, rng), split_windows(60, rng, False), TrainConfig())
    assert len(res.stage.stumps) == 1
    assert res.converged and res.false_positive_rate == 0.0 and res.detection_rate == 1.0


def test_edge_stage_meets_target_quickly():
    rng = np.random.default_rng(4)
    pos = np.stack([synthetic.render_edge(20, rng) for _ in range(200)])
    neg = synthetic.noise_samples(200, 20, rng)
    res = train_stage(pos, neg, TrainConfig())
    assert res.false_positive_rate <= 0.5 and len(res.stage.stumps) <= 5
    assert res.detection_rate >= 0.995
    assert all(b2 <= b1 for b1, b2 in zip(res.error_bound, res.error_bound[1:]))


def test_planted_cascade_is_one_stage_one_stump():
    rng = np.random.default_rng(5)
    pool = list(split_windows(200, rng, False))
    tr = fit_cascade(split_windows(100, rng), pool, TrainConfig(seed=1))
    assert len(tr.cascade.stages) == 1 and tr.cascade.n_stumps == 1
    assert tr.stop_reason == "negative pool exhausted"


def test_training_collapse_names_stage():
    rng = np.random.default_rng(6)
    with pytest.raises(TrainingCollapseError) as exc:
        fit_cascade(split_windows(5, rng), list(split_windows(20, rng, False)))
    assert exc.value.stage == 1 and "stage 1" in str(exc.value)


def test_fit_cascade_is_seed_deterministic():
    rng = np.random.default_rng(7)
    pos = np.stack([synthetic.render_edge(20, rng) for _ in range(60)])
    pool = [synthetic.noise_image(40, 40, rng) for _ in range(20)]
    cfg = TrainConfig(seed=9, max_stages=3)
    assert dumps_cascade(fit_cascade(pos, pool, cfg).cascade) == dumps_cascade(fit_cascade(pos, pool, cfg).cascade)


def two_stage_cascade():
    idx = feature_index(20)
    f1 = HaarFeature(HaarKind.TwoH, 0, 0, 10, 20)
    f2 = HaarFeature(HaarKind.ThreeV, 2, 1, 5, 6)
    s1 = Stage((Stump(idx[f1], f1, 0.125, 1, 1.5),), 1.5)
    s2 = Stage((Stump(idx[f1], f1, 0.1, 1, 0.7), Stump(idx[f2], f2, -0.3, -1, 1.0 / 3.0)), 0.7)
    return Cascade(WindowSpec(20), (s1, s2), GestureLabel.GS)


def test_model_round_trip(tmp_path):
    c = two_stage_cascade()
    save_cascade(c, tmp_path / "m.cascade")
    assert load_cascade(tmp_path / "m.cascade") == c
    assert loads_cascade(dumps_cascade(c)) == c


def test_truncated_and_wrong_version_files():
    text = dumps_cascade(two_stage_cascade())
    with pytest.raises(CascadeParseError) as exc:
        loads_cascade("\n".join(text.splitlines()[:-1]) + "\n")
    assert exc.value.line == 9
    with pytest.raises(CascadeVersionError):
        loads_cascade(text.replace("HAARPILOT-CASCADE 1", "HAARPILOT-CASCADE 9"))
    with pytest.raises(CascadeParseError):
        loads_cascade(text.replace(" -1 ", " 0 "))


HAND_MODEL = """HAARPILOT-CASCADE 1
window 20
label Palm
stages 1
stage 1 threshold 1.0 stumps 1
stump TwoH 0 0 10 20 0.5 1 1.0
"""


def test_hand_written_model_decides_as_computed():
    c = load_cascade(io.StringIO(HAND_MODEL))
    assert c.label is GestureLabel.PALM and c.n_stumps == 1
    # bright-left window: diff = 200*200 - 50*200, std = 75, area 400 -> 1.0 > 0.5
    win = np.zeros((1, 20, 20), dtype=np.uint8)
    win[0, :, :10], win[0, :, 10:] = 200, 50
    X = feature_matrix(win, 20, [c.stages[0].stumps[0].feature_index])
    assert X[0, 0] == pytest.approx(1.0)
    assert cascade_accepts(c, win).tolist() == [True]
    assert cascade_accepts(c, win[:, :, ::-1]).tolist() == [False]
