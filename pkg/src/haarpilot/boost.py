"""Decision-stump AdaBoost stages, the attentional cascade, and model files."""

from __future__ import annotations

import io
import logging
import math
import os
from dataclasses import dataclass, field

import numba
import numpy as np

from .haar import HaarFeature, WindowSpec, enumerate_features, feature_index, feature_operator
from .imaging import GrayImage, random_subwindow, stats_from_sums
from .labels import GestureLabel

log = logging.getLogger(__name__)

FORMAT_MAGIC = "HAARPILOT-CASCADE"
FORMAT_VERSION = 1

# errors closer than this are ties; resolved by threshold, polarity, then feature index
TIE_EPS = 1e-12
ALPHA_CAP = math.log(1e10)
_CHUNK = 8192


class DegenerateDataError(ValueError):
    """Stump training needs both classes present."""


class BoostingStallError(ArithmeticError):
    """Weak learner error reached 0.5; boosting cannot make progress."""


class TrainingCollapseError(RuntimeError):
    def __init__(self, stage: int, remaining: int):
        super().__init__(f"stage {stage}: only {remaining} positives survive, need >= 10")
        self.stage = stage
        self.remaining = remaining


class CascadeParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class CascadeVersionError(CascadeParseError):
    pass


@dataclass(frozen=True)
class Stump:
    feature_index: int
    feature: HaarFeature
    threshold: float
    polarity: int
    alpha: float

    def vote(self, value: float) -> bool:
        return value > self.threshold if self.polarity > 0 else value < self.threshold

    def votes(self, values: np.ndarray) -> np.ndarray:
        return values > self.threshold if self.polarity > 0 else values < self.threshold


@dataclass(frozen=True)
class Stage:
    stumps: tuple[Stump, ...]
    threshold: float


@dataclass(frozen=True)
class Cascade:
    window: WindowSpec
    stages: tuple[Stage, ...]
    label: GestureLabel

    @property
    def n_stumps(self) -> int:
        return sum(len(s.stumps) for s in self.stages)

    @property
    def total_alpha(self) -> float:
        """Sum of all stump vote weights (1 for an empty cascade)."""
        return math.fsum(s.alpha for st in self.stages for s in st.stumps) or 1.0


@dataclass
class TrainConfig:
    max_stages: int = 20
    min_detection: float = 0.995
    max_false_positive: float = 0.5
    max_stumps: int = 200
    seed: int = 42
    window: WindowSpec = field(default_factory=WindowSpec)
    # per-stage cap on mining draws, as a multiple of the negative quota
    neg_draw_factor: int = 100

    def __post_init__(self):
        if not 0.0 < self.max_false_positive < 1.0:
            raise ValueError("max_false_positive must lie in (0, 1)")
        if not 0.0 < self.min_detection <= 1.0:
            raise ValueError("min_detection must lie in (0, 1]")
        if self.max_stumps < 1 or self.max_stages < 1:
            raise ValueError("max_stumps and max_stages must be >= 1")


@dataclass(frozen=True)
class StumpCandidate:
    feature_index: int
    threshold: float
    polarity: int
    error: float


@dataclass
class StageResult:
    stage: Stage
    detection_rate: float
    false_positive_rate: float
    converged: bool
    n_positives: int
    n_negatives: int
    # per-round product of AdaBoost normalizers (training-error bound)
    error_bound: list[float] = field(default_factory=list)


@dataclass
class CascadeTraining:
    cascade: Cascade
    stages: list[StageResult]
    stop_reason: str


# --------------------------------------------------------------------------
# weak learner


def _as_bool_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype == bool:
        return y
    return y > 0


def _sweep(vals_sorted: np.ndarray, wpos: np.ndarray, wneg: np.ndarray):
    """Best ``(error, threshold, polarity)`` per column of presorted values.

    Candidates, in ascending threshold order: one below the minimum, then
    midpoints between adjacent distinct values. Polarity +1 predicts positive
    above the threshold.
    """
    n, m = vals_sorted.shape
    cp = np.cumsum(wpos, axis=0)
    cn = np.cumsum(wneg, axis=0)
    tp, tn = cp[-1], cn[-1]
    err = np.empty((n, 2, m))
    err[0, 0] = tn
    err[0, 1] = tp
    err[1:, 0] = cp[:-1] + (tn - cn[:-1])
    err[1:, 1] = cn[:-1] + (tp - cp[:-1])
    same = vals_sorted[:-1] == vals_sorted[1:]
    err[1:, 0][same] = np.inf
    err[1:, 1][same] = np.inf
    flat = err.reshape(2 * n, m)
    emin = flat.min(axis=0)
    first = np.argmax(flat <= emin + TIE_EPS, axis=0)
    cand = first // 2
    cols = np.arange(m)
    lo = vals_sorted[np.maximum(cand - 1, 0), cols]
    hi = vals_sorted[cand, cols]
    below = vals_sorted[0] - 1.0
    below = np.where(below < vals_sorted[0], below, np.nextafter(vals_sorted[0], -np.inf))
    thr = np.where(cand == 0, below, (lo + hi) / 2.0)
    pol = np.where(first % 2 == 0, 1, -1)
    return flat[first, cols], thr, pol


def train_stump(values, labels, weights) -> tuple[float, int, float]:
    """Single-feature threshold minimizing weighted error, by one sorted sweep.

    Returns ``(threshold, polarity, weighted_error)``; ties go to the smaller
    threshold, then to polarity +1.
    """
    v = np.asarray(values, dtype=np.float64)
    y = _as_bool_labels(labels)
    w = np.asarray(weights, dtype=np.float64)
    if v.shape[0] < 2 or y.all() or not y.any():
        raise DegenerateDataError("need >= 2 samples with both labels present")
    if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to 1")
    order = np.argsort(v, kind="stable")
    ws = w[order]
    ys = y[order]
    err, thr, pol = _sweep(v[order][:, None], np.where(ys, ws, 0.0)[:, None], np.where(ys, 0.0, ws)[:, None])
    return float(thr[0]), int(pol[0]), float(err[0])


class SortedFeatures:
    """Per-feature ascending sample order and tie mask, computed once per stage.

    Stored feature-major: ``order[j]`` lists sample indices by increasing
    value of feature ``j``; ``tied[j, i]`` marks equal neighbours at
    sorted positions ``i`` and ``i + 1``. Order within a tie is irrelevant
    since no threshold can fall inside one.
    """

    def __init__(self, X: np.ndarray):
        self.X = np.asarray(X, dtype=np.float64)
        n, m = self.X.shape
        self.order = np.empty((m, n), dtype=np.int32)
        self.tied = np.empty((m, max(n - 1, 0)), dtype=bool)
        for c in range(0, m, _CHUNK):
            xt = np.ascontiguousarray(self.X[:, c : c + _CHUNK].T)
            o = np.argsort(xt, axis=1)
            v = np.take_along_axis(xt, o, 1)
            self.order[c : c + _CHUNK] = o
            self.tied[c : c + _CHUNK] = v[:, :-1] == v[:, 1:]


def sort_columns(X: np.ndarray) -> SortedFeatures:
    return SortedFeatures(X)


@numba.njit(cache=True)
def _column_errors(order, tied, s, tp, tn, out):  # pragma: no cover - compiled
    """Minimal stump error per feature from prefix sums of signed weights ``s = w+ - w-``.

    A threshold before sorted position k errs ``tn + S(k)`` with polarity +1
    and ``tp - S(k)`` with polarity -1, ``S(k)`` summing ``s`` over the first k samples.
    """
    m, n = order.shape
    for j in range(m):
        acc = 0.0
        lo = 0.0
        hi = 0.0
        for i in range(n - 1):
            acc += s[order[j, i]]
            if not tied[j, i]:
                if acc < lo:
                    lo = acc
                if acc > hi:
                    hi = acc
        out[j] = min(tn + lo, tp - hi)


def select_best_stump(X: np.ndarray, labels, weights, order: SortedFeatures | None = None) -> StumpCandidate:
    """Best stump over every column of the ``(samples, features)`` matrix.

    Minimal weighted error wins; equal errors go to the lowest feature index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _as_bool_labels(labels)
    w = np.asarray(weights, dtype=np.float64)
    if X.shape[0] < 2 or y.all() or not y.any():
        raise DegenerateDataError("need >= 2 samples with both labels present")
    sf = order if order is not None else SortedFeatures(X)
    wpos = np.where(y, w, 0.0)
    wneg = np.where(y, 0.0, w)
    err = np.empty(X.shape[1])
    _column_errors(sf.order, sf.tied, wpos - wneg, float(wpos.sum()), float(wneg.sum()), err)
    # candidates within round-off of the best, resolved by the exact sweep
    near = np.flatnonzero(err <= err.min() + 1e-9)
    best = None
    for j in near:
        o = sf.order[j]
        e, t, p = _sweep(X[o, j][:, None], wpos[o][:, None], wneg[o][:, None])
        if best is None or e[0] < best[0] - TIE_EPS:
            best = (float(e[0]), int(j), float(t[0]), int(p[0]))
    e, j, t, p = best
    return StumpCandidate(j, t, p, e)


def adaboost_update(weights, mistakes, err: float) -> tuple[np.ndarray, float]:
    """Down-weight correctly classified samples by ``beta = err / (1 - err)``.

    Returns the renormalized weights and the vote weight ``alpha = ln(1/beta)``.
    A zero error leaves the weights as they are and returns the capped alpha.
    """
    if err >= 0.5:
        raise BoostingStallError(f"weighted error {err} >= 0.5")
    if err < 0.0:
        raise ValueError(f"negative weighted error {err}")
    w = np.asarray(weights, dtype=np.float64)
    if err == 0.0:
        return w / w.sum(), ALPHA_CAP
    beta = err / (1.0 - err)
    new = np.where(np.asarray(mistakes, dtype=bool), w, w * beta)
    return new / new.sum(), min(math.log(1.0 / beta), ALPHA_CAP)


# --------------------------------------------------------------------------
# sample features


def sample_tables(samples: np.ndarray) -> np.ndarray:
    """Flattened integral and squared-integral tables of ``(n, N, N)`` samples."""
    a = np.asarray(samples, dtype=np.int64)
    n, hh, ww = a.shape
    t = np.zeros((n, hh + 1, ww + 1), dtype=np.int64)
    sq = np.zeros_like(t)
    t[:, 1:, 1:] = a.cumsum(1).cumsum(2)
    sq[:, 1:, 1:] = (a * a).cumsum(1).cumsum(2)
    return t.reshape(n, -1), sq.reshape(n, -1)


def sample_inv_std(tables: np.ndarray, sqtables: np.ndarray, size: int) -> np.ndarray:
    area = size * size
    inv = np.empty(tables.shape[0])
    for i in range(tables.shape[0]):
        _, std = stats_from_sums(float(tables[i, -1]), float(sqtables[i, -1]), area)
        inv[i] = 1.0 / std
    return inv


def feature_matrix(samples: np.ndarray, size: int, columns=None) -> np.ndarray:
    """Normalized responses ``diff * inv_std / area`` of enumerated features on samples."""
    tables, sqtables = sample_tables(samples)
    inv = sample_inv_std(tables, sqtables, size)
    op, areas = feature_operator(size)
    if columns is not None:
        op, areas = op[:, columns], areas[columns]
    X = np.asarray(tables.astype(np.float64) @ op)
    X *= inv[:, None]
    X /= areas[None, :]
    return X


def stage_votes(stage: Stage, X_cols: dict[int, np.ndarray], n: int) -> np.ndarray:
    votes = np.zeros(n)
    for s in stage.stumps:
        votes = np.where(s.votes(X_cols[s.feature_index]), votes + s.alpha, votes)
    return votes


def cascade_accepts(cascade: Cascade, samples: np.ndarray) -> np.ndarray:
    """Accept mask for base-window samples, evaluating only survivors at each stage."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    alive = np.ones(n, dtype=bool)
    if n == 0 or not cascade.stages:
        return alive
    idx = sorted({s.feature_index for st in cascade.stages for s in st.stumps})
    X = feature_matrix(samples, cascade.window.size, idx)
    cols = {j: X[:, k] for k, j in enumerate(idx)}
    for st in cascade.stages:
        live = np.flatnonzero(alive)
        if live.size == 0:
            break
        sub = {j: c[live] for j, c in cols.items()}
        alive[live] = stage_votes(st, sub, live.size) >= st.threshold
    return alive


# --------------------------------------------------------------------------
# stage and cascade training


def _stage_threshold(pos_votes: np.ndarray, d: float) -> float:
    keep = max(1, math.ceil(d * pos_votes.size - 1e-9))
    return float(np.sort(pos_votes)[::-1][keep - 1])


def train_stage(positives, negatives, config: TrainConfig, X: np.ndarray | None = None) -> StageResult:
    """Boost stumps until the stage meets its false-positive target at detection rate ``d``."""
    pos = np.asarray(positives)
    neg = np.asarray(negatives)
    P, Nn = len(pos), len(neg)
    if P < 10 or Nn < 10:
        raise DegenerateDataError(f"need >= 10 positives and negatives, got {P}/{Nn}")
    size = config.window.size
    if X is None:
        X = feature_matrix(np.concatenate([pos, neg]), size)
    y = np.zeros(P + Nn, dtype=bool)
    y[:P] = True
    order = sort_columns(X)
    feats = enumerate_features(size)

    w = np.where(y, 0.5 / P, 0.5 / Nn)
    votes = np.zeros(P + Nn)
    stumps: list[Stump] = []
    bound = 1.0
    bounds = []
    thr, det, fp = 0.0, 1.0, 1.0
    converged = False
    while len(stumps) < config.max_stumps:
        cand = select_best_stump(X, y, w, order)
        if cand.error >= 0.5:
            log.warning("boosting stalled at %d stumps (error %.4f)", len(stumps), cand.error)
            break
        stump = Stump(cand.feature_index, feats[cand.feature_index], cand.threshold, cand.polarity, 0.0)
        h = stump.votes(X[:, cand.feature_index])
        w, alpha = adaboost_update(w, h != y, cand.error)
        stump = Stump(stump.feature_index, stump.feature, stump.threshold, stump.polarity, alpha)
        stumps.append(stump)
        votes = np.where(h, votes + alpha, votes)
        bound *= 2.0 * math.sqrt(cand.error * (1.0 - cand.error))
        bounds.append(bound)

        thr = _stage_threshold(votes[:P], config.min_detection)
        det = float(np.mean(votes[:P] >= thr))
        fp = float(np.mean(votes[P:] >= thr))
        if fp <= config.max_false_positive:
            converged = True
            break
        if cand.error == 0.0:
            break
    if not converged:
        log.warning("stage budget exhausted with false-positive rate %.3f > %.3f", fp, config.max_false_positive)
    return StageResult(Stage(tuple(stumps), thr), det, fp, converged, P, Nn, bounds)


def _mine_negatives(pool, cascade: Cascade, quota: int, rng: np.random.Generator, config: TrainConfig):
    size = config.window.size
    found: list[np.ndarray] = []
    budget = quota * config.neg_draw_factor
    drawn = 0
    batch = max(256, quota)
    while len(found) < quota and drawn < budget:
        n = min(batch, budget - drawn)
        cand = np.stack([random_subwindow(pool, size, rng) for _ in range(n)])
        drawn += n
        ok = cascade_accepts(cascade, cand)
        found.extend(cand[ok][: quota - len(found)])
    return found, drawn


def fit_cascade(positives, negative_pool, config: TrainConfig | None = None, label=GestureLabel.PALM) -> CascadeTraining:
    """Train an attentional cascade with seeded hard-negative mining.

    ``positives`` are base-window samples; ``negative_pool`` holds 2-D arrays
    (or GrayImages) at least as large as the base window.
    """
    config = config or TrainConfig()
    size = config.window.size
    rng = np.random.default_rng(config.seed)
    pos_all = np.asarray(positives, dtype=np.uint8)
    if pos_all.ndim != 3 or pos_all.shape[1:] != (size, size):
        raise ValueError(f"positives must be (n, {size}, {size}) samples")
    pool = [p.data if isinstance(p, GrayImage) else np.asarray(p) for p in negative_pool]
    if not pool:
        raise ValueError("negative pool is empty")

    stages: list[Stage] = []
    results: list[StageResult] = []
    stop = "max_stages"
    for k in range(1, config.max_stages + 1):
        cascade = Cascade(config.window, tuple(stages), label)
        pos = pos_all[cascade_accepts(cascade, pos_all)]
        if len(pos) < 10:
            raise TrainingCollapseError(k, len(pos))
        negs, drawn = _mine_negatives(pool, cascade, len(pos), rng, config)
        if len(negs) < len(pos):
            if k == 1:
                raise DegenerateDataError("negative pool yields no usable windows")
            stop = "negative pool exhausted"
            log.info("stage %d: %d/%d negatives after %d draws; stopping", k, len(negs), len(pos), drawn)
            break
        res = train_stage(pos, np.stack(negs), config)
        log.info(
            "stage %d: %d stumps, d=%.4f f=%.4f", k, len(res.stage.stumps), res.detection_rate, res.false_positive_rate
        )
        stages.append(res.stage)
        results.append(res)
    return CascadeTraining(Cascade(config.window, tuple(stages), label), results, stop)


def train_cascade(positives, negative_pool, config: TrainConfig | None = None, label=GestureLabel.PALM) -> Cascade:
    return fit_cascade(positives, negative_pool, config, label).cascade


# --------------------------------------------------------------------------
# model files


def _real(x: float) -> str:
    return format(x, ".17e")


def dumps_cascade(c: Cascade) -> str:
    lines = [
        f"{FORMAT_MAGIC} {FORMAT_VERSION}",
        f"window {c.window.size}",
        f"label {c.label.value}",
        f"stages {len(c.stages)}",
    ]
    for k, st in enumerate(c.stages, 1):
        lines.append(f"stage {k} threshold {_real(st.threshold)} stumps {len(st.stumps)}")
        for s in st.stumps:
            lines.append(f"stump {s.feature.serialize()} {_real(s.threshold)} {s.polarity} {_real(s.alpha)}")
    return "\n".join(lines) + "\n"


def save_cascade(c: Cascade, destination) -> None:
    text = dumps_cascade(c)
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    else:
        destination.write(text)


def _expect(lines, i: int, key: str, n: int) -> list[str]:
    if i >= len(lines):
        raise CascadeParseError(i + 1, f"unexpected end of file, expected {key!r}")
    parts = lines[i].split()
    if not parts or parts[0] != key or len(parts) != n:
        raise CascadeParseError(i + 1, f"expected {key!r} record with {n} fields, got {lines[i]!r}")
    return parts


def loads_cascade(text: str) -> Cascade:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    head = _expect(lines, 0, FORMAT_MAGIC, 2)
    if head[1] != str(FORMAT_VERSION):
        raise CascadeVersionError(1, f"unsupported model version {head[1]!r}")
    try:
        size = int(_expect(lines, 1, "window", 2)[1])
        window = WindowSpec(size)
        label = GestureLabel.parse(_expect(lines, 2, "label", 2)[1])
        n_stages = int(_expect(lines, 3, "stages", 2)[1])
    except CascadeParseError:
        raise
    except ValueError as exc:
        raise CascadeParseError(min(len(lines), 4), str(exc)) from None
    index = feature_index(size)
    i = 4
    stages = []
    for k in range(1, n_stages + 1):
        parts = _expect(lines, i, "stage", 6)
        if parts[1] != str(k) or parts[2] != "threshold" or parts[4] != "stumps":
            raise CascadeParseError(i + 1, f"malformed stage header {lines[i]!r}")
        try:
            thr, m = float(parts[3]), int(parts[5])
        except ValueError as exc:
            raise CascadeParseError(i + 1, str(exc)) from None
        i += 1
        stumps = []
        for _ in range(m):
            p = _expect(lines, i, "stump", 9)
            try:
                feat = HaarFeature.parse(*p[1:6])
                pol = int(p[7])
                stump = Stump(index[feat], feat, float(p[6]), pol, float(p[8]))
            except (KeyError, ValueError) as exc:
                raise CascadeParseError(i + 1, f"bad stump record: {exc}") from None
            if pol not in (1, -1):
                raise CascadeParseError(i + 1, f"polarity must be +-1, got {pol}")
            stumps.append(stump)
            i += 1
        stages.append(Stage(tuple(stumps), thr))
    if i != len(lines):
        raise CascadeParseError(i + 1, "trailing content after last stage")
    return Cascade(window, tuple(stages), label)


def load_cascade(source) -> Cascade:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="ascii", newline="") as fh:
            text = fh.read()
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")
    else:
        raise TypeError(f"cannot read a cascade from {type(source).__name__}")
    return loads_cascade(text)
