"""Multi-scale sliding-window scanning, rectangle grouping and gesture arbitration."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .boost import Cascade
from .haar import eval_feature, feature_diff_batch, scaled_cells
from .imaging import (
    BoundsError,
    GrayImage,
    ImageError,
    IntegralImage,
    Rect,
    area_downscale,
    integral,
    window_stats,
    window_stats_batch,
)
from .labels import GestureLabel

__all__ = [
    "Detection",
    "EvalCounter",
    "GestureLabel",
    "ScanConfig",
    "classify_gesture",
    "detect_all",
    "estimate_distance",
    "evaluate_window",
    "group_rects",
    "scan",
    "scan_scales",
    "write_detections_csv",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    rect: Rect
    score: float
    scale: float


@dataclass
class ScanConfig:
    scale_factor: float = 1.25
    step_fraction: float = 0.05
    min_size: int | None = None  # defaults to the cascade's base window
    max_size: int | None = None  # defaults to the frame's smaller side
    min_neighbors: int = 3
    group_eps: float = 0.2
    # downscale frames wider than this before scanning; None scans at full resolution
    working_width: int | None = None

    def __post_init__(self):
        if self.scale_factor <= 1.0:
            raise ConfigError(f"scale_factor must be > 1, got {self.scale_factor}")
        if self.step_fraction <= 0.0:
            raise ConfigError("step_fraction must be positive")


@dataclass
class EvalCounter:
    """Counts stage and stump evaluations, for checking early rejection."""

    stages: int = 0
    stumps: int = 0
    per_stage: dict[int, int] = field(default_factory=dict)

    def hit(self, stage: int, n_stumps: int, n_windows: int = 1):
        self.stages += n_windows
        self.stumps += n_stumps * n_windows
        self.per_stage[stage] = self.per_stage.get(stage, 0) + n_windows


def _window_size(c: Cascade, scale: float) -> int:
    return math.floor(c.window.size * scale)


def evaluate_window(
    c: Cascade,
    ii: IntegralImage,
    origin: tuple[int, int],
    scale: float = 1.0,
    counter: EvalCounter | None = None,
) -> tuple[bool, float]:
    """Run the cascade on one window; stops at the first failing stage.

    The score is the summed margin (votes minus threshold) of passed stages
    divided by the cascade's total vote weight, so scores from different
    cascades are comparable.
    """
    win = _window_size(c, scale)
    x0, y0 = origin
    if x0 < 0 or y0 < 0 or x0 + win > ii.width or y0 + win > ii.height:
        raise BoundsError(f"{win}px window at {origin} exceeds {ii.width}x{ii.height} frame")
    _, std = window_stats(ii, Rect(x0, y0, win, win))
    inv = 1.0 / std
    score = 0.0
    for k, stage in enumerate(c.stages):
        if counter is not None:
            counter.hit(k, len(stage.stumps))
        votes = 0.0
        for s in stage.stumps:
            if s.vote(eval_feature(ii, s.feature, origin, scale, inv)):
                votes += s.alpha
        if votes < stage.threshold:
            return False, score / c.total_alpha
        score += votes - stage.threshold
    return True, score / c.total_alpha


def scan_scales(c: Cascade, width: int, height: int, cfg: ScanConfig) -> list[float]:
    base = c.window.size
    lo = cfg.min_size or base
    hi = min(cfg.max_size or min(width, height), min(width, height))
    if lo < base:
        raise ConfigError(f"min_size {lo} is below the {base}px base window")
    s0 = lo / base
    scales = []
    k = 0
    while True:
        s = s0 * cfg.scale_factor**k
        if math.floor(base * s) > hi:
            break
        scales.append(s)
        k += 1
    return scales


def _evaluate_batch(c: Cascade, ii: IntegralImage, xs: np.ndarray, ys: np.ndarray, scale: float, counter=None):
    """Vectorized ``evaluate_window``; identical arithmetic, survivors only per stage."""
    win = _window_size(c, scale)
    _, std = window_stats_batch(ii, xs, ys, win)
    inv = 1.0 / std
    alive = np.ones(xs.size, dtype=bool)
    score = np.zeros(xs.size)
    table = ii.sum
    for k, stage in enumerate(c.stages):
        live = np.flatnonzero(alive)
        if live.size == 0:
            break
        if counter is not None:
            counter.hit(k, len(stage.stumps), live.size)
        lx, ly, linv = xs[live], ys[live], inv[live]
        votes = np.zeros(live.size)
        for s in stage.stumps:
            _, area = scaled_cells(s.feature, scale)
            val = feature_diff_batch(table, s.feature, lx, ly, scale).astype(np.float64) * linv / area
            votes = np.where(s.votes(val), votes + s.alpha, votes)
        passed = votes >= stage.threshold
        score[live] = np.where(passed, score[live] + (votes - stage.threshold), score[live])
        alive[live] = passed
    return alive, score / c.total_alpha


def _prepare(frame: GrayImage, cfg: ScanConfig):
    if cfg.working_width and frame.width > cfg.working_width:
        f = frame.width / cfg.working_width
        out_h = max(1, round(frame.height / f))
        small = GrayImage.from_array(area_downscale(frame.data, cfg.working_width, out_h))
        return small, frame.width / small.width, frame.height / small.height
    return frame, 1.0, 1.0


def scan(
    frame: GrayImage,
    c: Cascade,
    cfg: ScanConfig | None = None,
    ii: IntegralImage | None = None,
    counter: EvalCounter | None = None,
) -> list[Detection]:
    """All accepted windows, ungrouped, ordered by scale then row-major position."""
    cfg = cfg or ScanConfig()
    work, fx, fy = _prepare(frame, cfg)
    base = c.window.size
    if work.width < base or work.height < base:
        raise ImageError(f"{work.width}x{work.height} frame is smaller than the {base}px window")
    if ii is None or (fx, fy) != (1.0, 1.0):
        ii = integral(work)
    out = []
    for scale in scan_scales(c, work.width, work.height, cfg):
        win = _window_size(c, scale)
        step = max(1, round(cfg.step_fraction * win))
        gy, gx = np.meshgrid(
            np.arange(0, work.height - win + 1, step), np.arange(0, work.width - win + 1, step), indexing="ij"
        )
        xs, ys = gx.ravel(), gy.ravel()
        ok, score = _evaluate_batch(c, ii, xs, ys, scale, counter)
        for i in np.flatnonzero(ok):
            r = Rect(int(xs[i]), int(ys[i]), win, win)
            if (fx, fy) != (1.0, 1.0):
                r = _map_back(r, fx, fy, frame)
            out.append(Detection(r, float(score[i]), scale * fx))
    return out


def _map_back(r: Rect, fx: float, fy: float, frame: GrayImage) -> Rect:
    x, y = min(frame.width - 1, round(r.x * fx)), min(frame.height - 1, round(r.y * fy))
    w = max(1, min(frame.width - x, round(r.w * fx)))
    h = max(1, min(frame.height - y, round(r.h * fy)))
    return Rect(x, y, w, h)


def _similar(a: Rect, b: Rect, eps: float) -> bool:
    delta = eps * (min(a.w, b.w) + min(a.h, b.h)) * 0.5
    return (
        abs(a.x - b.x) <= delta
        and abs(a.y - b.y) <= delta
        and abs(a.x + a.w - b.x - b.w) <= delta
        and abs(a.y + a.h - b.y - b.h) <= delta
    )


def _classes(dets: list[Detection], eps: float) -> list[list[int]]:
    """Connected components of the ``_similar`` relation, ordered by first member."""
    n = len(dets)
    if n == 0:
        return []
    r = np.array([(d.rect.x, d.rect.y, d.rect.w, d.rect.h) for d in dets], dtype=np.float64)
    x0, y0, w, h = r.T
    x1, y1 = x0 + w, y0 + h
    rows, cols = [], []
    for s in range(0, n, 1024):
        sl = slice(s, min(n, s + 1024))
        delta = eps * (np.minimum(w[sl, None], w) + np.minimum(h[sl, None], h)) * 0.5
        near = (
            (np.abs(x0[sl, None] - x0) <= delta)
            & (np.abs(y0[sl, None] - y0) <= delta)
            & (np.abs(x1[sl, None] - x1) <= delta)
            & (np.abs(y1[sl, None] - y1) <= delta)
        )
        i, j = np.nonzero(near)
        rows.append(i + s)
        cols.append(j)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(comp.tolist()):
        groups.setdefault(c, []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def group_rects(
    dets: list[Detection], min_neighbors: int = 3, eps: float = 0.2, bounds: tuple[int, int] | None = None
) -> list[Detection]:
    """Merge similar rectangles; classes smaller than ``min_neighbors`` are dropped.

    Each surviving class yields its mean rectangle and its best score.
    ``bounds`` (frame width, height) clips the merged rectangles.
    """
    out = []
    for members in _classes(dets, eps):
        if len(members) < min_neighbors:
            continue
        rs = [dets[i].rect for i in members]
        w = round(sum(r.w for r in rs) / len(rs))
        h = round(sum(r.h for r in rs) / len(rs))
        cx = sum(r.x + r.w / 2 for r in rs) / len(rs)
        cy = sum(r.y + r.h / 2 for r in rs) / len(rs)
        x, y = max(0, round(cx - w / 2)), max(0, round(cy - h / 2))
        if bounds is not None:
            x, y = min(x, bounds[0] - w), min(y, bounds[1] - h)
        rect = Rect(x, y, w, h)
        score = max(dets[i].score for i in members)
        scale = sum(dets[i].scale for i in members) / len(members)
        out.append(Detection(rect, score, scale))
    return out


def _check_cascades(cascades) -> list[Cascade]:
    cs = list(cascades.values()) if isinstance(cascades, dict) else list(cascades)
    labels = [c.label for c in cs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate cascade labels: {[str(l) for l in labels]}")
    if GestureLabel.NONE in labels:
        raise ConfigError("a cascade cannot detect the None label")
    return sorted(cs, key=lambda c: c.label.rank)


def detect_all(frame: GrayImage, cascades, cfg: ScanConfig | None = None) -> dict[GestureLabel, list[Detection]]:
    """Grouped detections per cascade label, in label order."""
    cfg = cfg or ScanConfig()
    cs = _check_cascades(cascades)
    ii = integral(frame)
    return {
        c.label: group_rects(scan(frame, c, cfg, ii), cfg.min_neighbors, cfg.group_eps, (frame.width, frame.height))
        for c in cs
    }


def arbitrate(grouped: dict[GestureLabel, list[Detection]]) -> tuple[GestureLabel, Detection | None]:
    best_label, best = GestureLabel.NONE, None
    for label in sorted(grouped, key=lambda l: l.rank):
        for d in grouped[label]:
            if best is None or d.score > best.score:
                best_label, best = label, d
    return best_label, best


def classify_gesture(
    frame: GrayImage, cascades, cfg: ScanConfig | None = None
) -> tuple[GestureLabel, Detection | None]:
    """Label of the cascade with the highest normalized-margin grouped detection, or None.

    Equal scores resolve in the fixed order Fist, Palm, GS, VS, LF.
    """
    return arbitrate(detect_all(frame, cascades, cfg))


@dataclass(frozen=True)
class DistanceCalibration:
    reference_distance_ft: float = 3.0
    reference_width_px: float = 80.0


def estimate_distance(bbox_width: float, calib: DistanceCalibration | None = None) -> float:
    """Pinhole range estimate: apparent width is inversely proportional to distance."""
    calib = calib or DistanceCalibration()
    if not bbox_width >= 1:
        raise ValueError(f"bounding box width must be >= 1 px, got {bbox_width}")
    if not (calib.reference_distance_ft > 0 and calib.reference_width_px > 0):
        raise ValueError("calibration distance and width must be positive")
    return calib.reference_distance_ft * calib.reference_width_px / bbox_width


DETECTION_CSV_HEADER = ("frame", "label", "x", "y", "w", "h", "score", "scale")


def write_detections_csv(rows, fh) -> None:
    """``rows``: iterable of ``(frame_name, GestureLabel, Detection)``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DETECTION_CSV_HEADER)
    for name, label, d in rows:
        r = d.rect
        w.writerow([name, label.value, r.x, r.y, r.w, r.h, repr(d.score), repr(d.scale)])


def read_detections_csv(fh) -> list[tuple[str, GestureLabel, Detection]]:
    out = []
    for row in csv.DictReader(fh):
        rect = Rect(int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"]))
        out.append((row["frame"], GestureLabel.parse(row["label"]), Detection(rect, float(row["score"]), float(row["scale"]))))
    return out

