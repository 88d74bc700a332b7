"""Upright Haar feature bank: enumeration, geometry and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import sparse

from .imaging import BoundsError, IntegralImage


class HaarKind(Enum):
    # value: (cells across, cells down, weight grid row-major)
    TwoH = (2, 1, (1, -1))
    TwoV = (1, 2, (1, -1))
    ThreeH = (3, 1, (1, -2, 1))
    ThreeV = (1, 3, (1, -2, 1))
    FourDiag = (2, 2, (1, -1, -1, 1))

    @property
    def nx(self) -> int:
        return self.value[0]

    @property
    def ny(self) -> int:
        return self.value[1]

    def cells(self):
        """Yield ``(col, row, weight)`` for each cell of the layout."""
        nx, _, weights = self.value
        for i, wt in enumerate(weights):
            yield i % nx, i // nx, wt


@dataclass(frozen=True)
class WindowSpec:
    size: int = 20

    def __post_init__(self):
        if self.size < 4:
            raise ValueError(f"base window must be >= 4 px, got {self.size}")


@dataclass(frozen=True)
class HaarFeature:
    kind: HaarKind
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"cell extents must be >= 1: {self}")

    @property
    def span(self) -> tuple[int, int]:
        return self.kind.nx * self.w, self.kind.ny * self.h

    def fits(self, size: int) -> bool:
        sw, sh = self.span
        return self.x + sw <= size and self.y + sh <= size

    def serialize(self) -> str:
        return f"{self.kind.name} {self.x} {self.y} {self.w} {self.h}"

    @classmethod
    def parse(cls, kind: str, x: str, y: str, w: str, h: str) -> HaarFeature:
        return cls(HaarKind[kind], int(x), int(y), int(w), int(h))

    def sort_key(self):
        return (list(HaarKind).index(self.kind), self.y, self.x, self.h, self.w)


def enumerate_features(spec: WindowSpec | int) -> list[HaarFeature]:
    """Every legal feature in the base window, kind-major then ``y, x, h, w`` ascending."""
    size = spec.size if isinstance(spec, WindowSpec) else int(spec)
    return list(_enumerate(size))


@lru_cache(maxsize=8)
def _enumerate(size: int) -> tuple[HaarFeature, ...]:
    out = []
    for kind in HaarKind:
        for y in range(size):
            for x in range(size):
                for h in range(1, (size - y) // kind.ny + 1):
                    for w in range(1, (size - x) // kind.nx + 1):
                        out.append(HaarFeature(kind, x, y, w, h))
    return tuple(out)


@lru_cache(maxsize=8)
def feature_index(size: int) -> dict[HaarFeature, int]:
    return {f: i for i, f in enumerate(_enumerate(size))}


def serialize_features(features) -> bytes:
    return "".join(f.serialize() + "\n" for f in features).encode("ascii")


def scaled_cells(f: HaarFeature, scale: float):
    """Cell rectangles ``(dx, dy, cw, ch, weight)`` of ``f`` at ``scale`` plus their total area.

    Offsets and per-cell extents are floored independently so every cell has
    the same area; the weighted sum over a constant patch is then exactly 0 at
    any scale.
    """
    if scale == 1.0:
        ox, oy, cw, ch = f.x, f.y, f.w, f.h
    else:
        ox, oy = math.floor(f.x * scale), math.floor(f.y * scale)
        cw, ch = max(1, math.floor(f.w * scale)), max(1, math.floor(f.h * scale))
    cells = [(ox + c * cw, oy + r * ch, cw, ch, wt) for c, r, wt in f.kind.cells()]
    return cells, cw * ch * f.kind.nx * f.kind.ny


def feature_diff(ii: IntegralImage, f: HaarFeature, origin: tuple[int, int], scale: float = 1.0) -> int:
    """Weighted white-minus-black pixel sum, exact integer."""
    cells, _ = scaled_cells(f, scale)
    return _cells_diff(ii, cells, origin)


def _cells_diff(ii: IntegralImage, cells, origin) -> int:
    x0, y0 = origin
    t = ii.sum
    last = cells[-1]
    if (
        x0 < 0
        or y0 < 0
        or x0 + last[0] + last[2] > ii.width
        or y0 + last[1] + last[3] > ii.height
    ):
        raise BoundsError(f"feature footprint at {origin} exceeds {ii.width}x{ii.height} image")
    total = 0
    for dx, dy, cw, ch, wt in cells:
        x1, y1 = x0 + dx, y0 + dy
        x2, y2 = x1 + cw, y1 + ch
        total += wt * (int(t[y2, x2]) - int(t[y1, x2]) - int(t[y2, x1]) + int(t[y1, x1]))
    return total


def eval_feature(
    ii: IntegralImage,
    f: HaarFeature,
    origin: tuple[int, int] = (0, 0),
    scale: float = 1.0,
    inv_stddev: float = 1.0,
) -> float:
    """Variance- and area-normalized feature response.

    ``diff * inv_stddev / area``; the operation order is fixed so batch
    evaluation reproduces it bit for bit.
    """
    if scale < 1.0:
        raise ValueError(f"scale must be >= 1, got {scale}")
    cells, area = scaled_cells(f, scale)
    return float(_cells_diff(ii, cells, origin)) * inv_stddev / area


def feature_diff_batch(table: np.ndarray, f: HaarFeature, xs, ys, scale: float = 1.0) -> np.ndarray:
    """``feature_diff`` over many origins at once (caller guarantees bounds)."""
    cells, _ = scaled_cells(f, scale)
    total = None
    for dx, dy, cw, ch, wt in cells:
        x1, y1 = xs + dx, ys + dy
        x2, y2 = x1 + cw, y1 + ch
        part = wt * (table[y2, x2] - table[y1, x2] - table[y2, x1] + table[y1, x1])
        total = part if total is None else total + part
    return total


@lru_cache(maxsize=4)
def feature_operator(size: int):
    """Sparse ``((size+1)**2, n_features)`` map from flattened integral tables to feature diffs.

    Returns ``(operator, areas)``; ``tables @ operator`` yields the integer
    diffs of every enumerated feature for every sample (exact in float64).
    """
    feats = _enumerate(size)
    stride = size + 1
    rows, cols, vals = [], [], []
    areas = np.empty(len(feats), dtype=np.float64)
    for j, f in enumerate(feats):
        cells, area = scaled_cells(f, 1.0)
        areas[j] = area
        coeff: dict[int, int] = {}
        for dx, dy, cw, ch, wt in cells:
            x2, y2 = dx + cw, dy + ch
            for (yy, xx), s in (((y2, x2), 1), ((dy, x2), -1), ((y2, dx), -1), ((dy, dx), 1)):
                k = yy * stride + xx
                coeff[k] = coeff.get(k, 0) + s * wt
        for k, v in coeff.items():
            if v:
                rows.append(k)
                cols.append(j)
                vals.append(v)
    op = sparse.csc_matrix(
        (np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(stride * stride, len(feats))
    )
    return op, areas
