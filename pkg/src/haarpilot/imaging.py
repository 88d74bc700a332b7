"""Grayscale frames, summed-area tables and rectangle arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ImageError(ValueError):
    """Malformed image buffer or dimensions."""


class BoundsError(IndexError):
    """A rectangle does not fit inside the image."""


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise BoundsError(f"negative rect offset {self}")
        if self.w < 1 or self.h < 1:
            raise BoundsError(f"empty rect {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def fits(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def iou(self, other: Rect) -> float:
        ix = max(0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        return inter / (self.area + other.area - inter)


class GrayImage:
    """8-bit single channel image stored as a ``(height, width)`` uint8 array."""

    __slots__ = ("width", "height", "data")

    def __init__(self, width: int, height: int, data):
        if width < 1 or height < 1:
            raise ImageError(f"image dimensions must be >= 1, got {width}x{height}")
        arr = np.asarray(data)
        if arr.size != width * height:
            raise ImageError(
                f"buffer holds {arr.size} pixels, expected {width}x{height}={width * height}"
            )
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ImageError("pixel intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        self.width = int(width)
        self.height = int(height)
        self.data = np.ascontiguousarray(arr.reshape(height, width))
        self.data.flags.writeable = False

    @classmethod
    def from_array(cls, arr) -> GrayImage:
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ImageError(f"expected a 2-D array, got shape {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr)

    @property
    def pixels(self) -> bytes:
        """Row-major pixel bytes."""
        return self.data.tobytes()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and bool(
            np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


def to_grayscale(rgb, width: int, height: int) -> GrayImage:
    """Convert interleaved 8-bit RGB to luma, ``round(0.299R + 0.587G + 0.114B)``.

    Computed in integer thousandths so halves round up exactly.
    """
    buf = np.frombuffer(bytes(rgb), dtype=np.uint8) if isinstance(rgb, (bytes, bytearray)) else np.asarray(rgb)
    if buf.size != 3 * width * height:
        raise ImageError(
            f"RGB buffer holds {buf.size} values, expected 3x{width}x{height}={3 * width * height}"
        )
    px = buf.reshape(height, width, 3).astype(np.int64)
    gray = (299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2] + 500) // 1000
    return GrayImage(width, height, np.clip(gray, 0, 255).astype(np.uint8))


class IntegralImage:
    """Plain and squared summed-area tables with a zero top row and left column.

    ``sum[y, x]`` holds the sum of all pixels strictly above and left of ``(x, y)``.
    """

    __slots__ = ("width", "height", "sum", "sqsum")

    def __init__(self, width: int, height: int, table: np.ndarray, sqtable: np.ndarray):
        self.width = width
        self.height = height
        self.sum = table
        self.sqsum = sqtable


def integral(img: GrayImage) -> IntegralImage:
    a = img.data.astype(np.int64)
    table = np.zeros((img.height + 1, img.width + 1), dtype=np.int64)
    sqtable = np.zeros_like(table)
    table[1:, 1:] = a.cumsum(0).cumsum(1)
    sqtable[1:, 1:] = (a * a).cumsum(0).cumsum(1)
    table.flags.writeable = False
    sqtable.flags.writeable = False
    return IntegralImage(img.width, img.height, table, sqtable)


def _check(ii: IntegralImage, r: Rect):
    if not r.fits(ii.width, ii.height):
        raise BoundsError(f"{r} exceeds {ii.width}x{ii.height} image")


def rect_sum(ii: IntegralImage, r: Rect) -> int:
    _check(ii, r)
    t = ii.sum
    x2, y2 = r.x + r.w, r.y + r.h
    return int(t[y2, x2]) - int(t[r.y, x2]) - int(t[y2, r.x]) + int(t[r.y, r.x])


def rect_sqsum(ii: IntegralImage, r: Rect) -> int:
    _check(ii, r)
    t = ii.sqsum
    x2, y2 = r.x + r.w, r.y + r.h
    return int(t[y2, x2]) - int(t[r.y, x2]) - int(t[y2, r.x]) + int(t[r.y, r.x])


def stats_from_sums(s: float, sq: float, area: int) -> tuple[float, float]:
    """Mean and floored stddev from window sums.

    Shared by the scalar and vectorized paths so both round identically.
    """
    mean = s / area
    var = sq / area - mean * mean
    if var < 0.0:
        var = 0.0
    std = math.sqrt(var)
    return mean, (std if std >= 1.0 else 1.0)


def window_stats(ii: IntegralImage, r: Rect) -> tuple[float, float]:
    """Mean and standard deviation of the window; stddev below 1 is reported as 1."""
    return stats_from_sums(float(rect_sum(ii, r)), float(rect_sqsum(ii, r)), r.area)


def window_stats_batch(ii: IntegralImage, xs: np.ndarray, ys: np.ndarray, size: int):
    """Vectorized ``window_stats`` for square windows of side ``size`` at ``(xs, ys)``.

    Returns ``(mean, std)`` arrays, bit-identical to the scalar path.
    """
    area = size * size
    s = _box(ii.sum, xs, ys, size, size).astype(np.float64)
    sq = _box(ii.sqsum, xs, ys, size, size).astype(np.float64)
    mean = s / area
    var = np.maximum(sq / area - mean * mean, 0.0)
    std = np.sqrt(var)
    return mean, np.where(std >= 1.0, std, 1.0)


def _box(table: np.ndarray, xs, ys, w: int, h: int) -> np.ndarray:
    return table[ys + h, xs + w] - table[ys, xs + w] - table[ys + h, xs] + table[ys, xs]


def crop(img: GrayImage, r: Rect) -> GrayImage:
    if not r.fits(img.width, img.height):
        raise BoundsError(f"{r} exceeds {img.width}x{img.height} image")
    return GrayImage.from_array(img.data[r.y : r.y + r.h, r.x : r.x + r.w])


def area_downscale(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Box-average ``arr`` down to ``out_w x out_h``; integer bin edges, round half up."""
    h, w = arr.shape
    if out_w > w or out_h > h:
        raise ImageError(f"cannot area-downscale {w}x{h} to {out_w}x{out_h}")
    ex = (np.arange(out_w + 1) * w) // out_w
    ey = (np.arange(out_h + 1) * h) // out_h
    table = np.zeros((h + 1, w + 1), dtype=np.int64)
    table[1:, 1:] = arr.astype(np.int64).cumsum(0).cumsum(1)
    x0, x1 = ex[:-1][None, :], ex[1:][None, :]
    y0, y1 = ey[:-1][:, None], ey[1:][:, None]
    sums = table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]
    counts = (x1 - x0) * (y1 - y0)
    # round half up on a non-negative ratio
    return ((2 * sums + counts) // (2 * counts)).astype(np.uint8)


def resize_nearest(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    xs = (np.arange(out_w) * img.width) // out_w
    ys = (np.arange(out_h) * img.height) // out_h
    return GrayImage.from_array(img.data[ys[:, None], xs[None, :]])


def random_subwindow(pool, size: int, rng: np.random.Generator, with_rect: bool = False):
    """Uniformly pick an image, a square side >= ``size`` and a position; area-downscale to ``size``."""
    i = int(rng.integers(len(pool)))
    arr = pool[i]
    h, w = arr.shape
    if min(h, w) < size:
        raise ImageError(f"pool image {i} ({w}x{h}) is smaller than the {size}px window")
    side = int(rng.integers(size, min(h, w) + 1))
    x = int(rng.integers(0, w - side + 1))
    y = int(rng.integers(0, h - side + 1))
    sub = arr[y : y + side, x : x + side]
    out = sub.copy() if side == size else area_downscale(sub, size, size)
    return (out, i, Rect(x, y, side, side)) if with_rect else out
