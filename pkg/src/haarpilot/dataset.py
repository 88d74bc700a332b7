"""Image I/O, annotations, training-sample extraction and the scene-condition evaluation harness."""

from __future__ import annotations

import csv
import io
import logging
import os
import re
import warnings
from dataclasses import dataclass, field
from enum import Enum
from itertools import product
from pathlib import Path

import numpy as np

from .haar import WindowSpec
from .imaging import GrayImage, ImageError, Rect, area_downscale, random_subwindow
from .labels import GESTURES, GestureLabel

log = logging.getLogger(__name__)


class PgmError(ValueError):
    def __init__(self, offset: int, msg: str):
        super().__init__(f"byte {offset}: {msg}")
        self.offset = offset


class UnsupportedPgmError(PgmError):
    pass


class AnnotationError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ManifestError(AnnotationError):
    pass


class DatasetIOError(OSError):
    pass


# --------------------------------------------------------------------------
# PGM


_WS = b" \t\r\n\v\f"


def parse_pgm(buf: bytes) -> GrayImage:
    """Decode a binary (P5) PGM with maxval 255; ``#`` comments in the header are skipped."""
    pos = 0
    n = len(buf)

    def token():
        nonlocal pos
        while pos < n:
            if buf[pos] in _WS:
                pos += 1
            elif buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise PgmError(start, "truncated header")
        return start, buf[start:pos]

    off, magic = token()
    if magic != b"P5":
        raise PgmError(off, f"bad magic {magic!r}, expected b'P5'")
    fields = []
    for name in ("width", "height", "maxval"):
        off, tok = token()
        if not tok.isdigit():
            raise PgmError(off, f"{name} is not a decimal integer: {tok!r}")
        fields.append((off, int(tok)))
    (_, width), (_, height), (moff, maxval) = fields
    if width < 1 or height < 1:
        raise PgmError(fields[0][0], f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedPgmError(moff, f"maxval {maxval} unsupported, only 255")
    if pos >= n or buf[pos] not in _WS:
        raise PgmError(pos, "missing whitespace after maxval")
    pos += 1
    need = width * height
    if n - pos < need:
        raise PgmError(n, f"short raster: {n - pos} of {need} bytes")
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return GrayImage(width, height, data)


def read_pgm(source) -> GrayImage:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return parse_pgm(fh.read())
    return parse_pgm(source.read())


def encode_pgm(img: GrayImage) -> bytes:
    return f"P5\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels


def write_pgm(img: GrayImage, destination) -> None:
    data = encode_pgm(img)
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as fh:
            fh.write(data)
    else:
        destination.write(data)


def load_image(path) -> GrayImage:
    """PGM natively; other formats through Pillow when it is installed."""
    path = Path(path)
    try:
        if path.suffix.lower() in (".pgm", ".pnm", ""):
            return read_pgm(path)
        from PIL import Image  # optional

        with Image.open(path) as im:
            return GrayImage.from_array(np.asarray(im.convert("L")))
    except (OSError, PgmError, ImportError) as exc:
        raise DatasetIOError(f"cannot read image {path}: {exc}") from exc


# --------------------------------------------------------------------------
# annotations and samples


@dataclass(frozen=True)
class Annotation:
    path: Path
    rects: tuple[Rect, ...]

    @property
    def count(self) -> int:
        return len(self.rects)


def parse_annotations(source) -> list[Annotation]:
    """Parse ``path N x1 y1 w1 h1 ... xN yN wN hN`` lines.

    Relative paths resolve against the annotation file's directory.
    """
    if isinstance(source, (str, os.PathLike)):
        base = Path(source).resolve().parent
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise DatasetIOError(f"cannot read annotation file {source}: {exc}") from exc
    else:
        base = Path.cwd()
        text = source.read()
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) < 2:
            raise AnnotationError(ln, "missing rectangle count")
        try:
            count = int(parts[1])
            nums = [int(p) for p in parts[2:]]
        except ValueError as exc:
            raise AnnotationError(ln, f"non-integer field: {exc}") from None
        if count < 0 or len(nums) != 4 * count:
            raise AnnotationError(ln, f"declares {count} rects but carries {len(nums)} coordinates")
        try:
            rects = tuple(Rect(*nums[i : i + 4]) for i in range(0, len(nums), 4))
        except (ValueError, IndexError) as exc:
            raise AnnotationError(ln, str(exc)) from None
        path = Path(parts[0])
        out.append(Annotation(path if path.is_absolute() else base / path, rects))
    return out


def read_path_list(source) -> list[Path]:
    """One image path per line, relative to the list file's directory."""
    source = Path(source)
    try:
        lines = source.read_text().splitlines()
    except OSError as exc:
        raise DatasetIOError(f"cannot read path list {source}: {exc}") from exc
    base = source.resolve().parent
    out = []
    for line in lines:
        line = line.strip()
        if line and not line.startswith("#"):
            p = Path(line)
            out.append(p if p.is_absolute() else base / p)
    return out


@dataclass
class ExtractFailure:
    path: Path
    rect: Rect
    reason: str


@dataclass
class SampleBatch:
    samples: np.ndarray
    failures: list[ExtractFailure] = field(default_factory=list)


def to_window(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape
    if (h, w) == (size, size):
        return np.array(arr, dtype=np.uint8)
    return area_downscale(arr, size, size)


def extract_samples(annotations, spec: WindowSpec | None = None, loader=load_image) -> SampleBatch:
    """Crop every annotated rectangle and box-average it down to the base window.

    Out-of-bounds or too-small rectangles are recorded as failures; the batch continues.
    """
    spec = spec or WindowSpec()
    size = spec.size
    samples = []
    failures = []
    for ann in annotations:
        img = loader(ann.path)
        for r in ann.rects:
            if not r.fits(img.width, img.height):
                failures.append(ExtractFailure(ann.path, r, f"outside {img.width}x{img.height} image"))
                continue
            if r.w < size or r.h < size:
                failures.append(ExtractFailure(ann.path, r, f"smaller than the {size}px window"))
                continue
            samples.append(to_window(img.data[r.y : r.y + r.h, r.x : r.x + r.w], size))
    for f in failures:
        log.warning("skipped %s %s: %s", f.path, f.rect, f.reason)
    arr = np.stack(samples) if samples else np.zeros((0, size, size), dtype=np.uint8)
    return SampleBatch(arr, failures)


@dataclass
class NegativeSamples:
    samples: np.ndarray
    sources: list[tuple[int, Rect]]
    exhausted: bool


def distinct_windows(shapes, size: int) -> int:
    """Number of distinct square windows of side >= ``size`` over images of the given shapes."""
    total = 0
    for h, w in shapes:
        for side in range(size, min(h, w) + 1):
            total += (w - side + 1) * (h - side + 1)
    return total


def sample_negatives(pool, spec: WindowSpec | None, count: int, seed: int, loader=load_image) -> NegativeSamples:
    """Seeded uniform random sub-windows from background images, scaled to the base window.

    ``pool`` holds image paths, GrayImages or 2-D arrays. Asking for more
    windows than the pool can supply distinctly is flagged as ``exhausted``.
    """
    spec = spec or WindowSpec()
    if not pool:
        raise ValueError("negative pool is empty")
    arrays = []
    for item in pool:
        if isinstance(item, GrayImage):
            arrays.append(item.data)
        elif isinstance(item, np.ndarray):
            arrays.append(item)
        else:
            arrays.append(loader(item).data)
    usable = [a for a in arrays if min(a.shape) >= spec.size]
    if not usable:
        raise ImageError(f"no pool image is at least {spec.size}px on each side")
    rng = np.random.default_rng(seed)
    out, sources = [], []
    for _ in range(count):
        arr, i, rect = random_subwindow(usable, spec.size, rng, with_rect=True)
        out.append(arr)
        sources.append((i, rect))
    exhausted = count > distinct_windows([a.shape for a in usable], spec.size)
    if exhausted:
        warnings.warn(f"requested {count} negatives from a pool with fewer distinct windows", RuntimeWarning)
    samples = np.stack(out) if out else np.zeros((0, spec.size, spec.size), dtype=np.uint8)
    return NegativeSamples(samples, sources, exhausted)


# --------------------------------------------------------------------------
# scene tags and evaluation


class Illumination(Enum):
    DL = "DL"
    WL = "WL"


class Background(Enum):
    CTB = "CTB"
    CLB = "CLB"


class Distance(Enum):
    LT3 = "LT3"
    MT3 = "MT3"


def _parse_enum(cls, token: str):
    t = token.strip().upper().replace("-", "")
    try:
        return cls(t)
    except ValueError:
        raise ValueError(f"unknown {cls.__name__.lower()} tag {token!r}") from None


@dataclass(frozen=True)
class SceneTag:
    illumination: Illumination
    background: Background
    distance: Distance

    @classmethod
    def parse(cls, illumination: str, background: str, distance: str) -> SceneTag:
        return cls(
            _parse_enum(Illumination, illumination),
            _parse_enum(Background, background),
            _parse_enum(Distance, distance),
        )

    def tokens(self) -> tuple[str, str, str]:
        return self.illumination.value, self.background.value, self.distance.value

    def __str__(self):
        return ", ".join(self.tokens())


# Table II row order: illumination, then background, then distance
ALL_TAGS = tuple(
    SceneTag(i, b, d) for i, b, d in product(Illumination, Background, Distance)
)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: GestureLabel
    tag: SceneTag


MANIFEST_HEADER = ("path", "label", "illumination", "background", "distance")


def parse_manifest(source) -> list[ManifestEntry]:
    """Read the ``path,label,illumination,background,distance`` CSV."""
    if isinstance(source, (str, os.PathLike)):
        base = Path(source).resolve().parent
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise DatasetIOError(f"cannot read manifest {source}: {exc}") from exc
    else:
        base = Path.cwd()
        text = source.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_HEADER:
        raise ManifestError(1, f"expected header {','.join(MANIFEST_HEADER)}")
    out = []
    for ln, row in enumerate(rows[1:], 2):
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) != 5:
            raise ManifestError(ln, f"expected 5 fields, got {len(row)}")
        try:
            label = GestureLabel.parse(row[1])
            tag = SceneTag.parse(row[2], row[3], row[4])
        except ValueError as exc:
            raise ManifestError(ln, str(exc)) from None
        p = Path(row[0].strip())
        out.append(ManifestEntry(p if p.is_absolute() else base / p, label, tag))
    return out


@dataclass
class EvalReport:
    """Correct/total counts per (scene tag, gesture) cell with derived accuracies.

    Aggregates are arithmetic means over non-empty constituent cells.
    """

    counts: dict[tuple[SceneTag, GestureLabel], list[int]] = field(default_factory=dict)

    @classmethod
    def from_cells(cls, cells) -> EvalReport:
        rep = cls()
        for key, (correct, total) in cells.items():
            rep.counts[key] = [int(correct), int(total)]
        return rep

    def add(self, tag: SceneTag, label: GestureLabel, correct: bool):
        c = self.counts.setdefault((tag, label), [0, 0])
        c[0] += int(correct)
        c[1] += 1

    def merge(self, other: EvalReport) -> EvalReport:
        out = EvalReport({k: list(v) for k, v in self.counts.items()})
        for k, (c, t) in other.counts.items():
            cur = out.counts.setdefault(k, [0, 0])
            cur[0] += c
            cur[1] += t
        return out

    def accuracy(self, tag: SceneTag, label: GestureLabel) -> float | None:
        c = self.counts.get((tag, label))
        if not c or c[1] == 0:
            return None
        return c[0] / c[1]

    def _mean(self, pred) -> float | None:
        vals = [
            a
            for (tag, label) in sorted(self.counts, key=_cell_key)
            if pred(tag, label) and (a := self.accuracy(tag, label)) is not None
        ]
        return sum(vals) / len(vals) if vals else None

    def row_average(self, tag: SceneTag) -> float | None:
        return self._mean(lambda t, g: t == tag)

    def gesture_average(self, label: GestureLabel) -> float | None:
        return self._mean(lambda t, g: g == label)

    def marginal(self, value) -> float | None:
        """Mean over cells whose tag carries ``value`` (an Illumination, Background or Distance)."""
        return self._mean(lambda t, g: value in (t.illumination, t.background, t.distance))

    def marginal_for(self, value, label: GestureLabel) -> float | None:
        return self._mean(lambda t, g: g == label and value in (t.illumination, t.background, t.distance))

    def grand_average(self) -> float | None:
        return self._mean(lambda t, g: True)

    def best_row(self) -> tuple[SceneTag, float] | None:
        rows = [(t, self.row_average(t)) for t in ALL_TAGS]
        rows = [(t, a) for t, a in rows if a is not None]
        return max(rows, key=lambda r: r[1]) if rows else None

    def axis_gaps(self) -> dict[str, float]:
        """Absolute marginal gap per condition axis."""
        gaps = {}
        for name, (a, b) in (
            ("distance", (Distance.LT3, Distance.MT3)),
            ("background", (Background.CLB, Background.CTB)),
            ("illumination", (Illumination.WL, Illumination.DL)),
        ):
            ma, mb = self.marginal(a), self.marginal(b)
            if ma is not None and mb is not None:
                gaps[name] = abs(ma - mb)
        return gaps

    def significance_order(self) -> list[str]:
        gaps = self.axis_gaps()
        return sorted(gaps, key=lambda k: -gaps[k])

    def rows(self):
        """CSV rows: data cells, then ``AVG`` marginal rows."""
        labels = sorted({g for _, g in self.counts}, key=lambda g: g.rank)
        tags = [t for t in ALL_TAGS if any((t, g) in self.counts for g in labels)]
        for t in tags:
            for g in labels:
                if (t, g) in self.counts:
                    yield (*t.tokens(), g.value, *self._cell_fields(lambda tt, gg: tt == t and gg == g))
            yield (*t.tokens(), "AVG", *self._cell_fields(lambda tt, gg: tt == t))
        for g in labels:
            yield ("AVG", "AVG", "AVG", g.value, *self._cell_fields(lambda tt, gg: gg == g))
        for axis, values in ((0, Illumination), (1, Background), (2, Distance)):
            for v in values:
                key = ["AVG", "AVG", "AVG"]
                key[axis] = v.value
                yield (*key, "AVG", *self._cell_fields(lambda tt, gg, v=v: v in (tt.illumination, tt.background, tt.distance)))
        yield ("AVG", "AVG", "AVG", "AVG", *self._cell_fields(lambda tt, gg: True))

    def _cell_fields(self, pred):
        correct = total = 0
        for (t, g), (c, n) in self.counts.items():
            if pred(t, g):
                correct += c
                total += n
        acc = self._mean(pred)
        return correct, total, "" if acc is None else f"{acc:.6f}"

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("illumination", "background", "distance", "gesture", "correct", "total", "accuracy"))
        for row in self.rows():
            w.writerow(row)

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def _cell_key(key):
    tag, label = key
    return ALL_TAGS.index(tag), label.rank


def evaluate_frames(items, cascades, cfg=None, classify=None) -> EvalReport:
    """Classify each ``(frame, true_label, tag)`` and tally correctness per cell."""
    from .detect import classify_gesture

    classify = classify or classify_gesture
    rep = EvalReport()
    for frame, label, tag in items:
        predicted, _ = classify(frame, cascades, cfg)
        rep.add(tag, label, predicted == label)
    return rep


def evaluate(manifest, cascades, cfg=None, loader=load_image) -> EvalReport:
    """Run gesture classification over a manifest and build the accuracy matrix."""
    if not manifest:
        raise ValueError("manifest is empty")
    return evaluate_frames(((loader(e.path), e.label, e.tag) for e in manifest), cascades, cfg)


# --------------------------------------------------------------------------
# dataset inventory


@dataclass
class DatasetSummary:
    positives: dict[GestureLabel, int]
    negatives: dict[GestureLabel, int]
    total_images: int


def summarize(entries) -> DatasetSummary:
    """Per-gesture positive/negative image counts and the number of distinct images overall.

    ``entries`` maps each gesture to ``(positive image paths, negative image paths)``;
    background images shared between gestures are counted once in the total.
    """
    pos, neg = {}, {}
    seen: set[str] = set()
    for label, (p_paths, n_paths) in entries.items():
        p_set = {str(p) for p in p_paths}
        n_set = {str(p) for p in n_paths}
        pos[label] = len(p_set)
        neg[label] = len(n_set)
        seen |= p_set | n_set
    return DatasetSummary(pos, neg, len(seen))


_DATASET_LINE = re.compile(r"^\s*(\S+)\s+(\S+)\s+(\S+)\s*$")


def read_dataset_list(source) -> dict[GestureLabel, tuple[list[Path], list[Path]]]:
    """Lines ``gesture annotation_file negatives_list``; paths relative to this file."""
    source = Path(source)
    base = source.resolve().parent
    out = {}
    for ln, line in enumerate(source.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _DATASET_LINE.match(line)
        if not m:
            raise AnnotationError(ln, "expected 'gesture annotation_file negatives_list'")
        try:
            label = GestureLabel.parse(m.group(1))
        except ValueError as exc:
            raise AnnotationError(ln, str(exc)) from None
        anns = parse_annotations(base / m.group(2))
        negs = read_path_list(base / m.group(3))
        out[label] = ([a.path for a in anns], negs)
    return out


__all__ = [
    "ALL_TAGS",
    "GESTURES",
    "Annotation",
    "Background",
    "Distance",
    "EvalReport",
    "Illumination",
    "ManifestEntry",
    "SceneTag",
    "evaluate",
    "evaluate_frames",
    "extract_samples",
    "parse_annotations",
    "parse_manifest",
    "read_pgm",
    "sample_negatives",
    "summarize",
    "write_pgm",
]
