"""Procedural stand-ins for gesture imagery.

Gestures are drawn as dark hand silhouettes (blob, spread fingers, pointing
finger and so on) over clear or cluttered backgrounds. Used for fixtures,
end-to-end checks and the scene-condition degradation suite.
"""

from __future__ import annotations

import numpy as np

from .imaging import area_downscale
from .labels import GESTURES, GestureLabel


def _disc(u, v, cu, cv, ru, rv):
    return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0


def _box(u, v, u0, u1, v0, v1):
    return (u >= u0) & (u < u1) & (v >= v0) & (v < v1)


def _stroke(u, v, a, b, r):
    """Points within ``r`` of the segment ``a -> b``."""
    du, dv = b[0] - a[0], b[1] - a[1]
    t = np.clip(((u - a[0]) * du + (v - a[1]) * dv) / (du * du + dv * dv), 0.0, 1.0)
    return (u - a[0] - t * du) ** 2 + (v - a[1] - t * dv) ** 2 <= r * r


# hand silhouettes over normalized (u, v) in [0, 1), v pointing down
_SILHOUETTES = {
    GestureLabel.FIST: lambda u, v: _disc(u, v, 0.5, 0.55, 0.36, 0.38),
    GestureLabel.PALM: lambda u, v: _disc(u, v, 0.5, 0.7, 0.34, 0.26)
    | _box(u, v, 0.17, 0.29, 0.1, 0.7)
    | _box(u, v, 0.35, 0.47, 0.04, 0.7)
    | _box(u, v, 0.53, 0.65, 0.06, 0.7)
    | _box(u, v, 0.71, 0.83, 0.14, 0.7),
    GestureLabel.GS: lambda u, v: _disc(u, v, 0.64, 0.62, 0.27, 0.26)
    | _box(u, v, 0.05, 0.64, 0.4, 0.54)
    | _box(u, v, 0.56, 0.7, 0.1, 0.5),
    GestureLabel.VS: lambda u, v: _disc(u, v, 0.5, 0.74, 0.27, 0.22)
    | _stroke(u, v, (0.42, 0.62), (0.22, 0.08), 0.07)
    | _stroke(u, v, (0.58, 0.62), (0.78, 0.08), 0.07),
    GestureLabel.LF: lambda u, v: _disc(u, v, 0.5, 0.7, 0.3, 0.26) | _box(u, v, 0.42, 0.57, 0.04, 0.6),
}


def _grid(size: int, rng: np.random.Generator, shift: float, zoom: tuple[float, float]):
    c = (np.arange(size) + 0.5) / size
    du, dv = rng.uniform(-shift, shift, size=2)
    z = rng.uniform(*zoom)
    u = (c[None, :] - 0.5) / z + 0.5 + du
    v = (c[:, None] - 0.5) / z + 0.5 + dv
    return np.broadcast_to(u, (size, size)), np.broadcast_to(v, (size, size))


def _finish(img: np.ndarray, u, v, rng: np.random.Generator, noise: float, where=True) -> np.ndarray:
    """Illumination ramp and sensor noise, applied where ``where`` holds."""
    ramp = rng.uniform(-35, 35, size=2)
    shade = ramp[0] * (u - 0.5) + ramp[1] * (v - 0.5) + rng.normal(0, noise, img.shape)
    img = img + np.where(where, shade, 0.0)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_edge(size: int, rng: np.random.Generator, noise: float = 20.0) -> np.ndarray:
    """Bright-left / dark-right two-tone square with tone, boundary, ramp and noise nuisances."""
    lo = rng.uniform(20, 140)
    hi = min(250.0, lo + rng.uniform(40, 140))
    u, v = _grid(size, rng, 0.1, (1.0, 1.0))
    img = np.where(u >= 0.5, lo, hi)
    # background bleeding in along the box edges
    margin = rng.uniform(0, 0.12, size=4)
    bg = (u < margin[0]) | (u > 1 - margin[1]) | (v < margin[2]) | (v > 1 - margin[3])
    img = np.where(bg, rng.uniform(0, 255), img)
    return _finish(img, u, v, rng, noise)


def silhouette_mask(label: GestureLabel, size: int, rng: np.random.Generator) -> np.ndarray:
    u, v = _grid(size, rng, 0.05, (0.9, 1.05))
    return _SILHOUETTES[label](u, v)


def render_gesture(
    label: GestureLabel, size: int, rng: np.random.Generator, background: np.ndarray | None = None, noise: float = 12.0
) -> np.ndarray:
    """A ``size`` square showing the gesture's hand silhouette over ``background``.

    Without a background one is drawn at random, clear or cluttered. The hand
    tone is darker than the local background by a random contrast.
    """
    if background is None:
        background = (cluttered_background if rng.random() < 0.5 else clear_background)(size, size, rng)
    bg = background.astype(np.float64)
    u, v = _grid(size, rng, 0.05, (0.9, 1.05))
    mask = _SILHOUETTES[label](u, v)
    ref = bg[~mask].mean() if (~mask).any() else bg.mean()
    tone = max(0.0, ref - rng.uniform(45, 110))
    img = np.where(mask, tone, bg)
    return _finish(img, u, v, rng, noise, mask)


def render_pattern(label: GestureLabel, size: int, rng: np.random.Generator, noise: float = 12.0) -> np.ndarray:
    return render_gesture(label, size, rng, noise=noise)


def noise_image(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 256, size=(height, width), dtype=np.uint8)


def positives(label: GestureLabel, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([render_pattern(label, size, rng) for _ in range(n)])


def noise_samples(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 256, size=(n, size, size), dtype=np.uint8)


def clear_background(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Near-blank wall: one flat tone with mild sensor noise."""
    tone = rng.uniform(90, 160)
    img = tone + rng.normal(0, 4, (height, width))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def cluttered_background(width: int, height: int, rng: np.random.Generator, n_items: int = 30) -> np.ndarray:
    """Shelf-like clutter: random bars and blocks, many with strong vertical edges."""
    img = clear_background(width, height, rng).astype(np.float64)
    for _ in range(n_items):
        w = int(rng.integers(3, max(4, width // 4)))
        h = int(rng.integers(3, max(4, height // 2)))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        img[y : y + h, x : x + w] = rng.uniform(0, 255)
    img += rng.normal(0, 6, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def compose(background: np.ndarray, patch: np.ndarray, x: int, y: int) -> np.ndarray:
    out = background.copy()
    out[y : y + patch.shape[0], x : x + patch.shape[1]] = patch
    return out


def dim(img: np.ndarray, gain: float = 0.4, rng: np.random.Generator | None = None, noise: float = 3.0) -> np.ndarray:
    """Low-light proxy: scale intensities and add read noise."""
    out = img.astype(np.float64) * gain
    if rng is not None:
        out += rng.normal(0, noise, img.shape)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def shrink(img: np.ndarray, factor: float) -> np.ndarray:
    """Far-distance proxy: area-downscale the whole frame by ``factor``."""
    h, w = img.shape
    return area_downscale(img, max(1, int(w / factor)), max(1, int(h / factor)))


def scene_frame(label, tag, rng: np.random.Generator, size: int = 96, far_factor: float = 3.0):
    """A frame of ``label`` under the scene conditions in ``tag``.

    Near frames place a 32-56 px gesture in a ``size`` square. Far frames
    compose the same scene ``far_factor`` times larger and area-downscale it
    back, as a camera further away would see it. Dim light scales
    intensities down and adds read noise. Returns ``(frame, rect)`` with the
    gesture's box in frame coordinates.
    """
    from .dataset import Background, Distance, Illumination

    far = tag.distance is Distance.MT3
    canvas = int(round(size * far_factor)) if far else size
    if tag.background is Background.CTB:
        bg = cluttered_background(canvas, canvas, rng, n_items=int(30 * (canvas / 96) ** 2))
    else:
        bg = clear_background(canvas, canvas, rng)
    side = int(rng.integers(32, 57))
    x = int(rng.integers(0, canvas - side + 1))
    y = int(rng.integers(0, canvas - side + 1))
    patch = render_gesture(label, side, rng, bg[y : y + side, x : x + side])
    frame = compose(bg, patch, x, y)
    if far:
        frame = area_downscale(frame, size, size)
        f = canvas / size
        x, y, side = int(x / f), int(y / f), max(1, int(side / f))
    if tag.illumination is Illumination.DL:
        frame = dim(frame, 0.4, rng)
    return frame, (x, y, side, side)


def background_pool(rng: np.random.Generator, n_clear: int = 60, n_clutter: int = 120, size: int = 128) -> list[np.ndarray]:
    """Clear and cluttered backgrounds plus dimmed copies of every fourth one."""
    bgs = [clear_background(size, size, rng) for _ in range(n_clear)]
    bgs += [cluttered_background(size, size, rng, n_items=50) for _ in range(n_clutter)]
    bgs += [dim(b, 0.4, rng) for b in bgs[::4]]
    return bgs


def gesture_training_sets(rng: np.random.Generator, n_positives: int = 400, n_scenes: int = 40, size: int = 20):
    """Positives per gesture and a negative pool per gesture.

    Each gesture's pool holds the shared backgrounds and scene frames showing
    the other four gestures, so the cascades learn to reject each other.
    """
    from .dataset import ALL_TAGS

    pos = {g: positives(g, n_positives, size, rng) for g in GESTURES}
    shared = background_pool(rng)
    scenes = {g: [scene_frame(g, ALL_TAGS[i % len(ALL_TAGS)], rng)[0] for i in range(n_scenes)] for g in GESTURES}
    pools = {g: shared + [f for h in GESTURES if h is not g for f in scenes[h]] for g in GESTURES}
    return pos, pools


def degradation_suite(rng: np.random.Generator, per_cell: int = 10):
    """``(frame, label, tag)`` triples covering every scene condition and gesture."""
    from .dataset import ALL_TAGS
    from .imaging import GrayImage

    return [
        (GrayImage.from_array(scene_frame(g, tag, rng)[0]), g, tag)
        for tag in ALL_TAGS
        for g in GESTURES
        for _ in range(per_cell)
    ]
