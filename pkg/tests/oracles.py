"""Slow, obviously-correct reference implementations used as test oracles."""

import numpy as np

from haarpilot.haar import HaarKind

TIE = 1e-12


def stump_candidates(values):
    """One threshold below the minimum, then every midpoint between distinct values."""
    u = np.unique(values)
    return np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0])


def stump_oracle(values, labels, weights):
    """Exhaustive ``(threshold, polarity, error)``: smaller threshold wins ties, then +1."""
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(labels) > 0
    w = np.asarray(weights, dtype=np.float64)
    best = None
    for t in stump_candidates(v):
        for pol in (1, -1):
            pred = v > t if pol > 0 else v < t
            err = float(w[pred != y].sum())
            if best is None or err < best[2] - TIE:
                best = (float(t), pol, err)
    return best


def feature_oracle(X, labels, weights):
    """``(error, feature index)`` of the best stump over all columns, O(n^2) per column."""
    y = np.asarray(labels) > 0
    w = np.asarray(weights, dtype=np.float64)
    errs = []
    for j in range(X.shape[1]):
        v = X[:, j]
        t = stump_candidates(v)
        above = v[None, :] > t[:, None]
        below = v[None, :] < t[:, None]
        e_pos = ((above != y[None, :]) * w[None, :]).sum(axis=1)
        e_neg = ((below != y[None, :]) * w[None, :]).sum(axis=1)
        errs.append(min(e_pos.min(), e_neg.min()))
    errs = np.array(errs)
    j = int(np.flatnonzero(errs <= errs.min() + TIE)[0])
    return float(errs[j]), j


def random_stump_instance(rng, max_n, max_m):
    """Random labelled matrix with coarse integer values so ties and repeats occur."""
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    levels = int(rng.integers(2, 30))
    X = rng.integers(0, levels, (n, m)).astype(np.float64)
    y = rng.random(n) < 0.5
    y[0], y[-1] = True, False
    if rng.random() < 0.3:
        w = np.full(n, 1.0 / n)
    else:
        w = rng.random(n) + 1e-3
        w /= w.sum()
    return X, y, w


def integral_oracle(a):
    """Summed-area table by direct slice sums, zero-padded top and left."""
    h, w = a.shape
    a = a.astype(np.int64)
    out = np.zeros((h + 1, w + 1), dtype=np.int64)
    for y in range(1, h + 1):
        for x in range(1, w + 1):
            out[y, x] = a[:y, :x].sum()
    return out


def brute_bank(size):
    """Independent enumerator: loop over cell extents first, then placements."""
    out = set()
    for kind in HaarKind:
        for w in range(1, size + 1):
            for h in range(1, size + 1):
                for x in range(size):
                    for y in range(size):
                        if x + kind.nx * w <= size and y + kind.ny * h <= size:
                            out.add((kind, x, y, w, h))
    return out
