"""Pure numpy implementations of the hot kernels.

This module is the fallback twin of the compiled ``_kernels`` extension;
both expose the same functions with identical semantics so the backend can
be swapped at import time.  Keep the two in sync.
"""

import numpy as np

NAME = "pure"


def _shrink(u, t):
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def forward_batch(a1, s1, th1, a2, s2, th2, tf, ti, x, lo=None, hi=None):
    """Fused two-stage inference over a batch of mean-shifted patches.

    x: (n, 64).  When `lo`/`hi` are given (n, 64 each), the stage-1 DCT
    reconstruction is clamped into the interval before the inverse
    transform.  Returns the (n, 64) pixel-domain outputs.
    """
    y = x @ tf.T
    c1 = _shrink(y @ a1.T, th1)
    z = c1 @ s1.T
    if lo is not None:
        z = np.clip(z, lo, hi)
    w = z @ ti.T
    c2 = _shrink(w @ a2.T, th2)
    return c2 @ s2.T


def extract_at(img, origins, shift):
    """Gather 8x8 patches at (row, col) origins into (n, 64) rows."""
    windows = np.lib.stride_tricks.sliding_window_view(img, (8, 8))
    patches = windows[origins[:, 0], origins[:, 1]].reshape(len(origins), 64)
    return patches.astype(np.float64) - shift


def accumulate_at(values, origins, height, width):
    """Scatter-add patch values; returns (sum, count) images."""
    acc = np.zeros((height, width))
    cnt = np.zeros((height, width))
    rr = origins[:, 0, None, None] + np.arange(8)[None, :, None]
    cc = origins[:, 1, None, None] + np.arange(8)[None, None, :]
    np.add.at(acc, (rr, cc), values.reshape(-1, 8, 8))
    np.add.at(cnt, (rr, cc), 1.0)
    return acc, cnt


def best_match_blocks(img, origins):
    """Pick, per origin, the nearest aligned coding block.

    Candidates are aligned blocks whose top-left corner falls in the 16x16
    window centered on the patch origin, truncated at the image borders.
    Distance is squared pixel distance; ties break in raster order.
    Returns (n, 2) block coordinates (in block units).
    """
    height, width = img.shape
    out = np.empty((len(origins), 2), dtype=np.int64)
    for i, (r, c) in enumerate(origins):
        r = int(r)
        c = int(c)
        if r % 8 == 0 and c % 8 == 0:
            out[i, 0] = r // 8
            out[i, 1] = c // 8
            continue
        patch = img[r : r + 8, c : c + 8]
        rows = range(max(0, ((r - 8 + 7) // 8) * 8), min(height - 8, r + 7) + 1, 8)
        cols = range(max(0, ((c - 8 + 7) // 8) * 8), min(width - 8, c + 7) + 1, 8)
        best = None
        best_rc = (0, 0)
        for br in rows:
            for bc in cols:
                block = img[br : br + 8, bc : bc + 8]
                d = float(np.sum((patch - block) ** 2))
                if best is None or d < best:
                    best = d
                    best_rc = (br // 8, bc // 8)
        out[i, 0] = best_rc[0]
        out[i, 1] = best_rc[1]
    return out
