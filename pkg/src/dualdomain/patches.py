"""Patch extraction, aggregation, image degradation, and interval lookup.

Images are (height, width) float arrays with values in [0, 255]; patches
are length-64 row-major vectors in the mean-shifted convention (-128).
Patch grids cover every pixel: the trailing row/column of origins is
snapped to the border when the stride does not divide the image size.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import CoverageError, ValidationError
from .jpegcodec import (
    BLOCK,
    BLOCK_DIM,
    DCT,
    CoeffIntervals,
    DegradedBlock,
    QuantTable,
    QuantizedBlock,
    compress_block,
    round_half_away,
    scaled_quant_table,
)

MEAN_SHIFT = 128.0


@dataclass
class PatchGrid:
    """Ordered patch origins plus their (mean-shifted) pixel vectors."""

    patch_size: int
    stride: int
    origins: np.ndarray  # (n, 2) int64 (row, col)
    patches: np.ndarray  # (n, 64) float64


@dataclass
class BlockGrid:
    """Aligned 8x8 quantized-coefficient grid of a degraded image."""

    indices: np.ndarray  # (hb, wb, 64) int64
    table: QuantTable

    @property
    def block_shape(self):
        return self.indices.shape[:2]

    def quantized_block(self, block_row: int, block_col: int) -> QuantizedBlock:
        return QuantizedBlock(self.indices[block_row, block_col], self.table)

    def interval_arrays(self):
        """Lower/upper interval bounds for every block, (hb, wb, 64) each."""
        q = self.table.steps.astype(np.float64)
        k = self.indices.astype(np.float64)
        return (k - 0.5) * q, (k + 0.5) * q


@dataclass
class TrainingPair:
    """A degraded block (with interval prior) and its clean target."""

    degraded: DegradedBlock
    clean: np.ndarray


def _axis_origins(size: int, stride: int) -> np.ndarray:
    last = size - BLOCK
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return np.asarray(starts, dtype=np.int64)


def patch_origins(height: int, width: int, stride: int) -> np.ndarray:
    """All (row, col) patch origins for a covering grid, raster order."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if height < BLOCK or width < BLOCK:
        raise ValidationError(f"image {height}x{width} smaller than {BLOCK}x{BLOCK}")
    rows = _axis_origins(height, stride)
    cols = _axis_origins(width, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def extract_patches(img: np.ndarray, stride: int) -> PatchGrid:
    """Extract mean-shifted 8x8 patches on a covering stride grid."""
    img = np.asarray(img, dtype=np.float64)
    origins = patch_origins(img.shape[0], img.shape[1], stride)
    patches = backend.kernels().extract_at(img, origins, MEAN_SHIFT)
    return PatchGrid(patch_size=BLOCK, stride=stride, origins=origins, patches=patches)


def aggregate(grid: PatchGrid, *, height: int, width: int) -> np.ndarray:
    """Average overlapping patch values back into an image.

    Un-shifts by +128 and clamps to [0, 255].  Raises CoverageError if any
    pixel is not covered by at least one patch.
    """
    acc, cnt = backend.kernels().accumulate_at(grid.patches, grid.origins, height, width)
    if np.any(cnt == 0):
        uncovered = np.argwhere(cnt == 0)[0]
        raise CoverageError(f"pixel {tuple(uncovered)} not covered by any patch")
    return np.clip(acc / cnt + MEAN_SHIFT, 0.0, 255.0)


def _pad_to_blocks(img: np.ndarray) -> np.ndarray:
    height, width = img.shape
    pad_r = (-height) % BLOCK
    pad_c = (-width) % BLOCK
    if pad_r or pad_c:
        img = np.pad(img, ((0, pad_r), (0, pad_c)), mode="edge")
    return img


def degrade_image(img: np.ndarray, quality: int):
    """JPEG-degrade an image blockwise; also return the coefficient grid.

    Non-multiple-of-8 images are edge-padded for coding and cropped back.
    The returned pixels are exact inverse transforms of the dequantized
    coefficients (clamping/rounding happens only at file write), so every
    aligned block's DCT lies inside the stored intervals by construction.
    The block grid covers the padded extent.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < BLOCK or img.shape[1] < BLOCK:
        raise ValidationError(f"image {img.shape} smaller than {BLOCK}x{BLOCK}")
    table = scaled_quant_table(quality)
    padded = _pad_to_blocks(img)
    hb, wb = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    blocks = (
        padded.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3).reshape(hb * wb, BLOCK_DIM)
    )
    coeffs = (blocks - MEAN_SHIFT) @ DCT.forward.T
    indices = round_half_away(coeffs / table.steps).astype(np.int64)
    recon = (indices * table.steps) @ DCT.inverse.T + MEAN_SHIFT
    degraded = (
        recon.reshape(hb, wb, BLOCK, BLOCK).transpose(0, 2, 1, 3).reshape(hb * BLOCK, wb * BLOCK)
    )
    grid = BlockGrid(indices=indices.reshape(hb, wb, BLOCK_DIM), table=table)
    return degraded[: img.shape[0], : img.shape[1]], grid


def quantized_grid_from_image(img: np.ndarray, quality: int) -> BlockGrid:
    """Recover the aligned coefficient grid of an already-degraded image.

    Used when the degraded image comes from a file: re-running the forward
    quantizer on its aligned blocks reconstructs a self-consistent interval
    source (saved pixels were rounded, so indices may differ from the
    original encode at very fine steps, but containment of this image's
    coefficients still holds by construction).
    """
    _, grid = degrade_image(np.asarray(img, dtype=np.float64), quality)
    return grid


def match_intervals(degraded: np.ndarray, grid: BlockGrid, origin) -> CoeffIntervals:
    """Interval prior for one (possibly misaligned) patch origin."""
    origins = np.asarray([origin], dtype=np.int64)
    lower, upper = match_intervals_batch(degraded, grid, origins)
    return CoeffIntervals(lower=lower[0], upper=upper[0])


def match_intervals_batch(degraded: np.ndarray, grid: BlockGrid, origins: np.ndarray):
    """Interval priors for many patch origins at once.

    Aligned origins use their own block; misaligned ones take the most
    similar aligned block (squared pixel distance) whose top-left corner is
    inside the 16x16 window centered on the patch origin.
    """
    degraded = np.asarray(degraded, dtype=np.float64)
    hb, wb = grid.block_shape
    padded = _pad_to_blocks(degraded)
    if padded.shape != (hb * BLOCK, wb * BLOCK):
        raise ValidationError(
            f"block grid {grid.block_shape} does not match image {degraded.shape}"
        )
    origins = np.asarray(origins, dtype=np.int64)
    if np.any(origins < 0) or np.any(origins[:, 0] + BLOCK > padded.shape[0]) or np.any(
        origins[:, 1] + BLOCK > padded.shape[1]
    ):
        raise ValidationError("patch origin out of bounds")
    best = backend.kernels().best_match_blocks(padded, origins)
    lower, upper = grid.interval_arrays()
    return lower[best[:, 0], best[:, 1]], upper[best[:, 0], best[:, 1]]


def build_training_set(
    images,
    quality: int,
    count: int,
    seed: int,
    encode_whole_images: bool = False,
) -> list[TrainingPair]:
    """Sample random clean/degraded patch pairs from an image corpus.

    Each clean patch is JPEG-encoded as a single aligned coding block, so
    its quantization intervals are exact.  With `encode_whole_images` the
    degraded patch is instead cut from a whole-image encode and its
    intervals come from the misaligned-block matcher.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    images = [np.asarray(img, dtype=np.float64) for img in images]
    usable = [img for img in images if img.shape[0] >= BLOCK and img.shape[1] >= BLOCK]
    if not usable:
        raise ValidationError("no image in the corpus is at least 8x8")
    table = scaled_quant_table(quality)
    rng = np.random.default_rng(seed)
    # Draw all origins up front so parallel consumers see a fixed sample.
    picks = rng.integers(0, len(usable), size=count)
    rows = np.empty(count, dtype=np.int64)
    cols = np.empty(count, dtype=np.int64)
    for i, k in enumerate(picks):
        h, w = usable[k].shape
        rows[i] = rng.integers(0, h - BLOCK + 1)
        cols[i] = rng.integers(0, w - BLOCK + 1)

    degraded_cache = {}
    pairs = []
    for i, k in enumerate(picks):
        img = usable[k]
        r, c = int(rows[i]), int(cols[i])
        clean = img[r : r + BLOCK, c : c + BLOCK].reshape(BLOCK_DIM) - MEAN_SHIFT
        if encode_whole_images:
            if k not in degraded_cache:
                degraded_cache[k] = degrade_image(img, quality)
            deg_img, grid = degraded_cache[k]
            iv = match_intervals(deg_img, grid, (r, c))
            pixels = deg_img[r : r + BLOCK, c : c + BLOCK].reshape(BLOCK_DIM) - MEAN_SHIFT
            # Matched block indices are the interval midpoints over the steps.
            matched = round_half_away((iv.lower + iv.upper) / 2.0 / table.steps)
            block = QuantizedBlock(indices=matched.astype(np.int64), table=table)
            pair = TrainingPair(DegradedBlock(pixels=pixels, intervals=iv, block=block), clean)
        else:
            pair = TrainingPair(compress_block(clean, table), clean)
        pairs.append(pair)
    return pairs


def pairs_as_arrays(pairs):
    """Stack a pair list into (degraded, clean, lower, upper) arrays."""
    degraded = np.stack([p.degraded.pixels for p in pairs])
    clean = np.stack([p.clean for p in pairs])
    lower = np.stack([p.degraded.intervals.lower for p in pairs])
    upper = np.stack([p.degraded.intervals.upper for p in pairs])
    return degraded, clean, lower, upper
