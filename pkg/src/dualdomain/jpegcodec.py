"""Block-level model of the JPEG transform/quantization path.

Everything here works on vectorized 8x8 blocks (length-64, row-major) in
the mean-shifted convention (pixel values minus 128).  The orthonormal 2-D
DCT is used throughout; it matches the JPEG FDCT normalization, so the
standard luminance step sizes apply without rescaling.

The quantization interval of a coefficient quantized to index ``k`` with
step ``q`` is ``[(k - 0.5) q, (k + 0.5) q]``; the dequantized value ``k q``
is its midpoint.  These intervals are the side information the restoration
stages consume.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

BLOCK = 8
BLOCK_DIM = BLOCK * BLOCK

# ITU-T T.81 Annex K luminance table, row-major.
BASE_LUMA_STEPS = np.array([
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
], dtype=np.int64)


@dataclass(frozen=True)
class Dct2d:
    """Constant 2-D DCT matrix pair for vectorized 8x8 blocks.

    ``forward`` is the Kronecker square of the orthonormal 8-point 1-D
    DCT-II matrix; ``inverse`` is its transpose.
    """

    forward: np.ndarray
    inverse: np.ndarray


def build_transform() -> Dct2d:
    """Return the 64x64 orthonormal block DCT and its inverse."""
    j = np.arange(BLOCK)
    c = np.empty((BLOCK, BLOCK))
    c[0, :] = 1.0 / np.sqrt(BLOCK)
    for i in range(1, BLOCK):
        c[i, :] = 0.5 * np.cos((2 * j + 1) * i * np.pi / 16.0)
    t = np.kron(c, c)
    return Dct2d(forward=t, inverse=t.T.copy())


# Shared instance; the matrices are constant.
DCT = build_transform()


@dataclass(frozen=True)
class QuantTable:
    """Quality-scaled luminance quantization steps (row-major, ints)."""

    quality: int
    steps: np.ndarray


def scaled_quant_table(quality: int) -> QuantTable:
    """Scale the base luminance table to a JPEG quality factor.

    Uses the common encoder convention: ``scale = 5000 / Q`` below 50,
    ``200 - 2 Q`` at or above, with floor-and-clamp into [1, 255].  Integer
    division throughout, matching libjpeg-family encoders.
    """
    if not isinstance(quality, (int, np.integer)) or isinstance(quality, bool):
        raise ValidationError(f"quality must be an integer, got {quality!r}")
    if not 1 <= quality <= 100:
        raise ValidationError(f"quality must be in [1, 100], got {quality}")
    scale = 5000 // quality if quality < 50 else 200 - 2 * quality
    steps = (BASE_LUMA_STEPS * scale + 50) // 100
    steps = np.clip(steps, 1, 255)
    return QuantTable(quality=int(quality), steps=steps)


@dataclass(frozen=True)
class QuantizedBlock:
    """Signed quantization indices of one coefficient block."""

    indices: np.ndarray
    table: QuantTable


@dataclass(frozen=True)
class CoeffIntervals:
    """Per-coefficient quantization interval, in DCT-coefficient units."""

    lower: np.ndarray
    upper: np.ndarray


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def quantize(coeffs: np.ndarray, table: QuantTable) -> QuantizedBlock:
    """Quantize 64 DCT coefficients to signed indices."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (BLOCK_DIM,):
        raise ValidationError(f"expected {BLOCK_DIM} coefficients, got shape {coeffs.shape}")
    indices = round_half_away(coeffs / table.steps).astype(np.int64)
    return QuantizedBlock(indices=indices, table=table)


def dequantize(block: QuantizedBlock) -> np.ndarray:
    """Return the interval-midpoint coefficients ``k * q``."""
    return block.indices.astype(np.float64) * block.table.steps


def intervals(block: QuantizedBlock) -> CoeffIntervals:
    """Quantization interval containing every coefficient that maps to ``k``."""
    q = block.table.steps.astype(np.float64)
    k = block.indices.astype(np.float64)
    return CoeffIntervals(lower=(k - 0.5) * q, upper=(k + 0.5) * q)


@dataclass(frozen=True)
class DegradedBlock:
    """A compressed, mean-shifted pixel block with its interval prior."""

    pixels: np.ndarray
    intervals: CoeffIntervals
    block: QuantizedBlock


def compress_block(pixels: np.ndarray, quality) -> DegradedBlock:
    """Push one mean-shifted pixel block through the JPEG codec path.

    `quality` may be an integer quality factor or a prebuilt QuantTable.
    The output pixels are the exact inverse transform of the dequantized
    coefficients (no rounding or range clamping is applied here).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape != (BLOCK_DIM,):
        raise ValidationError(f"expected {BLOCK_DIM} pixels, got shape {pixels.shape}")
    table = quality if isinstance(quality, QuantTable) else scaled_quant_table(quality)
    block = quantize(DCT.forward @ pixels, table)
    degraded = DCT.inverse @ dequantize(block)
    return DegradedBlock(pixels=degraded, intervals=intervals(block), block=block)
