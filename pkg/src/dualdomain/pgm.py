"""8-bit binary graymap (P5) reader and writer.

Only the binary single-byte variant is supported; headers may contain
``#`` comments anywhere whitespace is allowed, per the PNM convention.
"""

import numpy as np

from .errors import PgmHeaderError, PgmTruncatedError, PgmUnsupportedError


def _read_tokens(data: bytes, count: int):
    """Read `count` whitespace/comment-delimited header tokens.

    Returns the tokens and the offset of the byte after the single
    whitespace character that terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos] != ord("#"):
            pos += 1
        if pos == start:
            raise PgmHeaderError("unexpected end of header")
        tokens.append(data[start:pos])
        if len(tokens) == count:
            # Exactly one whitespace byte separates the header from the payload.
            if pos >= n or not data[pos : pos + 1].isspace():
                raise PgmHeaderError("missing whitespace after header")
            pos += 1
    return tokens, pos


def load_gray(path) -> np.ndarray:
    """Load a P5 graymap as a (height, width) float array in [0, 255]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _read_tokens(data, 4)
    if tokens[0] != b"P5":
        raise PgmHeaderError(f"not a binary graymap (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PgmHeaderError(f"non-numeric header field: {exc}") from exc
    if width <= 0 or height <= 0:
        raise PgmHeaderError(f"bad dimensions {width}x{height}")
    if maxval > 255:
        raise PgmUnsupportedError(f"only 8-bit graymaps supported (maxval {maxval})")
    if maxval <= 0:
        raise PgmHeaderError(f"bad maxval {maxval}")
    payload = data[offset : offset + width * height]
    if len(payload) < width * height:
        raise PgmTruncatedError(
            f"payload has {len(payload)} bytes, expected {width * height}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return pixels.reshape(height, width)


def save_gray(img: np.ndarray, path) -> None:
    """Write a (height, width) array as an 8-bit P5 graymap.

    Values are clamped to [0, 255] and rounded half away from zero.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    height, width = img.shape
    clipped = np.clip(img, 0.0, 255.0)
    quantized = np.floor(clipped + 0.5).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(quantized.tobytes())
