"""Binary PGM (P5) codec for grayscale images in [0, 1].

Written format: ``P5\\n<width> <height>\\n255\\n`` followed by one byte
per pixel, row-major. Readers accept any maxval up to 255 and scale to
[0, 1]; comment lines (#) in the header are skipped.
"""

from __future__ import annotations

import numpy as np

__all__ = ["read_pgm", "write_pgm"]


def write_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2D image, got shape {image.shape}")
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    return header + data.tobytes()


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Pull whitespace-separated header tokens, skipping # comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(data):
            raise ValueError("truncated PGM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    return tokens, pos + 1  # single whitespace byte terminates the header


def read_pgm(data: bytes) -> np.ndarray:
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ValueError("malformed PGM header") from exc
    if width < 1 or height < 1:
        raise ValueError(f"invalid PGM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise ValueError(f"unsupported PGM maxval {maxval}")
    body = data[offset : offset + width * height]
    if len(body) != width * height:
        raise ValueError("truncated PGM pixel data")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / float(maxval)
