"""Seeded synthetic corpora: bright squares on dark background.

The squares corpus drives the small-object recall checks: each scene is
a dark (0.0) image with a handful of bright (1.0) axis-aligned squares
whose exact extents double as ground truth. Squares keep a minimum gap
so connected components never fuse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox2D

__all__ = ["SquareScene", "square_scene", "square_corpus"]


@dataclass(frozen=True)
class SquareScene:
    image: np.ndarray
    boxes: tuple[BBox2D, ...]


def square_scene(
    rng: np.random.Generator,
    image_size: int = 1024,
    n_squares: int = 5,
    square_size: int = 8,
    min_gap: int = 2,
) -> SquareScene:
    """One scene with non-overlapping bright squares at seeded positions."""
    if square_size < 1 or square_size > image_size:
        raise ValueError("square_size must lie in [1, image_size]")
    image = np.zeros((image_size, image_size))
    placed: list[tuple[int, int]] = []
    boxes = []
    limit = image_size - square_size
    attempts = 0
    while len(placed) < n_squares:
        attempts += 1
        if attempts > 10000 * max(n_squares, 1):
            raise RuntimeError("could not place squares with the requested gap")
        r = int(rng.integers(0, limit + 1))
        c = int(rng.integers(0, limit + 1))
        span = square_size + min_gap
        if any(abs(r - pr) < span and abs(c - pc) < span for pr, pc in placed):
            continue
        placed.append((r, c))
        image[r : r + square_size, c : c + square_size] = 1.0
        boxes.append(BBox2D(float(c), float(r), float(c + square_size), float(r + square_size)))
    return SquareScene(image, tuple(boxes))


def square_corpus(
    seed: int = 0,
    count: int = 50,
    image_size: int = 1024,
    n_squares: int = 5,
    square_size: int = 8,
    min_gap: int = 2,
) -> list[SquareScene]:
    """Deterministic corpus: the same seed always yields the same scenes."""
    rng = np.random.default_rng(seed)
    return [
        square_scene(rng, image_size, n_squares, square_size, min_gap)
        for _ in range(count)
    ]
