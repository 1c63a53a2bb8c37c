"""Whole-slide segmentation by overlap tiling and probability averaging.

Tiles are cropped on a regular grid whose stride never exceeds half the
tile size; tiles that would overhang the slide are shifted inward so the
grid always covers the full extent. Per-tile class probability maps are
summed into a slide-sized accumulator together with per-pixel coverage
counts; the stitched result is the per-pixel mean followed by argmax.
The accumulator is the only slide-sized structure, tiles stream through.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import ProbabilityMap, SegmentationMask
from .errors import ExtentTooSmall, OutOfBounds, ShapeError, UncoveredPixel


@dataclass(frozen=True)
class TileGrid:
    tile_size: tuple[int, int]
    stride: tuple[int, int]
    slide_extent: tuple[int, int]

    def __post_init__(self) -> None:
        th, tw = self.tile_size
        sh, sw = self.stride
        eh, ew = self.slide_extent
        if th < 1 or tw < 1 or sh < 1 or sw < 1:
            raise ValueError("tile size and stride must be positive")
        if sh > th // 2 or sw > tw // 2:
            raise ValueError("stride must not exceed half the tile size")
        if eh < th or ew < tw:
            raise ExtentTooSmall(f"extent {self.slide_extent} smaller than tile {self.tile_size}")


def _axis_origins(extent: int, tile: int, stride: int) -> list[int]:
    origins = list(range(0, extent - tile + 1, stride))
    if origins[-1] + tile < extent:
        origins.append(extent - tile)  # final tile shifted inward, never padded
    return origins


def plan_tiles(
    extent: tuple[int, int], tile_size: tuple[int, int], stride: tuple[int, int]
) -> list[tuple[int, int]]:
    """Tile origins (row, col) covering the extent; edge tiles clamp inward."""
    grid = TileGrid(tile_size, stride, extent)
    rows = _axis_origins(extent[0], tile_size[0], stride[0])
    cols = _axis_origins(extent[1], tile_size[1], stride[1])
    _ = grid
    return [(r, c) for r in rows for c in cols]


@dataclass
class ProbabilityAccumulator:
    """Running per-pixel probability sums and coverage counts."""

    num_classes: int
    extent: tuple[int, int]
    dtype: np.dtype = np.dtype(np.float64)
    sum: np.ndarray = field(init=False)
    count: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        rows, cols = self.extent
        self.sum = np.zeros((self.num_classes, rows, cols), dtype=self.dtype)
        self.count = np.zeros((rows, cols), dtype=np.int32)

    def accumulate(self, tile_probs: np.ndarray, origin: tuple[int, int]) -> None:
        """Add one tile's c x H x W probabilities at the given origin."""
        tile_probs = np.asarray(tile_probs)
        if tile_probs.ndim != 3 or tile_probs.shape[0] != self.num_classes:
            raise ShapeError(
                f"tile probs must be {self.num_classes} x H x W, got {tile_probs.shape}"
            )
        r, c = origin
        h, w = tile_probs.shape[1:]
        if r < 0 or c < 0 or r + h > self.extent[0] or c + w > self.extent[1]:
            raise OutOfBounds(f"tile at {origin} with shape {(h, w)} exceeds {self.extent}")
        self.sum[:, r : r + h, c : c + w] += tile_probs
        self.count[r : r + h, c : c + w] += 1

    def mean(self) -> np.ndarray:
        if (self.count == 0).any():
            n = int((self.count == 0).sum())
            raise UncoveredPixel(f"{n} pixels were never covered by any tile")
        return self.sum / self.count[None, :, :]


def finalize(acc: ProbabilityAccumulator) -> tuple[SegmentationMask, ProbabilityMap]:
    """Per-pixel mean probabilities and their argmax mask (ties -> lowest index)."""
    mean = acc.mean()
    labels = np.argmax(mean, axis=0)
    mask = SegmentationMask(labels)
    return mask, ProbabilityMap(np.clip(mean, 0.0, 1.0))
