"""Weighted tile blending for whole-slide reassembly.

Every tile contributes value and weight planes shaped by a separable
Hamming window, so overlapping tiles cross-fade instead of butting into
each other. Finalizing divides the two planes and clamps to [0, 1].
Zero overlap switches to a flat window: tiles then partition the canvas
and reconstruction is an exact copy.

The streaming writer emits finished row bands as soon as no future tile
can touch them; its output is bit-identical to whole-image stitching
because the per-pixel accumulation order is the same.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ContractError, CoverageError
from .training import ModelBank, translate_tile
from .wsi import TileGrid, WsiImage, extract_tile

DEFAULT_OVERLAP = 0.6


def hamming_1d(m: int) -> np.ndarray:
    """Length-m Hamming taper; a single sample degenerates to weight 1."""
    if m < 1:
        raise ConfigurationError(f"window length must be positive, got {m}")
    if m == 1:
        return np.ones(1)
    x = np.arange(m)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * x / (m - 1))


def hamming_2d(shape: tuple[int, int]) -> np.ndarray:
    """Outer product of the two 1-D tapers."""
    return np.outer(hamming_1d(shape[0]), hamming_1d(shape[1]))


def _window(shape: tuple[int, int], overlap_fraction: float) -> np.ndarray:
    if overlap_fraction == 0.0:
        return np.ones(shape)
    return hamming_2d(shape)


def seam_energy(image: np.ndarray) -> float:
    """Mean squared discrete gradient; step edges at tile seams raise it."""
    dx = np.diff(image, axis=1)
    dy = np.diff(image, axis=0)
    return float(np.mean(dx * dx) + np.mean(dy * dy))


class StitchCanvas:
    """Whole-image accumulator: add tiles in any order, then finalize."""

    def __init__(self, shape: tuple[int, int], overlap_fraction: float, channels: int = 3):
        if not 0.0 <= overlap_fraction < 1.0:
            raise ConfigurationError(f"overlap must be in [0, 1), got {overlap_fraction}")
        self.height, self.width = shape
        self.overlap_fraction = overlap_fraction
        self.value = np.zeros((self.height, self.width, channels))
        self.weight = np.zeros((self.height, self.width))
        self._windows: dict[tuple[int, int], np.ndarray] = {}

    def _window_for(self, shape: tuple[int, int]) -> np.ndarray:
        if shape not in self._windows:
            self._windows[shape] = _window(shape, self.overlap_fraction)
        return self._windows[shape]

    def add(self, x: int, y: int, pixels: np.ndarray) -> None:
        mh, mw = pixels.shape[:2]
        if x < 0 or y < 0 or y + mh > self.height or x + mw > self.width:
            raise ContractError(
                f"tile at ({x}, {y}) size ({mh}, {mw}) exceeds canvas "
                f"({self.height}, {self.width})"
            )
        w = self._window_for((mh, mw))
        self.value[y : y + mh, x : x + mw] += pixels * w[..., None]
        self.weight[y : y + mh, x : x + mw] += w

    def finalize(self) -> np.ndarray:
        uncovered = np.argwhere(self.weight == 0.0)
        if uncovered.size:
            y, x = (int(v) for v in uncovered[0])
            raise CoverageError(
                f"pixel ({x}, {y}) received no tile", coords=(x, y)
            )
        out = self.value / self.weight[..., None]
        return np.clip(out, 0.0, 1.0)


class StreamingStitcher:
    """Row-band variant: feed tiles sorted by tile y, read bands back.

    Holds only ``tile_size`` canvas rows. Feeding a tile with a larger y
    finalizes every row above it; ``close()`` flushes the rest and
    returns the assembled image (callers that truly stream can collect
    the bands from ``feed``/``close`` return values instead).
    """

    def __init__(
        self,
        shape: tuple[int, int],
        tile_size: int,
        overlap_fraction: float,
        channels: int = 3,
    ):
        if not 0.0 <= overlap_fraction < 1.0:
            raise ConfigurationError(f"overlap must be in [0, 1), got {overlap_fraction}")
        self.height, self.width = shape
        self.tile_size = tile_size
        self.overlap_fraction = overlap_fraction
        self.value = np.zeros((tile_size, self.width, channels))
        self.weight = np.zeros((tile_size, self.width))
        self.base = 0  # canvas row of buffer row 0
        self._windows: dict[tuple[int, int], np.ndarray] = {}
        self._bands: list[np.ndarray] = []
        self._closed = False

    def _window_for(self, shape: tuple[int, int]) -> np.ndarray:
        if shape not in self._windows:
            self._windows[shape] = _window(shape, self.overlap_fraction)
        return self._windows[shape]

    def _emit_rows(self, n: int) -> np.ndarray:
        """Finalize the top n buffer rows and scroll the buffer."""
        n = min(n, self.tile_size)
        w = self.weight[:n]
        uncovered = np.argwhere(w == 0.0)
        if uncovered.size:
            ry, rx = (int(v) for v in uncovered[0])
            raise CoverageError(
                f"pixel ({rx}, {self.base + ry}) received no tile",
                coords=(rx, self.base + ry),
            )
        band = np.clip(self.value[:n] / w[..., None], 0.0, 1.0)
        keep = self.tile_size - n
        self.value[:keep] = self.value[n:]
        self.value[keep:] = 0.0
        self.weight[:keep] = self.weight[n:]
        self.weight[keep:] = 0.0
        self.base += n
        self._bands.append(band)
        return band

    def feed(self, x: int, y: int, pixels: np.ndarray) -> list[np.ndarray]:
        if self._closed:
            raise ContractError("stitcher already closed")
        mh, mw = pixels.shape[:2]
        if y < self.base:
            raise ContractError(
                f"tile y={y} arrived after rows below {self.base} were finalized"
            )
        if y + mh > self.height or x + mw > self.width or x < 0:
            raise ContractError(
                f"tile at ({x}, {y}) size ({mh}, {mw}) exceeds canvas "
                f"({self.height}, {self.width})"
            )
        out = []
        while y > self.base:
            out.append(self._emit_rows(y - self.base))
        w = self._window_for((mh, mw))
        self.value[0:mh, x : x + mw] += pixels * w[..., None]
        self.weight[0:mh, x : x + mw] += w
        return out

    def close(self) -> np.ndarray:
        if self._closed:
            raise ContractError("stitcher already closed")
        self._closed = True
        while self.base < self.height:
            self._emit_rows(self.height - self.base)
        return np.concatenate(self._bands, axis=0)


def grid_tiles_row_major(grid: TileGrid):
    """(ix, iy, x, y) indices and anchors in the expected feed order."""
    for iy, y in enumerate(grid.ys):
        for ix, x in enumerate(grid.xs):
            yield ix, iy, x, y


def stitch_tiles(tiles, shape: tuple[int, int], overlap_fraction: float) -> np.ndarray:
    """One-shot helper: tiles is an iterable of (x, y, pixels)."""
    first = None
    buffered = []
    for t in tiles:
        if first is None:
            first = t[2].shape[2] if t[2].ndim == 3 else 1
        buffered.append(t)
    canvas = StitchCanvas(shape, overlap_fraction, channels=first or 3)
    for x, y, px in buffered:
        canvas.add(x, y, px if px.ndim == 3 else px[..., None])
    return canvas.finalize()


def stitch_wsi(
    bank: ModelBank,
    stain_id: str,
    wsi: WsiImage,
    grid: TileGrid,
    streaming: bool = True,
) -> np.ndarray:
    """Translate every grid tile and reassemble the stained plane."""
    shape = (grid.level_height, grid.level_width)
    if streaming:
        sink = StreamingStitcher(shape, grid.tile_size, grid.overlap_fraction)
        for ix, iy, x, y in grid_tiles_row_major(grid):
            tile = extract_tile(wsi, grid, ix, iy)
            sink.feed(x, y, translate_tile(bank, stain_id, tile.pixels))
        return sink.close()
    canvas = StitchCanvas(shape, grid.overlap_fraction)
    for ix, iy, x, y in grid_tiles_row_major(grid):
        tile = extract_tile(wsi, grid, ix, iy)
        canvas.add(x, y, translate_tile(bank, stain_id, tile.pixels))
    return canvas.finalize()
