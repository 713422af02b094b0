"""Whole-slide rasters: pyramid levels, tissue masks, and tile grids.

Slides are held as float rasters in [0, 1] (stored 8-bit on disk, divided
by 255 on load). The pyramid halves resolution per level with a box
filter, so level k has dims ceil(level-0 dims / 2**k). Grid arithmetic
runs at the pyramid level matching the requested magnification, with
level-0 pixel coordinates recorded on every tile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .color import rgb_to_hsv
from .errors import ConfigurationError, RangeError, ShapeError
from .resample import bilinear_resize

# level-0 scans are taken as x40; each pyramid level halves magnification
MAGNIFICATION_LEVELS = {"x40": 0, "x20": 1, "x10": 2}

# a pixel is tissue when it is either colorful or dark
TISSUE_SATURATION_MIN = 0.07
TISSUE_VALUE_MAX = 0.85

# slide-level foreground masks default to this pyramid level
FOREGROUND_LEVEL = 2


def _box_downsample2(arr: np.ndarray) -> np.ndarray:
    """Halve both spatial axes, averaging the available pixels per block."""
    h, w = arr.shape[:2]
    oh, ow = (h + 1) // 2, (w + 1) // 2
    acc = np.zeros((oh, ow) + arr.shape[2:], dtype=np.float64)
    cnt = np.zeros((oh, ow) + (1,) * (arr.ndim - 2), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            sub = arr[dy::2, dx::2]
            acc[: sub.shape[0], : sub.shape[1]] += sub
            cnt[: sub.shape[0], : sub.shape[1]] += 1.0
    return acc / cnt


@dataclass
class WsiImage:
    """A slide as a list of pyramid levels (level 0 finest)."""

    levels: list[np.ndarray]
    microns_per_pixel: float = 0.22

    @classmethod
    def from_level0(
        cls,
        pixels: np.ndarray,
        microns_per_pixel: float = 0.22,
        n_levels: int | None = None,
    ) -> "WsiImage":
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ShapeError(f"level 0 must be (H, W, 3), got {pixels.shape}")
        levels = [pixels]
        while True:
            if n_levels is not None and len(levels) >= n_levels:
                break
            h, w = levels[-1].shape[:2]
            if n_levels is None and (min(h, w) < 16 or len(levels) >= 6):
                break
            if min(h, w) < 2 and n_levels is not None and len(levels) < n_levels:
                levels.append(levels[-1].copy())
                continue
            levels.append(_box_downsample2(levels[-1]))
        return cls(levels, microns_per_pixel)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_dims(self, level: int) -> tuple[int, int]:
        """(height, width) of a level, defined even past the stored pyramid."""
        h, w = self.levels[0].shape[:2]
        f = 2**level
        return (-(-h // f), -(-w // f))


@dataclass
class ForegroundMask:
    plane: np.ndarray  # (H, W) bool at `level`
    level: int
    tissue_fraction: float


@dataclass(frozen=True)
class Tile:
    pixel_x: int  # level-0 coords of the top-left corner
    pixel_y: int
    level: int
    pixels: np.ndarray
    tissue_fraction: float


@dataclass(frozen=True)
class TileGrid:
    tile_size: int
    overlap_fraction: float
    magnification: str
    level: int
    stride: int
    xs: tuple[int, ...]  # extraction-level coords
    ys: tuple[int, ...]
    level_height: int = field(default=0)
    level_width: int = field(default=0)

    @property
    def cols(self) -> int:
        return len(self.xs)

    @property
    def rows(self) -> int:
        return len(self.ys)


def tissue_rule(pixels: np.ndarray) -> np.ndarray:
    """Boolean tissue plane: saturated or dark pixels count as tissue."""
    hsv = rgb_to_hsv(pixels)
    return (hsv[..., 1] >= TISSUE_SATURATION_MIN) | (hsv[..., 2] <= TISSUE_VALUE_MAX)


def foreground_mask(image: WsiImage, level: int = FOREGROUND_LEVEL) -> ForegroundMask:
    if not 0 <= level < image.n_levels:
        raise RangeError(f"pyramid level {level} out of range [0, {image.n_levels})")
    plane = tissue_rule(image.levels[level])
    return ForegroundMask(plane, level, float(plane.mean()))


def _axis_positions(dim: int, tile: int, stride: int, clamp: bool) -> list[int]:
    if dim <= tile:
        if dim < tile and not clamp:
            raise ConfigurationError(
                f"tile size {tile} exceeds image extent {dim} and clamping is disabled"
            )
        return [0]
    n = -(-(dim - tile) // stride) + 1
    out = []
    for k in range(n):
        pos = k * stride
        if pos > dim - tile:
            if not clamp:
                raise ConfigurationError(
                    "grid does not divide the image evenly and clamping is disabled"
                )
            pos = dim - tile
        out.append(pos)
    return out


def build_tile_grid(
    image: WsiImage,
    tile_size: int,
    overlap_fraction: float,
    magnification: str = "x40",
    clamp: bool = True,
) -> TileGrid:
    """Lay out tiles at the magnification's pyramid level.

    Stride is round(tile_size * (1 - overlap_fraction)), never below 1.
    Edge tiles are shifted inward so the grid covers every pixel; with
    ``clamp=False`` any grid that would need shifting is rejected.
    """
    if magnification not in MAGNIFICATION_LEVELS:
        raise ConfigurationError(
            f"unknown magnification {magnification!r}; expected one of "
            f"{sorted(MAGNIFICATION_LEVELS)}"
        )
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError(
            f"overlap_fraction must be in [0, 1), got {overlap_fraction}"
        )
    if tile_size < 1:
        raise ConfigurationError(f"tile_size must be positive, got {tile_size}")
    level = MAGNIFICATION_LEVELS[magnification]
    h, w = image.level_dims(level)
    stride = max(1, round(tile_size * (1.0 - overlap_fraction)))
    xs = _axis_positions(w, tile_size, stride, clamp)
    ys = _axis_positions(h, tile_size, stride, clamp)
    return TileGrid(
        tile_size=tile_size,
        overlap_fraction=overlap_fraction,
        magnification=magnification,
        level=level,
        stride=stride,
        xs=tuple(xs),
        ys=tuple(ys),
        level_height=h,
        level_width=w,
    )


def extract_tile(image: WsiImage, grid: TileGrid, ix: int, iy: int) -> Tile:
    """Copy one tile's pixels.

    When the pyramid stores the grid's level the copy is verbatim (placing
    such tiles back at overlap 0 reproduces the level bit for bit). When
    the level is missing, the level-0 footprint is read instead and
    resized bilinearly to tile_size.
    """
    if not 0 <= ix < grid.cols or not 0 <= iy < grid.rows:
        raise RangeError(
            f"tile index ({ix}, {iy}) outside grid {grid.cols}x{grid.rows}"
        )
    x, y = grid.xs[ix], grid.ys[iy]
    t = grid.tile_size
    if grid.level < image.n_levels:
        src = image.levels[grid.level]
        pixels = src[y : y + t, x : x + t].copy()
    else:
        f = 2**grid.level
        lvl0 = image.levels[0]
        x0, y0 = x * f, y * f
        region = lvl0[y0 : y0 + t * f, x0 : x0 + t * f]
        th = min(t, max(1, -(-region.shape[0] // f)))
        tw = min(t, max(1, -(-region.shape[1] // f)))
        pixels = bilinear_resize(region, (th, tw))
    frac = float(tissue_rule(pixels).mean())
    scale = 2**grid.level
    return Tile(
        pixel_x=x * scale,
        pixel_y=y * scale,
        level=grid.level,
        pixels=pixels,
        tissue_fraction=frac,
    )


def is_tissue_tile(tile: Tile, min_tissue: float = 0.10) -> bool:
    """Tiles with at least ``min_tissue`` tissue fraction are kept."""
    return tile.tissue_fraction >= min_tissue


def iter_tissue_tiles(image: WsiImage, grid: TileGrid, min_tissue: float = 0.10):
    """Yield (ix, iy, tile) for every tile passing the tissue filter."""
    for iy in range(grid.rows):
        for ix in range(grid.cols):
            tile = extract_tile(image, grid, ix, iy)
            if is_tissue_tile(tile, min_tissue):
                yield ix, iy, tile
