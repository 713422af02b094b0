"""Raster file handling: PNG tiles, 1-bit mask PNGs, pyramidal TIFFs.

Everything in memory is float64 in [0, 1]; files hold 8-bit samples
(1-bit for masks). Pyramid levels are written as SubIFDs with 256-px
tiles and 2x downsampling, which is what the slide reader expects.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import tifffile
from PIL import Image

from .errors import ConfigurationError, RangeError, ShapeError
from .wsi import WsiImage

TIFF_TILE = 256


def _to_u8(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) raster, got {arr.shape}")
    if arr.min() < -1e-9 or arr.max() > 1.0 + 1e-9:
        raise RangeError(
            f"raster values outside [0, 1]: [{arr.min():.4f}, {arr.max():.4f}]"
        )
    return (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _from_u8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def write_png(path, image: np.ndarray) -> Path:
    path = Path(path)
    Image.fromarray(_to_u8(image), mode="RGB").save(path)
    return path


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return _from_u8(np.asarray(im.convert("RGB")))


def write_mask_png(path, mask: np.ndarray) -> Path:
    """{0,1} plane to a 1-bit PNG."""
    plane = np.asarray(mask)
    if plane.ndim != 2:
        raise ShapeError(f"mask must be a 2-d plane, got {plane.shape}")
    path = Path(path)
    Image.fromarray(plane > 0.5).convert("1").save(path)
    return path


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.float64)


def _pyramid_levels(image: np.ndarray) -> list[np.ndarray]:
    # Reuse the slide model's own downsampling so files round-trip into
    # the exact WsiImage the rest of the pipeline would build.
    return WsiImage.from_level0(image).levels


def write_pyramid_tiff(path, image: np.ndarray) -> Path:
    """Tiled pyramidal TIFF: level 0 plus 2x-downsampled SubIFDs."""
    levels = [_to_u8(lvl) for lvl in _pyramid_levels(image)]
    path = Path(path)
    with tifffile.TiffWriter(path) as tif:
        tif.write(
            levels[0],
            tile=(TIFF_TILE, TIFF_TILE),
            subifds=len(levels) - 1,
            photometric="rgb",
        )
        for lvl in levels[1:]:
            tif.write(
                lvl,
                tile=(TIFF_TILE, TIFF_TILE),
                subfiletype=1,
                photometric="rgb",
            )
    return path


def read_wsi(path, microns_per_pixel: float = 0.22) -> WsiImage:
    """PNG or (pyramidal) TIFF into the slide model.

    TIFF pyramid levels are taken from the file when present; PNGs (and
    single-level TIFFs) get their pyramid rebuilt in memory.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"no raster at {path}")
    suffix = path.suffix.lower()
    if suffix == ".png":
        return WsiImage.from_level0(read_png(path), microns_per_pixel)
    if suffix not in (".tif", ".tiff"):
        raise ConfigurationError(f"unsupported raster format {suffix!r}")
    with tifffile.TiffFile(path) as tif:
        series = tif.series[0]
        arrays = [lvl.asarray() for lvl in series.levels]
    levels = []
    for arr in arrays:
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ShapeError(
                f"{path}: expected 8-bit RGB levels, got {arr.dtype} {arr.shape}"
            )
        levels.append(_from_u8(arr))
    if len(levels) == 1:
        return WsiImage.from_level0(levels[0], microns_per_pixel)
    return WsiImage(levels=levels, microns_per_pixel=microns_per_pixel)
