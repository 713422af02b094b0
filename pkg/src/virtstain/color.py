"""Color space helpers on float rasters in [0, 1]."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _check_rgb(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) raster, got {arr.shape}")
    return arr


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luminance plane of an RGB raster."""
    rgb = _check_rgb(rgb)
    return rgb @ LUMA_WEIGHTS.astype(rgb.dtype, copy=False)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexagonal HSV conversion. Hue in degrees [0, 360), S and V in [0, 1].

    Gray pixels (max == min) get hue 0 and saturation 0; black gets value 0.
    """
    rgb = _check_rgb(rgb)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cmax = rgb.max(axis=2)
    cmin = rgb.min(axis=2)
    delta = cmax - cmin

    hue = np.zeros_like(cmax)
    nz = delta > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rmax = nz & (cmax == r)
        gmax = nz & ~rmax & (cmax == g)
        bmax = nz & ~rmax & ~gmax
        hue[rmax] = 60.0 * (((g - b)[rmax] / delta[rmax]) % 6.0)
        hue[gmax] = 60.0 * ((b - r)[gmax] / delta[gmax] + 2.0)
        hue[bmax] = 60.0 * ((r - g)[bmax] / delta[bmax] + 4.0)
    hue = hue % 360.0

    sat = np.zeros_like(cmax)
    vpos = cmax > 0
    sat[vpos] = delta[vpos] / cmax[vpos]
    return np.stack([hue, sat, cmax], axis=2)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`; hue in degrees."""
    hsv = np.asarray(hsv, dtype=np.float64)
    if hsv.ndim != 3 or hsv.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) HSV raster, got {hsv.shape}")
    h = (hsv[..., 0] % 360.0) / 60.0
    s = np.clip(hsv[..., 1], 0.0, 1.0)
    v = np.clip(hsv[..., 2], 0.0, 1.0)
    c = v * s
    x = c * (1.0 - np.abs(h % 2.0 - 1.0))
    m = v - c
    zeros = np.zeros_like(c)
    sector = np.floor(h).astype(int) % 6
    r = np.choose(sector, [c, x, zeros, zeros, x, c])
    g = np.choose(sector, [x, c, c, x, zeros, zeros])
    b = np.choose(sector, [zeros, zeros, x, c, c, x])
    return np.stack([r + m, g + m, b + m], axis=2)
