"""Raster resampling with half-pixel-center coordinate mapping."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def _src_coords(n_dst: int, n_src: int) -> np.ndarray:
    # destination pixel centers mapped back into source coordinates
    scale = n_src / n_dst
    return (np.arange(n_dst) + 0.5) * scale - 0.5


def nearest_resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize of the two leading axes. Preserves the value
    set exactly, so binary masks stay binary."""
    arr = np.asarray(arr)
    if arr.ndim < 2:
        raise ShapeError(f"nearest_resize needs at least 2 axes, got {arr.ndim}")
    h, w = shape
    ys = np.clip(np.round(_src_coords(h, arr.shape[0])), 0, arr.shape[0] - 1).astype(int)
    xs = np.clip(np.round(_src_coords(w, arr.shape[1])), 0, arr.shape[1] - 1).astype(int)
    return arr[np.ix_(ys, xs)]


def bilinear_resize(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the two leading axes of a float raster."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim < 2:
        raise ShapeError(f"bilinear_resize needs at least 2 axes, got {arr.ndim}")
    h, w = shape
    sy = np.clip(_src_coords(h, arr.shape[0]), 0, arr.shape[0] - 1)
    sx = np.clip(_src_coords(w, arr.shape[1]), 0, arr.shape[1] - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, arr.shape[0] - 1)
    x1 = np.minimum(x0 + 1, arr.shape[1] - 1)
    fy = (sy - y0).reshape(-1, 1)
    fx = (sx - x0).reshape(1, -1)
    if arr.ndim > 2:
        fy = fy.reshape(-1, 1, *([1] * (arr.ndim - 2)))
        fx = fx.reshape(1, -1, *([1] * (arr.ndim - 2)))
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bot = c * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy
