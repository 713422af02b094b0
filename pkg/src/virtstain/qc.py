"""Discriminator-based quality control.

A tile's two patch-score heads are clamped to [-1, 1], resized back to
tile resolution, combined with a pixel-wise minimum, and mapped to
[0, 1]. The population standard deviation of that confidence plane (in
percent) is the anomaly score: healthy tiles of a trained domain sit
inside a calibrated band, near-constant background falls below it, and
defects push it above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import hsv_to_rgb, rgb_to_hsv
from .errors import ConfigurationError, DomainError, RangeError, ShapeError
from .models import Discriminator
from .resample import bilinear_resize

# defect-family constants; magnitude in [0,1] scales all of them
GLOBAL_SHIFT_MAX_HUE = 60.0  # degrees at magnitude 1
GLOBAL_SHIFT_MAX_VALUE = 0.25
BLOB_MAX_DARKENING = 0.85
DROPLET_RING_DARKENING = 0.6
DROPLET_INTERIOR_LIFT = 0.25

DEGRADE_KINDS = ("global_shift", "local_blob", "droplet")


@dataclass
class ConfidenceMap:
    c_lum: np.ndarray  # clamped head scores at tile resolution
    c_rgb: np.ndarray
    c_all: np.ndarray  # (min(c_lum, c_rgb) + 1) / 2, in [0,1]


@dataclass(frozen=True)
class AnomalyStats:
    std_percent: float
    interval_lo: float
    interval_hi: float
    verdict: str  # authentic | outlier_low | outlier_high


@dataclass
class Heatmap:
    rgb: np.ndarray


def _tile_pixels(tile) -> np.ndarray:
    px = getattr(tile, "pixels", tile)
    px = np.asarray(px, dtype=np.float64)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) tile, got {px.shape}")
    return px


def confidence_map(disc: Discriminator, tile) -> ConfidenceMap:
    pixels = _tile_pixels(tile)
    lum, rgb = disc.forward(pixels)
    shape = pixels.shape[:2]
    c_lum = bilinear_resize(np.clip(lum, -1.0, 1.0), shape)
    c_rgb = bilinear_resize(np.clip(rgb, -1.0, 1.0), shape)
    c_all = (np.minimum(c_lum, c_rgb) + 1.0) / 2.0
    return ConfidenceMap(c_lum=c_lum, c_rgb=c_rgb, c_all=c_all)


def anomaly_stats(cmap: ConfidenceMap, interval: tuple[float, float]) -> AnomalyStats:
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ConfigurationError(f"interval must satisfy lo < hi, got ({lo}, {hi})")
    std = float(np.std(cmap.c_all)) * 100.0
    if std <= lo:
        verdict = "outlier_low"
    elif std >= hi:
        verdict = "outlier_high"
    else:
        verdict = "authentic"
    return AnomalyStats(std_percent=std, interval_lo=lo, interval_hi=hi, verdict=verdict)


def calibrate_interval(maps, lo_pct: float, hi_pct: float) -> tuple[float, float]:
    """Percentile band of the anomaly-score histogram of a reference set.

    Accepts ConfidenceMaps or raw std_percent floats.
    """
    stds = []
    for m in maps:
        if isinstance(m, ConfidenceMap):
            stds.append(float(np.std(m.c_all)) * 100.0)
        else:
            stds.append(float(m))
    if not stds:
        raise DomainError("cannot calibrate from an empty reference stream")
    if not 0.0 <= lo_pct < hi_pct <= 100.0:
        raise ConfigurationError(f"bad percentile pair ({lo_pct}, {hi_pct})")
    arr = np.asarray(stds)
    return float(np.percentile(arr, lo_pct)), float(np.percentile(arr, hi_pct))


# ---------------------------------------------------------------------
# synthetic defects
# ---------------------------------------------------------------------


def _soft_disk(h: int, w: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / radius


def degrade_tile(tile, kind: str, magnitude: float, seed: int = 0) -> np.ndarray:
    """Apply one synthetic defect; magnitude 0 is the identity."""
    if kind not in DEGRADE_KINDS:
        raise ConfigurationError(f"unknown defect kind {kind!r}; expected {DEGRADE_KINDS}")
    if not 0.0 <= magnitude <= 1.0:
        raise RangeError(f"magnitude must be in [0, 1], got {magnitude}")
    pixels = _tile_pixels(tile).copy()
    if magnitude == 0.0:
        return pixels
    h, w = pixels.shape[:2]
    rng = np.random.default_rng(seed)

    if kind == "global_shift":
        hsv = rgb_to_hsv(pixels)
        hsv[..., 0] = np.mod(hsv[..., 0] + magnitude * GLOBAL_SHIFT_MAX_HUE, 360.0)
        hsv[..., 2] = np.clip(hsv[..., 2] - magnitude * GLOBAL_SHIFT_MAX_VALUE, 0.0, 1.0)
        return hsv_to_rgb(hsv)

    if kind == "local_blob":
        cy = rng.uniform(0.25 * h, 0.75 * h)
        cx = rng.uniform(0.25 * w, 0.75 * w)
        radius = rng.uniform(0.15, 0.3) * min(h, w)
        d = _soft_disk(h, w, cy, cx, radius)
        # irregular boundary: modulate the radius with angular noise
        yy, xx = np.mgrid[0:h, 0:w]
        angle = np.arctan2(yy - cy, xx - cx)
        lobes = rng.integers(3, 6)
        wobble = 1.0 + 0.35 * np.sin(lobes * angle + rng.uniform(0, 2 * np.pi))
        weight = np.clip(1.5 - d / wobble, 0.0, 1.0)
        factor = 1.0 - BLOB_MAX_DARKENING * magnitude * weight
        return pixels * factor[..., None]

    # droplet: bright refractive interior, darkened rim
    cy = rng.uniform(0.3 * h, 0.7 * h)
    cx = rng.uniform(0.3 * w, 0.7 * w)
    radius = rng.uniform(0.15, 0.28) * min(h, w)
    d = _soft_disk(h, w, cy, cx, radius)
    interior = np.clip(1.0 - d, 0.0, 1.0) ** 2
    rim = np.clip(1.0 - np.abs(d - 1.0) / 0.25, 0.0, 1.0)
    out = pixels * (1.0 - DROPLET_RING_DARKENING * magnitude * rim)[..., None]
    out = out + (DROPLET_INTERIOR_LIFT * magnitude * interior)[..., None]
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------
# heatmaps
# ---------------------------------------------------------------------


def jet(x: np.ndarray) -> np.ndarray:
    """Piecewise-linear blue->cyan->green->yellow->red ramp over [0,1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def render_heatmap(cmap: ConfidenceMap, base=None, alpha: float = 0.5) -> Heatmap:
    """Jet(1 - c_all); low confidence shows red, high shows blue."""
    heat = jet(1.0 - cmap.c_all)
    if base is not None:
        pixels = _tile_pixels(base)
        if pixels.shape[:2] != heat.shape[:2]:
            raise ShapeError(
                f"base {pixels.shape[:2]} does not match map {heat.shape[:2]}"
            )
        heat = (1.0 - alpha) * pixels + alpha * heat
    return Heatmap(rgb=heat)
