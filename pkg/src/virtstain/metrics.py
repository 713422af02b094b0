"""Slide-level quantitative evaluation.

All three metrics are restricted to tissue foreground: MSE over
foreground pixels, PSNR derived from that MSE, and SSIM averaged over
local windows centered on foreground. The foreground plane comes from
the H&E source slide, never from the compared pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import luminance
from .errors import DomainError, RangeError, ShapeError
from .resample import nearest_resize
from .wsi import FOREGROUND_LEVEL, ForegroundMask, WsiImage, foreground_mask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0
PSNR_CAP_DB = 100.0
PSNR_CAP_MSE = 1e-10


@dataclass(frozen=True)
class EvalReport:
    mse_raw: float
    mse_scaled: float  # in units of 1e-2, the conventional reporting scale
    psnr_db: float
    ssim_percent: float
    foreground_pixels: int
    height: int
    width: int


def _plane_of(x) -> np.ndarray:
    if isinstance(x, WsiImage):
        return x.levels[0]
    return np.asarray(x, dtype=np.float64)


def _fg_plane(fg, shape: tuple[int, int]) -> np.ndarray:
    plane = fg.plane if isinstance(fg, ForegroundMask) else np.asarray(fg, dtype=np.float64)
    if plane.shape != shape:
        plane = nearest_resize(plane, shape)
    return plane > 0.5


def mse_foreground(pred, truth, fg) -> float:
    """Mean squared error over foreground pixels, averaged over channels."""
    p, t = _plane_of(pred), _plane_of(truth)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} vs truth {t.shape}")
    sel = _fg_plane(fg, p.shape[:2])
    n = int(sel.sum())
    if n == 0:
        raise DomainError("foreground mask selects no pixels")
    d = (p - t)[sel]
    return float(np.mean(d * d))


def psnr(mse_raw: float) -> float:
    """10*log10(1/mse) for unit-range pixels, capped for perfect pairs."""
    if mse_raw < 0:
        raise RangeError(f"mse must be non-negative, got {mse_raw}")
    if mse_raw < PSNR_CAP_MSE:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse_raw))


def _gaussian_window() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with the 1-D window g."""
    v = np.lib.stride_tricks.sliding_window_view(plane, len(g), axis=0)
    v = np.tensordot(v, g, axes=([2], [0]))
    v = np.lib.stride_tricks.sliding_window_view(v, len(g), axis=1)
    return np.tensordot(v, g, axes=([2], [0]))


def _to_luma(x: np.ndarray) -> np.ndarray:
    return luminance(x) if x.ndim == 3 else x


def ssim(pred, truth, fg=None) -> float:
    """Mean local SSIM on luminance, in percent.

    Windows are the standard 11x11 Gaussian (sigma 1.5) at valid
    positions only; with ``fg`` the mean runs over windows whose center
    pixel is foreground.
    """
    p = _to_luma(_plane_of(pred))
    t = _to_luma(_plane_of(truth))
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} vs truth {t.shape}")
    if p.shape[0] < SSIM_WINDOW or p.shape[1] < SSIM_WINDOW:
        raise DomainError(
            f"raster {p.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    g = _gaussian_window()
    mu1 = _filter_valid(p, g)
    mu2 = _filter_valid(t, g)
    s11 = _filter_valid(p * p, g) - mu1 * mu1
    s22 = _filter_valid(t * t, g) - mu2 * mu2
    s12 = _filter_valid(p * t, g) - mu1 * mu2
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    smap = ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    )
    if fg is None:
        return float(np.mean(smap)) * 100.0
    half = (SSIM_WINDOW - 1) // 2
    centers = _fg_plane(fg, p.shape)[half : half + smap.shape[0], half : half + smap.shape[1]]
    if not centers.any():
        raise DomainError("no foreground window centers inside the valid region")
    return float(np.mean(smap[centers])) * 100.0


def evaluate_wsi(pred, truth, he_source: WsiImage) -> EvalReport:
    """Score one generated slide against its ground truth."""
    p, t = _plane_of(pred), _plane_of(truth)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} vs truth {t.shape}")
    he0 = he_source.levels[0]
    if he0.shape[:2] != p.shape[:2]:
        raise ShapeError(
            f"H&E source {he0.shape[:2]} does not align with prediction {p.shape[:2]}"
        )
    level = min(FOREGROUND_LEVEL, he_source.n_levels - 1)
    fg = foreground_mask(he_source, level=level)
    sel = _fg_plane(fg, p.shape[:2])
    mse_raw = mse_foreground(p, t, sel)
    return EvalReport(
        mse_raw=mse_raw,
        mse_scaled=mse_raw * 100.0,
        psnr_db=psnr(mse_raw),
        ssim_percent=ssim(p, t, sel),
        foreground_pixels=int(sel.sum()),
        height=p.shape[0],
        width=p.shape[1],
    )


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Mean and population std of each metric across slides."""
    if not reports:
        raise DomainError("nothing to aggregate")
    out = {}
    for field in ("mse_raw", "mse_scaled", "psnr_db", "ssim_percent"):
        vals = np.array([getattr(r, field) for r in reports])
        out[field] = {"mean": float(vals.mean()), "std": float(vals.std())}
    out["slides"] = len(reports)
    return out
