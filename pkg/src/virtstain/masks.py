"""Stain activation masks and the dynamic weights derived from them.

A stain's activated regions are found by thresholding the tile in HSV
space against a per-stain band. From a binary mask M with N activated
pixels and N̄ complement pixels the pair

    alpha = N̄ / (N + N̄)      beta = N / (N + N̄)

rebalances loss terms so sparse activations are not drowned out: alpha
scales the activated-region term, beta the complement term, and
alpha * N == beta * N̄ by construction.

Degraded views (luminance + blur, optional downsampling) of images and
masks live here too; they feed the morphology-preservation loss branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import autograd as ag
from .color import LUMA_WEIGHTS, rgb_to_hsv
from .errors import ConfigurationError, ContractError, ShapeError
from .resample import nearest_resize


@dataclass(frozen=True)
class StainConfig:
    """HSV band selecting a stain's activated (e.g. DAB-positive) pixels.

    Hue is in degrees; a band with hue_lo > hue_hi wraps through 0/360.
    All bounds are inclusive.
    """

    stain_id: str
    hue_lo: float
    hue_hi: float
    sat_min: float = 0.0
    sat_max: float = 1.0
    val_min: float = 0.0
    val_max: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.hue_lo < 360.0 and 0.0 <= self.hue_hi < 360.0):
            raise ConfigurationError(
                f"{self.stain_id}: hue bounds must lie in [0, 360)"
            )
        for lo, hi, name in (
            (self.sat_min, self.sat_max, "saturation"),
            (self.val_min, self.val_max, "value"),
        ):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ConfigurationError(
                    f"{self.stain_id}: {name} range [{lo}, {hi}] invalid"
                )


@dataclass
class ActivationMask:
    plane: np.ndarray  # (H, W) float64 of exactly {0.0, 1.0}
    stain_id: str
    coverage: float  # activated fraction of the raster


@dataclass(frozen=True)
class MaskWeights:
    alpha: float  # complement fraction, scales the activated-region term
    beta: float  # activated fraction, scales the complement term
    n_activated: int
    n_complement: int


@dataclass(frozen=True)
class DegradeSpec:
    """Luminance projection followed by Gaussian blur, optional downsample."""

    blur_sigma: float = 3.0
    downsample: int = 1

    def __post_init__(self):
        if self.blur_sigma < 0 or self.downsample < 1:
            raise ConfigurationError(
                f"invalid degrade parameters: sigma={self.blur_sigma}, "
                f"downsample={self.downsample}"
            )


def extract_activation_mask(pixels: np.ndarray, config: StainConfig) -> ActivationMask:
    """Threshold a tile against the stain's HSV band."""
    hsv = rgb_to_hsv(pixels)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    if config.hue_lo <= config.hue_hi:
        in_hue = (h >= config.hue_lo) & (h <= config.hue_hi)
    else:
        in_hue = (h >= config.hue_lo) | (h <= config.hue_hi)
    plane = (
        in_hue
        & (s >= config.sat_min)
        & (s <= config.sat_max)
        & (v >= config.val_min)
        & (v <= config.val_max)
    ).astype(np.float64)
    return ActivationMask(plane, config.stain_id, float(plane.mean()))


def _plane(mask) -> np.ndarray:
    arr = mask.plane if isinstance(mask, ActivationMask) else np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"mask plane must be 2-D, got shape {arr.shape}")
    return arr.astype(np.float64)


def complement(mask) -> np.ndarray:
    return 1.0 - _plane(mask)


def compute_mask_weights(mask) -> MaskWeights:
    plane = _plane(mask)
    total = plane.size
    if total == 0:
        raise ContractError("cannot weight an empty mask")
    n_act = int(round(float(plane.sum())))
    n_bg = total - n_act
    return MaskWeights(
        alpha=n_bg / total,
        beta=n_act / total,
        n_activated=n_act,
        n_complement=n_bg,
    )


def resize_mask(mask, shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resize; the output is still exactly binary."""
    return nearest_resize(_plane(mask), shape)


def apply_mask(raster, mask):
    """Multiply a raster by a mask plane, broadcasting over channels.

    Accepts tape tensors or plain arrays for the raster; the mask is
    always a constant.
    """
    plane = _plane(mask)
    r_shape = raster.shape
    if len(r_shape) == 3:
        if r_shape[:2] != plane.shape:
            raise ShapeError(
                f"mask {plane.shape} does not match raster {r_shape}"
            )
        plane = plane[:, :, None]
    elif r_shape != plane.shape:
        raise ShapeError(f"mask {plane.shape} does not match raster {r_shape}")
    rv = raster.data if isinstance(raster, ag.Tensor) else np.asarray(raster)
    # {0,1} is exact in either precision; matching dtype avoids upcasts
    plane = plane.astype(rv.dtype, copy=False)
    if isinstance(raster, ag.Tensor):
        return ag.mul(raster, plane)
    return rv * plane


def _blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return arr.astype(np.float64, copy=True)
    k = ag.gaussian_kernel1d(sigma)
    out = correlate1d(arr.astype(np.float64), k, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, k, axis=1, mode="constant", cval=0.0)


def degrade_image(image, spec: DegradeSpec = DegradeSpec()):
    """Luminance plane, blurred and optionally downsampled.

    Returns an (h, w, 1) raster. Differentiable when handed a tape tensor.
    """
    if isinstance(image, ag.Tensor):
        lw = LUMA_WEIGHTS.reshape(3, 1).astype(image.data.dtype, copy=False)
        lum = ag.channel_mix(image, lw)
        if spec.blur_sigma > 0:
            lum = ag.blur_same(lum, ag.gaussian_kernel1d(spec.blur_sigma))
        if spec.downsample > 1:
            lum = ag.avg_pool(lum, spec.downsample)
        return lum
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"degrade_image expects (H, W, 3), got {image.shape}")
    lum = (image @ LUMA_WEIGHTS)[:, :, None]
    lum = _blur(lum, spec.blur_sigma)
    if spec.downsample > 1:
        f = spec.downsample
        h, w = lum.shape[:2]
        if h % f or w % f:
            raise ShapeError(f"dims {h}x{w} not divisible by downsample {f}")
        lum = lum.reshape(h // f, f, w // f, f, 1).mean(axis=(1, 3))
    return lum


def degrade_mask(mask, spec: DegradeSpec = DegradeSpec()) -> np.ndarray:
    """Blur + downsample a mask, then re-threshold at 0.5 to stay binary."""
    plane = _blur(_plane(mask), spec.blur_sigma)
    if spec.downsample > 1:
        f = spec.downsample
        h, w = plane.shape
        if h % f or w % f:
            raise ShapeError(f"dims {h}x{w} not divisible by downsample {f}")
        plane = plane.reshape(h // f, f, w // f, f).mean(axis=(1, 3))
    return (plane >= 0.5).astype(np.float64)
