"""Synthetic paired H&E / IHC tiles with known ground truth.

A smooth scalar field F drives everything: pixels with F above a cut
are tissue, rendered along a purple-to-pink ramp (deep tissue purple,
shallow pink), with the deepest cores left white as gland lumina. Each
IHC stain is a mild affine color transform of the *rendered* H&E
pixels, so a least-squares fit of (A, b) against non-activated pixels
recovers the generating transform with zero residual. Activated
regions are a fixed per-stain depth band of F restricted to tissue;
inside the band the stain pixel is replaced by a warm marker color
while the transformed tissue stays in cool hues. Fixed bands keep
activation placement a deterministic function of the H&E appearance
(depth is readable from the ramp), so a translation model can in
principle learn it, and masks stay exactly recoverable by HSV
thresholding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, RangeError
from .masks import StainConfig

HE_PURPLE = (0.42, 0.28, 0.58)  # deepest tissue
HE_PINK = (0.86, 0.60, 0.72)  # shallowest tissue
HE_WHITE = (0.93, 0.91, 0.94)  # background
HE_LUMEN = (0.95, 0.94, 0.96)

TISSUE_CUT = 0.35  # F above this is tissue
LUMEN_CUT = 0.82  # F above this is a gland lumen
# Kept small: background + noise must stay below the saturation-0.07 /
# value-0.85 tissue rule, activation hues inside their HSV band.
TEXTURE_NOISE = 0.012

# Warm marker hues sit far from the cool hues the affine transforms
# map tissue into, so one shared HSV band suffices.
ACTIVATION_HUE_LO = 5.0
ACTIVATION_HUE_HI = 45.0
ACTIVATION_SAT_MIN = 0.12
ACTIVATION_VAL_LO = 0.30
ACTIVATION_VAL_HI = 0.85

MIN_TILE = 64
MAX_CONDITION = 100.0


@dataclass(frozen=True)
class SynthStainSpec:
    """Generating recipe for one synthetic IHC stain.

    color_matrix/color_bias define stain = A @ he + b outside activated
    regions; activation_color replaces the pixel inside them. band is
    the (lo, hi) slice of the depth field that activates; it must sit
    strictly inside the tissue range so every tile has both activated
    and plain tissue. The matrix must be comfortably invertible so the
    mapping is learnable.
    """

    stain_id: str
    color_matrix: tuple  # 3x3 row tuples
    color_bias: tuple
    activation_color: tuple
    band: tuple  # (lo, hi) in field units

    def __post_init__(self):
        a = np.asarray(self.color_matrix, dtype=np.float64)
        if a.shape != (3, 3):
            raise ConfigurationError(
                f"{self.stain_id}: color matrix must be 3x3, got {a.shape}"
            )
        cond = float(np.linalg.cond(a))
        if not np.isfinite(cond) or cond >= MAX_CONDITION:
            raise ConfigurationError(
                f"{self.stain_id}: color matrix condition {cond:.1f} "
                f"not below {MAX_CONDITION}"
            )
        if len(self.color_bias) != 3 or len(self.activation_color) != 3:
            raise ConfigurationError(
                f"{self.stain_id}: bias and activation color must be RGB triples"
            )
        if not all(0.0 <= c <= 1.0 for c in self.activation_color):
            raise ConfigurationError(
                f"{self.stain_id}: activation color outside [0, 1]"
            )
        lo, hi = self.band
        if not (TISSUE_CUT < lo < hi <= LUMEN_CUT):
            raise ConfigurationError(
                f"{self.stain_id}: band {self.band} must sit inside "
                f"({TISSUE_CUT}, {LUMEN_CUT}]"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.color_matrix, dtype=np.float64)

    @property
    def bias(self) -> np.ndarray:
        return np.asarray(self.color_bias, dtype=np.float64)


def stain_band(spec: SynthStainSpec) -> StainConfig:
    """HSV band that recovers the stain's activated pixels."""
    return StainConfig(
        stain_id=spec.stain_id,
        hue_lo=ACTIVATION_HUE_LO,
        hue_hi=ACTIVATION_HUE_HI,
        sat_min=ACTIVATION_SAT_MIN,
        val_min=ACTIVATION_VAL_LO,
        val_max=ACTIVATION_VAL_HI,
    )


def default_stain_specs() -> tuple:
    """Three luminance-preserving palettes with disjoint activation bands.

    Each transform satisfies wT A = wT and w . b = 0 for the Rec.601
    luma weights, so the stain rendering keeps every pixel's luminance
    and only tilts chroma; markers match the luminance of their band.
    A brightness anchor between domains is then exactly consistent with
    the ground truth, and a discriminator gains nothing from brightness
    statistics. Each stain activates its own depth stratum so per-stain
    masks differ on a shared slide.
    """
    return (
        SynthStainSpec(
            stain_id="cd3",
            color_matrix=(
                (0.5792, 0.3643, -0.0699),
                (0.1542, 0.9842, -0.0472),
                (0.3099, -0.8740, 1.4266),
            ),
            color_bias=(0.1216, -0.0823, 0.1049),
            activation_color=(0.6900, 0.5247, 0.3800),
            band=(0.532, 0.548),
        ),
        SynthStainSpec(
            stain_id="cd8",
            color_matrix=(
                (1.1543, -0.2521, 0.0101),
                (-0.1012, 1.2724, -0.0951),
                (0.1164, -0.7416, 1.4633),
            ),
            color_bias=(0.0815, -0.0655, 0.1236),
            activation_color=(0.6700, 0.4800, 0.3700),
            band=(0.578, 0.594),
        ),
        SynthStainSpec(
            stain_id="panck",
            color_matrix=(
                (1.1330, -0.3581, 0.1571),
                (-0.0929, 1.1140, 0.0218),
                (0.1297, 0.3523, 0.4757),
            ),
            color_bias=(0.0695, -0.0465, 0.0572),
            activation_color=(0.7150, 0.5688, 0.3900),
            band=(0.482, 0.498),
        ),
    )


def _lattice_octave(rng: np.random.Generator, cells: int, shape: tuple) -> np.ndarray:
    """One value-noise octave: random lattice, bilinear upsample."""
    h, w = shape
    grid = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1))
    fy = np.linspace(0.0, cells, h)
    fx = np.linspace(0.0, cells, w)
    iy = np.minimum(fy.astype(int), cells - 1)
    ix = np.minimum(fx.astype(int), cells - 1)
    ty = (fy - iy)[:, None]
    tx = (fx - ix)[None, :]
    g00 = grid[np.ix_(iy, ix)]
    g01 = grid[np.ix_(iy, ix + 1)]
    g10 = grid[np.ix_(iy + 1, ix)]
    g11 = grid[np.ix_(iy + 1, ix + 1)]
    top = g00 * (1.0 - tx) + g01 * tx
    bot = g10 * (1.0 - tx) + g11 * tx
    return top * (1.0 - ty) + bot * ty


def value_noise(
    shape: tuple,
    rng: np.random.Generator,
    octaves: int = 3,
    base_cells: int = 4,
    persistence: float = 0.55,
) -> np.ndarray:
    """Multi-octave value noise in [0, 1], smooth and blobby."""
    if octaves < 1 or base_cells < 1:
        raise ConfigurationError(
            f"need octaves >= 1 and base_cells >= 1, got {octaves}, {base_cells}"
        )
    out = np.zeros(shape, dtype=np.float64)
    total = 0.0
    amp = 1.0
    cells = base_cells
    for _ in range(octaves):
        out += amp * _lattice_octave(rng, cells, shape)
        total += amp
        amp *= persistence
        cells *= 2
    out /= total
    lo, hi = out.min(), out.max()
    if hi > lo:
        out = (out - lo) / (hi - lo)
    return out


def render_he(field: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Render the scalar field into an H&E-colored tile."""
    tissue = field > TISSUE_CUT
    lumen = field > LUMEN_CUT
    depth = np.clip((field - TISSUE_CUT) / (LUMEN_CUT - TISSUE_CUT), 0.0, 1.0)
    purple = np.asarray(HE_PURPLE)
    pink = np.asarray(HE_PINK)
    ramp = pink[None, None, :] + (purple - pink)[None, None, :] * depth[..., None]
    he = np.where(tissue[..., None], ramp, np.asarray(HE_WHITE)[None, None, :])
    he = np.where(lumen[..., None], np.asarray(HE_LUMEN)[None, None, :], he)
    he = he + rng.uniform(-TEXTURE_NOISE, TEXTURE_NOISE, size=he.shape)
    return np.clip(he, 0.0, 1.0)


def _activation_band(field: np.ndarray, spec: SynthStainSpec) -> np.ndarray:
    """Fixed depth slice of F over non-lumen tissue; returns a {0,1} plane."""
    body = (field > TISSUE_CUT) & (field <= LUMEN_CUT)
    lo, hi = spec.band
    return (body & (field >= lo) & (field < hi)).astype(np.float64)


def apply_color_map(spec: SynthStainSpec, he: np.ndarray) -> np.ndarray:
    """stain = A @ he + b, applied pixel-wise."""
    return np.einsum("ij,hwj->hwi", spec.matrix, he) + spec.bias


def _paint_stain(
    spec: SynthStainSpec,
    he: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    stain = apply_color_map(spec, he)
    marker = np.asarray(spec.activation_color)[None, None, :] + rng.uniform(
        -TEXTURE_NOISE, TEXTURE_NOISE, size=he.shape
    )
    stain = np.where(mask[..., None] > 0.5, marker, stain)
    return np.clip(stain, 0.0, 1.0)


@dataclass
class SynthPair:
    he: np.ndarray
    stain: np.ndarray
    mask: np.ndarray  # {0,1} activated plane, aligned with both tiles
    stain_id: str


@dataclass
class SynthSlide:
    he: np.ndarray
    stains: dict = field(default_factory=dict)  # stain_id -> image
    masks: dict = field(default_factory=dict)  # stain_id -> {0,1} plane


def generate_synth_pair(
    spec: SynthStainSpec, size: int = MIN_TILE, seed: int = 0
) -> SynthPair:
    """One aligned (H&E, stain, truth mask) triple. Deterministic in seed."""
    if size < MIN_TILE:
        raise RangeError(f"tile size {size} below minimum {MIN_TILE}")
    rng = np.random.default_rng(seed)
    field_ = value_noise((size, size), rng)
    mask = _activation_band(field_, spec)
    he = render_he(field_, rng)
    stain = _paint_stain(spec, he, mask, rng)
    return SynthPair(he=he, stain=stain, mask=mask, stain_id=spec.stain_id)


def generate_synth_slide(
    specs, shape: tuple = (1000, 600), seed: int = 0
) -> SynthSlide:
    """One H&E canvas plus an aligned rendering per stain.

    shape is (width, height) to match slide geometry conventions.
    """
    w, h = shape
    if min(w, h) < MIN_TILE:
        raise RangeError(f"slide shape {shape} below minimum {MIN_TILE}")
    rng = np.random.default_rng(seed)
    field_ = value_noise((h, w), rng)
    he = render_he(field_, rng)
    slide = SynthSlide(he=he)
    for spec in specs:
        mask = _activation_band(field_, spec)
        slide.stains[spec.stain_id] = _paint_stain(spec, he, mask, rng)
        slide.masks[spec.stain_id] = mask
    return slide


def fit_affine_color_map(he_pixels: np.ndarray, stain_pixels: np.ndarray):
    """Least-squares (A, b) with stain ~ A @ he + b; returns residual MSE.

    Feasibility oracle: fitting against non-activated pixels recovers
    the generating transform, and the residual on all foreground pixels
    bounds what any pixel-wise model can be asked to achieve.
    """
    he_flat = np.asarray(he_pixels, dtype=np.float64).reshape(-1, 3)
    st_flat = np.asarray(stain_pixels, dtype=np.float64).reshape(-1, 3)
    if he_flat.shape[0] != st_flat.shape[0]:
        raise ConfigurationError(
            f"pixel counts differ: {he_flat.shape[0]} vs {st_flat.shape[0]}"
        )
    design = np.concatenate([he_flat, np.ones((he_flat.shape[0], 1))], axis=1)
    coef, *_ = np.linalg.lstsq(design, st_flat, rcond=None)
    a = coef[:3].T
    b = coef[3]
    residual = design @ coef - st_flat
    return a, b, float(np.mean(residual**2))
