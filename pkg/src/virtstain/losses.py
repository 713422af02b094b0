"""Loss kernels for stain translation training.

Every kernel is a pure function over rasters. Reconstruction-type terms
(cycle, supervised, identity, latent, forward) use mean absolute error;
adversarial and discriminator terms compare patch scores to a constant
target with mean squared error. Masked variants multiply the operands by
a binary activation mask but still divide by the full raster size, so a
masked term is bounded by its unmasked counterpart.

The dynamic pair (alpha, beta) from ``masks.compute_mask_weights`` scales
the activated-region and complement-region terms respectively. Note the
adversarial compositions are intentionally asymmetric between the two
cycle directions; ``symmetrize=True`` adds the missing plain terms.

Kernels accept plain numpy arrays (returning floats) or tape tensors
(returning differentiable scalars), so the training loop and the test
oracles exercise identical code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import autograd as ag
from .errors import ContractError, ShapeError
from .masks import DegradeSpec, MaskWeights, apply_mask, complement, degrade_image, degrade_mask


@dataclass(frozen=True)
class LossWeights:
    """Scale factors for the loss family.

    lambda_reg is derived: it switches to 1 as soon as any regularizer
    weight is nonzero. supervised_weight only matters in paired mode.
    """

    lambda_cyc: float = 10.0
    lambda_adv: float = 1.0
    lambda_dis: float = 0.5
    lambda_idt: float = 0.0
    lambda_lat: float = 0.0
    lambda_fwd: float = 0.0
    supervised_weight: float = 1.0
    symmetrize_adv: bool = False

    @property
    def lambda_reg(self) -> float:
        active = self.lambda_idt != 0.0 or self.lambda_lat != 0.0 or self.lambda_fwd != 0.0
        return 1.0 if active else 0.0


@dataclass
class CyclePack:
    """Everything produced by running both cycles for one stain.

    The dual cycle: the source H&E tile is encoded and decoded into the
    stain domain (y_hat_i), then mapped back (x_hat_he); independently a
    real stain tile is mapped to H&E (y_hat_he) and back (x_hat_i).
    Latents are recorded on both the first encoding (z) and re-encoding
    (z_hat) of each branch.
    """

    x_he: Any
    x_i: Any
    y_hat_i: Any
    y_hat_he: Any
    x_hat_he: Any
    x_hat_i: Any
    z_he: Any = None
    z_hat_he: Any = None
    z_i: Any = None
    z_hat_i: Any = None
    mask: np.ndarray | None = None  # activation plane at image dims
    weights: MaskWeights | None = None
    latent_mask: np.ndarray | None = None  # mask resized to latent dims

    def require_mask(self) -> tuple[np.ndarray, MaskWeights]:
        if self.mask is None or self.weights is None:
            raise ContractError("this loss needs the pack's mask and weights")
        return self.mask, self.weights


def _shape_of(x) -> tuple[int, ...]:
    return x.shape if hasattr(x, "shape") else ()


def _is_tape(*xs) -> bool:
    return any(isinstance(x, ag.Tensor) for x in xs)


def base_distance(a, b, mask=None, metric: str = "mae"):
    """Mean |a-b| (or squared difference) over the full raster.

    With a mask, both operands are multiplied by it first; the mean still
    runs over every element, masked-out ones contributing zero.
    """
    sa, sb = _shape_of(a), _shape_of(b)
    if sa != sb:
        raise ShapeError(f"operand shapes differ: {sa} vs {sb}")
    if metric not in ("mae", "mse"):
        raise ContractError(f"unknown metric {metric!r}")
    if mask is not None:
        a = apply_mask(a, mask)
        b = apply_mask(b, mask)
    if _is_tape(a, b):
        d = ag.add(a, ag.neg(b))
        return ag.mean(ag.habs(d)) if metric == "mae" else ag.mean(ag.square(d))
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(np.abs(d))) if metric == "mae" else float(np.mean(d * d))


def score_distance(scores, target: float, mask=None):
    """Mean squared difference between (optionally masked) patch scores
    and a constant target. The mask multiplies the scores only, so fully
    masked-out regions are still compared against the target."""
    if mask is not None:
        scores = apply_mask(scores, mask)
    if _is_tape(scores):
        return ag.mean(ag.square(ag.add(scores, -float(target))))
    d = np.asarray(scores, dtype=np.float64) - float(target)
    return float(np.mean(d * d))


def _ws(*pairs):
    """Weighted sum of scalar terms, staying on the tape when present."""
    terms = [(w, t) for w, t in pairs if w != 0.0]
    if not terms:
        return 0.0
    if _is_tape(*(t for _, t in terms)):
        acc = None
        for w, t in terms:
            wt = ag.mul(t, float(w)) if isinstance(t, ag.Tensor) else float(w) * t
            acc = wt if acc is None else ag.add(acc, wt)
        return acc
    return float(sum(w * t for w, t in terms))


# ---------------------------------------------------------------------
# cycle consistency
# ---------------------------------------------------------------------


def cycle_loss_unpaired(pack: CyclePack):
    """Reconstruction error of both cycles; the stain-side reconstruction
    additionally gets activated/complement terms weighted by alpha/beta."""
    mask, w = pack.require_mask()
    return _ws(
        (1.0, base_distance(pack.x_hat_i, pack.x_i)),
        (1.0, base_distance(pack.x_hat_he, pack.x_he)),
        (w.alpha, base_distance(pack.x_hat_i, pack.x_i, mask)),
        (w.beta, base_distance(pack.x_hat_i, pack.x_i, complement(mask))),
    )


def cycle_loss_paired(pack: CyclePack):
    """Paired variant: the masked terms cover both reconstructions."""
    mask, w = pack.require_mask()
    comp = complement(mask)
    return _ws(
        (1.0, base_distance(pack.x_hat_i, pack.x_i)),
        (1.0, base_distance(pack.x_hat_he, pack.x_he)),
        (w.alpha, base_distance(pack.x_hat_i, pack.x_i, mask)),
        (w.alpha, base_distance(pack.x_hat_he, pack.x_he, mask)),
        (w.beta, base_distance(pack.x_hat_i, pack.x_i, comp)),
        (w.beta, base_distance(pack.x_hat_he, pack.x_he, comp)),
    )


# ---------------------------------------------------------------------
# adversarial (generator side)
# ---------------------------------------------------------------------


def adversarial_loss_unpaired(
    d_i_scores,
    d_he_scores,
    mask,
    weights: MaskWeights,
    symmetrize: bool = False,
):
    """Generator adversarial objective, unpaired form.

    The stain discriminator judges the full synthetic stain tile; the
    H&E discriminator's verdict enters only through the masked terms.
    ``mask`` must already be at score-raster dims.
    """
    terms = [
        (1.0, score_distance(d_i_scores, 1.0)),
        (weights.alpha, score_distance(d_he_scores, 1.0, mask)),
        (weights.beta, score_distance(d_he_scores, 1.0, complement(mask))),
    ]
    if symmetrize:
        terms.append((1.0, score_distance(d_he_scores, 1.0)))
    return _ws(*terms)


def adversarial_loss_paired(
    d_i_scores,
    d_he_scores,
    mask,
    weights: MaskWeights,
    symmetrize: bool = False,
):
    """Paired form: the plain term swaps to the H&E discriminator and the
    masked terms cover both discriminators."""
    comp = complement(mask)
    terms = [
        (1.0, score_distance(d_he_scores, 1.0)),
        (weights.alpha, score_distance(d_he_scores, 1.0, mask)),
        (weights.alpha, score_distance(d_i_scores, 1.0, mask)),
        (weights.beta, score_distance(d_he_scores, 1.0, comp)),
        (weights.beta, score_distance(d_i_scores, 1.0, comp)),
    ]
    if symmetrize:
        terms.append((1.0, score_distance(d_i_scores, 1.0)))
    return _ws(*terms)


# ---------------------------------------------------------------------
# supervised (paired data only)
# ---------------------------------------------------------------------


def supervised_loss(pack: CyclePack):
    mask, w = pack.require_mask()
    comp = complement(mask)
    return _ws(
        (1.0, base_distance(pack.y_hat_i, pack.x_i)),
        (1.0, base_distance(pack.y_hat_he, pack.x_he)),
        (w.alpha, base_distance(pack.y_hat_i, pack.x_i, mask)),
        (w.alpha, base_distance(pack.y_hat_he, pack.x_he, mask)),
        (w.beta, base_distance(pack.y_hat_i, pack.x_i, comp)),
        (w.beta, base_distance(pack.y_hat_he, pack.x_he, comp)),
    )


# ---------------------------------------------------------------------
# discriminators
# ---------------------------------------------------------------------


def discriminator_loss_stain(
    d_real,
    d_synth,
    mask,
    weights: MaskWeights,
    lambda_dis: float = 0.5,
):
    """Stain discriminator: real tiles toward 1 (with mask-weighted
    emphasis), synthetic tiles toward 0, all scaled by lambda_dis."""
    inner = _ws(
        (1.0, score_distance(d_real, 1.0)),
        (weights.alpha, score_distance(d_real, 1.0, mask)),
        (weights.beta, score_distance(d_real, 1.0, complement(mask))),
        (1.0, score_distance(d_synth, 0.0)),
    )
    return _ws((lambda_dis, inner))


def discriminator_loss_he(d_real, d_synth, lambda_dis: float = 0.5):
    """H&E discriminator: plain real-vs-synthetic, no mask terms."""
    inner = _ws(
        (1.0, score_distance(d_real, 1.0)),
        (1.0, score_distance(d_synth, 0.0)),
    )
    return _ws((lambda_dis, inner))


# ---------------------------------------------------------------------
# regularizers
# ---------------------------------------------------------------------


def _branch_terms(a, b, mask, weights):
    if (mask is None) != (weights is None):
        raise ContractError("mask and weights must be provided together")
    if mask is None:
        return [(1.0, base_distance(a, b))]
    return [
        (1.0, base_distance(a, b)),
        (weights.alpha, base_distance(a, b, mask)),
        (weights.beta, base_distance(a, b, complement(mask))),
    ]


def identity_loss(x, g_of_e_x, mask=None, weights=None):
    """Same-domain autoencoding: G(E(x)) should give back x. The stain
    branch passes its mask; the H&E branch passes none."""
    return _ws(*_branch_terms(g_of_e_x, x, mask, weights))


def latent_loss(z, z_hat, mask=None, weights=None):
    """Align the re-encoded latent with the first encoding. Mask (when
    given) must already be at latent dims."""
    return _ws(*_branch_terms(z_hat, z, mask, weights))


def forward_loss(
    x_src,
    y_hat_cross,
    mask=None,
    weights=None,
    degrade: DegradeSpec = DegradeSpec(),
):
    """Morphology preservation under degradation.

    Both the cross-domain generation and its source are reduced to
    blurred luminance before comparison, so only structure is judged.
    The mask is degraded with the same spec (and re-thresholded).
    """
    a = degrade_image(y_hat_cross, degrade)
    b = degrade_image(x_src, degrade)
    dmask = None if mask is None else degrade_mask(mask, degrade)
    return _ws(*_branch_terms(a, b, dmask, weights))


def regularizer_loss(idt, lat, fwd, weights: LossWeights):
    return _ws(
        (weights.lambda_idt, idt),
        (weights.lambda_lat, lat),
        (weights.lambda_fwd, fwd),
    )


# ---------------------------------------------------------------------
# totals
# ---------------------------------------------------------------------


def synthesis_loss(cyc, adv, reg, weights: LossWeights, sup=None):
    """Per-stain total: weighted cycle + adversarial + regularizer, plus
    the supervised term when paired data is available."""
    terms = [
        (weights.lambda_cyc, cyc),
        (weights.lambda_adv, adv),
        (weights.lambda_reg, reg),
    ]
    if sup is not None:
        terms.append((weights.supervised_weight, sup))
    return _ws(*terms)


def he_regularization_loss(ihc_losses: Sequence):
    """Mean of the per-stain totals; drives the shared H&E components."""
    if len(ihc_losses) == 0:
        raise ContractError("need at least one per-stain loss")
    total = _ws(*((1.0, t) for t in ihc_losses))
    if isinstance(total, ag.Tensor):
        return ag.mul(total, 1.0 / len(ihc_losses))
    return total / len(ihc_losses)
