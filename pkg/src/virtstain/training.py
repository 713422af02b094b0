"""Training protocol for the unified multi-stain bank.

One bank holds an H&E triple plus one triple per stain. Each training
iteration visits the stains in (by default) random order; a stain's step
runs both translation cycles, updates the four generator-side components
with the per-stain objective, then updates the two discriminators. After
the pass over all stains, the mean of the recorded per-stain totals
drives one extra update through the shared H&E encoder/generator only.
Gradients for that step are the ones recorded during the per-stain
passes (evaluated at the parameters current at record time), averaged.

All randomness flows from one seeded generator, so runs are bit
reproducible on a single worker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from . import losses as L
from .errors import ConfigurationError, ContractError, DomainError, StateError
from .masks import (
    DegradeSpec,
    MaskWeights,
    StainConfig,
    compute_mask_weights,
    extract_activation_mask,
    resize_mask,
)
from .models import (
    ArchSpec,
    ModelTriple,
    collect_grads,
    flat_params,
    make_triple,
    params_checksum,
    set_flat_params,
    zero_grads,
)

HE_DOMAIN = "he"


# ---------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter group."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_size(cls, n: int, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        return cls(m=np.zeros(n), v=np.zeros(n), t=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter vector."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractError(
            f"adam_step size mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}"
        )
    if not np.isfinite(grads).all():
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise StateError(
            f"non-finite gradients ({bad} of {grads.size} entries) at step {state.t + 1}"
        )
    state.t += 1
    # Moments are held in float64 regardless of parameter precision;
    # the update is cast back so parameter dtype never drifts.
    g64 = grads.astype(np.float64, copy=False)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g64
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g64 * g64
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    step = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return (params.astype(np.float64, copy=False) - step).astype(params.dtype, copy=False)


# ---------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 6
    base_lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    fixed_epochs: int = 500
    decay_epochs: int = 500
    iterations_per_epoch: int = 728
    paired: bool = False
    masked: bool = True  # False disables the alpha/beta emphasis terms
    he_reg_period: int = 1  # apply the shared-component step every N iterations
    stain_order: str = "random"  # or "fixed"
    seed: int = 0
    loss_weights: L.LossWeights = field(default_factory=L.LossWeights)
    degrade: DegradeSpec = field(default_factory=DegradeSpec)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.he_reg_period < 1:
            raise ConfigurationError("he_reg_period must be >= 1")
        if self.stain_order not in ("random", "fixed"):
            raise ConfigurationError(f"unknown stain_order {self.stain_order!r}")
        if self.fixed_epochs < 0 or self.decay_epochs < 1:
            raise ConfigurationError("need fixed_epochs >= 0 and decay_epochs >= 1")


def lr_at(config: TrainingConfig, epoch: int) -> float:
    """Constant for the fixed phase, then linear decay reaching zero one
    epoch past the last decay epoch."""
    if epoch < 0:
        raise ConfigurationError(f"epoch must be non-negative, got {epoch}")
    if epoch < config.fixed_epochs:
        return config.base_lr
    factor = 1.0 - (epoch - config.fixed_epochs) / config.decay_epochs
    return config.base_lr * max(0.0, factor)


# ---------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------


@dataclass
class StainDataset:
    """Tiles for one stain. In paired mode the two lists are aligned."""

    he_tiles: list
    stain_tiles: list

    def __post_init__(self):
        if not self.he_tiles or not self.stain_tiles:
            raise ContractError("dataset needs at least one tile on each side")


@dataclass
class LossReport:
    """One optimizer phase, serializable as a JSON line."""

    iteration: int
    kind: str  # "stain" or "he_reg"
    stain_id: str | None
    lr: float
    total: float
    cyc: float = 0.0
    adv: float = 0.0
    sup: float = 0.0
    idt: float = 0.0
    lat: float = 0.0
    fwd: float = 0.0
    reg: float = 0.0
    disc_stain: float = 0.0
    disc_he: float = 0.0
    components: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class ModelBank:
    """The S+1 model triples plus everything needed to rebuild them."""

    arch: ArchSpec
    stains: list[StainConfig]
    triples: dict[str, ModelTriple]

    @property
    def stain_ids(self) -> list[str]:
        return [s.stain_id for s in self.stains]

    def triple(self, domain: str) -> ModelTriple:
        if domain not in self.triples:
            raise DomainError(f"unknown domain {domain!r}")
        return self.triples[domain]


def make_bank(stains: list[StainConfig], arch: ArchSpec, seed: int) -> ModelBank:
    if not stains:
        raise ConfigurationError("need at least one stain")
    ids = [s.stain_id for s in stains]
    if len(set(ids)) != len(ids) or HE_DOMAIN in ids:
        raise ConfigurationError("stain ids must be unique and distinct from 'he'")
    rng = np.random.default_rng(seed)
    triples = {HE_DOMAIN: make_triple(HE_DOMAIN, arch, rng)}
    for s in stains:
        triples[s.stain_id] = make_triple(s.stain_id, arch, rng)
    return ModelBank(arch=arch, stains=list(stains), triples=triples)


def translate_tile(bank: ModelBank, stain_id: str, x_he: np.ndarray) -> np.ndarray:
    """Virtual staining of one H&E tile through the shared encoder."""
    z = bank.triple(HE_DOMAIN).encoder.forward(x_he)
    return bank.triple(stain_id).generator.forward(z)


# ---------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------


class Trainer:
    def __init__(
        self,
        bank: ModelBank,
        data: dict[str, StainDataset],
        config: TrainingConfig,
    ):
        missing = [s for s in bank.stain_ids if s not in data]
        if missing:
            raise ConfigurationError(f"no dataset for stains: {missing}")
        self.bank = bank
        self.data = data
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.iteration = 0
        # one optimizer state per component, shared by every objective
        # that touches the component
        self.adam: dict[tuple[str, str], AdamState] = {}
        for domain, triple in bank.triples.items():
            for comp_name, comp in (
                ("enc", triple.encoder),
                ("gen", triple.generator),
                ("disc", triple.discriminator),
            ):
                n = sum(p.data.size for p in comp.parameters())
                self.adam[(domain, comp_name)] = AdamState.for_size(
                    n, config.beta1, config.beta2, config.adam_eps
                )
        self._he_grad_enc = np.zeros_like(flat_params(bank.triples[HE_DOMAIN].encoder.parameters()))
        self._he_grad_gen = np.zeros_like(flat_params(bank.triples[HE_DOMAIN].generator.parameters()))
        self._he_loss_acc: list[float] = []
        # called as hook(kind, stain_id) after each optimizer phase
        self.phase_hook = None

    # -- internals ---------------------------------------------------

    @property
    def epoch(self) -> int:
        return self.iteration // self.config.iterations_per_epoch

    def current_lr(self) -> float:
        return lr_at(self.config, self.epoch)

    def _sample_pairs(self, stain_id: str) -> list[tuple[np.ndarray, np.ndarray]]:
        ds = self.data[stain_id]
        b = self.config.batch_size
        if self.config.paired:
            n = min(len(ds.he_tiles), len(ds.stain_tiles))
            idx = self.rng.integers(0, n, size=b)
            return [(ds.he_tiles[i], ds.stain_tiles[i]) for i in idx]
        ih = self.rng.integers(0, len(ds.he_tiles), size=b)
        ii = self.rng.integers(0, len(ds.stain_tiles), size=b)
        return [(ds.he_tiles[a], ds.stain_tiles[c]) for a, c in zip(ih, ii)]

    def _mask_for(self, stain: StainConfig, x_i: np.ndarray):
        # Mask dtype follows the tile so float32 banks stay float32
        # throughout the tape.
        mask = extract_activation_mask(x_i, stain).plane.astype(x_i.dtype, copy=False)
        if self.config.masked:
            return mask, compute_mask_weights(mask)
        n = int(mask.sum())
        return mask, MaskWeights(0.0, 0.0, n, mask.size - n)

    def _forward_pack(self, stain_id: str, x_he, x_i, mask, weights) -> L.CyclePack:
        he = self.bank.triples[HE_DOMAIN]
        st = self.bank.triples[stain_id]
        # source cycle: H&E -> stain -> H&E
        z_he = he.encoder.forward(x_he, use_tape=True)
        y_hat_i = st.generator.forward(z_he, use_tape=True)
        z_hat_he = st.encoder.forward(y_hat_i, use_tape=True)
        x_hat_he = he.generator.forward(z_hat_he, use_tape=True)
        # stain cycle: stain -> H&E -> stain
        z_i = st.encoder.forward(x_i, use_tape=True)
        y_hat_he = he.generator.forward(z_i, use_tape=True)
        z_hat_i = he.encoder.forward(y_hat_he, use_tape=True)
        x_hat_i = st.generator.forward(z_hat_i, use_tape=True)
        return L.CyclePack(
            x_he=x_he,
            x_i=x_i,
            y_hat_i=y_hat_i,
            y_hat_he=y_hat_he,
            x_hat_he=x_hat_he,
            x_hat_i=x_hat_i,
            z_he=z_he,
            z_hat_he=z_hat_he,
            z_i=z_i,
            z_hat_i=z_hat_i,
            mask=mask,
            weights=weights,
            latent_mask=resize_mask(mask, z_i.shape[:2]),
        )

    def _adv_terms(self, stain_id: str, pack: L.CyclePack):
        """Head-averaged generator adversarial loss for one pack."""
        he_d = self.bank.triples[HE_DOMAIN].discriminator
        st_d = self.bank.triples[stain_id].discriminator
        d_i = st_d.forward(pack.y_hat_i, use_tape=True)
        d_he = he_d.forward(pack.y_hat_he, use_tape=True)
        mask_small = resize_mask(pack.mask, d_i[0].shape)
        w = self.config.loss_weights
        kernel = (
            L.adversarial_loss_paired if self.config.paired else L.adversarial_loss_unpaired
        )
        per_head = [
            kernel(d_i[h], d_he[h], mask_small, pack.weights, w.symmetrize_adv)
            for h in (0, 1)
        ]
        return L._ws((0.5, per_head[0]), (0.5, per_head[1]))

    def _reg_terms(self, stain_id: str, pack: L.CyclePack):
        w = self.config.loss_weights
        if w.lambda_reg == 0.0:
            return 0.0, 0.0, 0.0, 0.0
        he = self.bank.triples[HE_DOMAIN]
        st = self.bank.triples[stain_id]
        idt = lat = fwd = 0.0
        if w.lambda_idt != 0.0:
            own_i = st.generator.forward(st.encoder.forward(pack.x_i, use_tape=True), use_tape=True)
            own_he = he.generator.forward(he.encoder.forward(pack.x_he, use_tape=True), use_tape=True)
            idt = L._ws(
                (1.0, L.identity_loss(pack.x_i, own_i, pack.mask, pack.weights)),
                (1.0, L.identity_loss(pack.x_he, own_he)),
            )
        if w.lambda_lat != 0.0:
            lat = L._ws(
                (1.0, L.latent_loss(pack.z_i, pack.z_hat_i, pack.latent_mask, pack.weights)),
                (1.0, L.latent_loss(pack.z_he, pack.z_hat_he)),
            )
        if w.lambda_fwd != 0.0:
            fwd = L._ws(
                (1.0, L.forward_loss(pack.x_i, pack.y_hat_he, pack.mask, pack.weights, self.config.degrade)),
                (1.0, L.forward_loss(pack.x_he, pack.y_hat_i, degrade=self.config.degrade)),
            )
        reg = L.regularizer_loss(idt, lat, fwd, w)
        return idt, lat, fwd, reg

    def _update_component(self, domain: str, comp_name: str, lr: float) -> None:
        triple = self.bank.triples[domain]
        comp = {"enc": triple.encoder, "gen": triple.generator, "disc": triple.discriminator}[comp_name]
        params = comp.parameters()
        state = self.adam[(domain, comp_name)]
        try:
            new = adam_step(state, flat_params(params), collect_grads(params), lr)
        except StateError as e:
            raise StateError(f"{domain}/{comp_name} iteration {self.iteration}: {e}") from e
        set_flat_params(params, new)

    def _all_params(self):
        out = []
        for t in self.bank.triples.values():
            out.extend(t.parameters())
        return out

    @staticmethod
    def _scalar(x) -> float:
        return x.item() if hasattr(x, "item") and not isinstance(x, float) else float(x)

    # -- one stain's optimizer phase ----------------------------------

    def _stain_step(self, stain: StainConfig, lr: float) -> LossReport:
        sid = stain.stain_id
        w = self.config.loss_weights
        pairs = self._sample_pairs(sid)
        packs = []
        cyc_terms, adv_terms, sup_terms = [], [], []
        idt_terms, lat_terms, fwd_terms, reg_terms = [], [], [], []
        ihc_terms = []
        zero_grads(self._all_params())
        for x_he, x_i in pairs:
            mask, mw = self._mask_for(stain, x_i)
            pack = self._forward_pack(sid, x_he, x_i, mask, mw)
            packs.append(pack)
            cyc = (L.cycle_loss_paired if self.config.paired else L.cycle_loss_unpaired)(pack)
            adv = self._adv_terms(sid, pack)
            idt, lat, fwd, reg = self._reg_terms(sid, pack)
            sup = L.supervised_loss(pack) if self.config.paired else None
            ihc = L.synthesis_loss(cyc, adv, reg, w, sup)
            for bucket, term in (
                (cyc_terms, cyc), (adv_terms, adv), (idt_terms, idt),
                (lat_terms, lat), (fwd_terms, fwd), (reg_terms, reg),
            ):
                bucket.append(self._scalar(term))
            sup_terms.append(0.0 if sup is None else self._scalar(sup))
            ihc_terms.append(ihc)
        total = L._ws(*((1.0 / len(ihc_terms), t) for t in ihc_terms))
        total.backward()

        he = self.bank.triples[HE_DOMAIN]
        # record shared-component gradients for the mean-loss step before
        # the optimizer moves anything
        self._he_grad_enc += collect_grads(he.encoder.parameters())
        self._he_grad_gen += collect_grads(he.generator.parameters())
        self._he_loss_acc.append(self._scalar(total))

        for domain, comp in ((sid, "enc"), (sid, "gen"), (HE_DOMAIN, "enc"), (HE_DOMAIN, "gen")):
            self._update_component(domain, comp, lr)

        # discriminator phases on detached generations
        d_stain_val = self._disc_step(sid, pairs, packs, lr)
        d_he_val = self._disc_step_he(pairs, packs, lr)

        report = LossReport(
            iteration=self.iteration,
            kind="stain",
            stain_id=sid,
            lr=lr,
            total=self._scalar(total),
            cyc=float(np.mean(cyc_terms)),
            adv=float(np.mean(adv_terms)),
            sup=float(np.mean(sup_terms)),
            idt=float(np.mean(idt_terms)),
            lat=float(np.mean(lat_terms)),
            fwd=float(np.mean(fwd_terms)),
            reg=float(np.mean(reg_terms)),
            disc_stain=d_stain_val,
            disc_he=d_he_val,
            components=self._subcomponents(packs),
        )
        if self.phase_hook is not None:
            self.phase_hook("stain", sid)
        return report

    def _subcomponents(self, packs) -> dict:
        """Masked/unmasked split of the cycle term, averaged over the batch."""
        vals = {"cyc_plain": [], "cyc_activated": [], "cyc_complement": []}
        for p in packs:
            xi = p.x_i
            xhi = p.x_hat_i.data
            vals["cyc_plain"].append(L.base_distance(xhi, xi))
            vals["cyc_activated"].append(L.base_distance(xhi, xi, p.mask))
            vals["cyc_complement"].append(L.base_distance(xhi, xi, 1.0 - p.mask))
        return {k: float(np.mean(v)) for k, v in vals.items()}

    def _disc_step(self, sid: str, pairs, packs, lr: float) -> float:
        st_d = self.bank.triples[sid].discriminator
        zero_grads(st_d.parameters())
        terms = []
        for (x_he, x_i), pack in zip(pairs, packs):
            d_real = st_d.forward(x_i, use_tape=True)
            d_synth = st_d.forward(pack.y_hat_i.data, use_tape=True)
            mask_small = resize_mask(pack.mask, d_real[0].shape)
            for h in (0, 1):
                terms.append(
                    L.discriminator_loss_stain(
                        d_real[h], d_synth[h], mask_small, pack.weights,
                        self.config.loss_weights.lambda_dis,
                    )
                )
        total = L._ws(*((1.0 / len(terms), t) for t in terms))
        if not isinstance(total, ag.Tensor):
            # weight zero: nothing on the tape, nothing to update
            return float(total)
        total.backward()
        self._update_component(sid, "disc", lr)
        return self._scalar(total)

    def _disc_step_he(self, pairs, packs, lr: float) -> float:
        he_d = self.bank.triples[HE_DOMAIN].discriminator
        zero_grads(he_d.parameters())
        terms = []
        for (x_he, x_i), pack in zip(pairs, packs):
            d_real = he_d.forward(x_he, use_tape=True)
            d_synth = he_d.forward(pack.y_hat_he.data, use_tape=True)
            for h in (0, 1):
                terms.append(
                    L.discriminator_loss_he(
                        d_real[h], d_synth[h], self.config.loss_weights.lambda_dis
                    )
                )
        total = L._ws(*((1.0 / len(terms), t) for t in terms))
        if not isinstance(total, ag.Tensor):
            return float(total)
        total.backward()
        self._update_component(HE_DOMAIN, "disc", lr)
        return self._scalar(total)

    def _he_reg_step(self, lr: float) -> LossReport:
        he = self.bank.triples[HE_DOMAIN]
        n = len(self._he_loss_acc)
        mean_loss = float(np.mean(self._he_loss_acc))
        for comp_name, stack, grad in (
            ("enc", he.encoder, self._he_grad_enc),
            ("gen", he.generator, self._he_grad_gen),
        ):
            params = stack.parameters()
            state = self.adam[(HE_DOMAIN, comp_name)]
            new = adam_step(state, flat_params(params), grad / n, lr)
            set_flat_params(params, new)
        self._he_grad_enc[...] = 0.0
        self._he_grad_gen[...] = 0.0
        self._he_loss_acc.clear()
        if self.phase_hook is not None:
            self.phase_hook("he_reg", None)
        return LossReport(
            iteration=self.iteration, kind="he_reg", stain_id=None, lr=lr, total=mean_loss
        )

    # -- public API ----------------------------------------------------

    def train_iteration(self) -> list[LossReport]:
        lr = self.current_lr()
        ids = self.bank.stain_ids
        if self.config.stain_order == "random":
            order = [ids[k] for k in self.rng.permutation(len(ids))]
        else:
            order = list(ids)
        reports = []
        by_id = {s.stain_id: s for s in self.bank.stains}
        for sid in order:
            reports.append(self._stain_step(by_id[sid], lr))
        if (self.iteration + 1) % self.config.he_reg_period == 0:
            reports.append(self._he_reg_step(lr))
        self.iteration += 1
        return reports

    def train(self, n_iterations: int, log_stream=None) -> list[LossReport]:
        out = []
        for _ in range(n_iterations):
            reports = self.train_iteration()
            out.extend(reports)
            if log_stream is not None:
                for r in reports:
                    log_stream.write(r.to_json() + "\n")
        return out

    def checksums(self) -> dict[tuple[str, str], str]:
        """Digest of every component's parameters, keyed (domain, part)."""
        out = {}
        for domain, triple in self.bank.triples.items():
            out[(domain, "enc")] = params_checksum(triple.encoder)
            out[(domain, "gen")] = params_checksum(triple.generator)
            out[(domain, "disc")] = params_checksum(triple.discriminator)
        return out
