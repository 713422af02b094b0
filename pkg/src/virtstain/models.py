"""Desk-scale network family for stain translation.

Encoders and generators are shallow stacks of 1x1 channel mixes with one
3x3 depthwise layer for spatial context; discriminators pool features
into p x p patches and score each patch with an affine head, once on the
luminance plane and once on RGB. Generators end in a sigmoid so their
output lies in [0, 1] for any parameter values.

The layer stacks keep spatial resolution, so latents share the image's
height and width with ``latent_channels`` channels.

``identity_triple`` builds a diagnostic configuration whose encoder and
generator compose to the exact identity: channel mixes embed/project the
RGB channels, depthwise kernels are deltas, and every activation tag is
linear (an exact identity through a bounded smooth output is impossible,
so this configuration swaps tags rather than just weights).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .color import LUMA_WEIGHTS
from .errors import ConfigurationError, ShapeError

ACTIVATIONS = ("linear", "tanh", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    in_ch: int
    out_ch: int
    activation: str = "tanh"
    depthwise: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.in_ch < 1 or self.out_ch < 1:
            raise ConfigurationError("channel counts must be positive")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture knobs shared by every triple in a model bank."""

    latent_channels: int = 8
    disc_features: int = 8
    patch_size: int = 4
    hidden_activation: str = "tanh"
    output_activation: str = "sigmoid"  # generator output, bounded
    init_scale: float = 0.02
    # float32 halves memory traffic, the bottleneck on CPU; float64 is
    # the default so gradient checks and oracles keep full precision.
    param_dtype: str = "float64"

    def __post_init__(self):
        if self.param_dtype not in ("float32", "float64"):
            raise ConfigurationError(
                f"param_dtype must be float32 or float64, got {self.param_dtype!r}"
            )

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.param_dtype)

    def encoder_layers(self) -> tuple[LayerSpec, ...]:
        c = self.latent_channels
        return (
            LayerSpec(3, c, self.hidden_activation, depthwise=True),
            LayerSpec(c, c, "linear"),
        )

    def generator_layers(self) -> tuple[LayerSpec, ...]:
        c = self.latent_channels
        return (
            LayerSpec(c, c, self.hidden_activation, depthwise=True),
            LayerSpec(c, 3, self.output_activation),
        )

    def disc_layers(self, in_ch: int) -> tuple[LayerSpec, ...]:
        return (LayerSpec(in_ch, self.disc_features, self.hidden_activation, depthwise=True),)


def _act(h, tag: str):
    if tag == "tanh":
        return ag.tanh(h)
    if tag == "sigmoid":
        return ag.sigmoid(h)
    return h


class LayerStack:
    """A sequence of mix(+bias)(+depthwise)(+activation) layers."""

    def __init__(
        self,
        layers: tuple[LayerSpec, ...],
        rng: np.random.Generator | None,
        init_scale: float,
        dtype=np.float64,
    ):
        self.layers = layers
        self.weights: list[ag.Tensor] = []
        self.biases: list[ag.Tensor] = []
        self.kernels: list[ag.Tensor | None] = []
        for spec in layers:
            if rng is None:
                w = np.zeros((spec.in_ch, spec.out_ch))
                b = np.zeros(spec.out_ch)
            else:
                w = rng.uniform(-init_scale, init_scale, size=(spec.in_ch, spec.out_ch))
                b = rng.uniform(-init_scale, init_scale, size=spec.out_ch)
            self.weights.append(ag.Tensor(np.asarray(w, dtype=dtype)))
            self.biases.append(ag.Tensor(np.asarray(b, dtype=dtype)))
            if spec.depthwise:
                # delta kernel plus noise keeps signal flowing at init
                k = np.zeros((3, 3, spec.out_ch))
                k[1, 1, :] = 1.0
                if rng is not None:
                    k = k + rng.uniform(-init_scale, init_scale, size=k.shape)
                self.kernels.append(ag.Tensor(np.asarray(k, dtype=dtype)))
            else:
                self.kernels.append(None)

    def parameters(self) -> list[ag.Tensor]:
        out = []
        for w, b, k in zip(self.weights, self.biases, self.kernels):
            out.extend([w, b])
            if k is not None:
                out.append(k)
        return out

    def forward(self, x, use_tape: bool | None = None):
        """Run the stack; array in, array out (tensor in, tensor out).

        ``use_tape=True`` differentiates through the parameters even when
        the input is a plain array (the input then stays a constant).
        """
        tape = isinstance(x, ag.Tensor) if use_tape is None else use_tape
        h = x
        for i, spec in enumerate(self.layers):
            w = self.weights[i] if tape else self.weights[i].data
            b = self.biases[i] if tape else self.biases[i].data
            h = ag.add(ag.channel_mix(h, w), b)
            if self.kernels[i] is not None:
                k = self.kernels[i] if tape else self.kernels[i].data
                h = ag.depthwise3(h, k)
            h = _act(h, spec.activation)
        return h if tape else h.data

    __call__ = forward


class Discriminator:
    """Dual-head patch scorer: luminance head and RGB head.

    Each head runs its own feature stack, average-pools into patches, and
    scores every patch with an affine map. Both heads return an
    (H/p, W/p) raster.
    """

    def __init__(self, arch: ArchSpec, rng: np.random.Generator | None):
        self.patch_size = arch.patch_size
        s = arch.init_scale
        dt = arch.dtype
        self.lum_stack = LayerStack(arch.disc_layers(1), rng, s, dt)
        self.rgb_stack = LayerStack(arch.disc_layers(3), rng, s, dt)
        f = arch.disc_features

        def head():
            if rng is None:
                return ag.Tensor(np.zeros(f)), ag.Tensor(np.zeros(()))
            return (
                ag.Tensor(np.asarray(rng.uniform(-s, s, size=f), dtype=dt)),
                ag.Tensor(np.asarray(rng.uniform(-s, s, size=()), dtype=dt)),
            )

        self.lum_head = head()
        self.rgb_head = head()

    def parameters(self) -> list[ag.Tensor]:
        return (
            self.lum_stack.parameters()
            + [*self.lum_head]
            + self.rgb_stack.parameters()
            + [*self.rgb_head]
        )

    def forward(self, x, use_tape: bool | None = None):
        tape = isinstance(x, ag.Tensor) if use_tape is None else use_tape
        if x.shape[0] % self.patch_size or x.shape[1] % self.patch_size:
            raise ShapeError(
                f"input dims {x.shape[:2]} not divisible by patch size {self.patch_size}"
            )
        xv = x.data if isinstance(x, ag.Tensor) else np.asarray(x)
        lum_in = ag.channel_mix(x, LUMA_WEIGHTS.reshape(3, 1).astype(xv.dtype, copy=False))
        heads = []
        for stack, (hw, hb) in ((self.lum_stack, self.lum_head), (self.rgb_stack, self.rgb_head)):
            inp = lum_in if stack is self.lum_stack else x
            feats = stack.forward(inp, use_tape=tape)
            if not isinstance(feats, ag.Tensor):
                feats = ag.Tensor(feats)
            pooled = ag.avg_pool(feats, self.patch_size)
            w = hw if tape else hw.data
            b = hb if tape else hb.data
            scores = ag.patch_score(pooled, w, b)
            heads.append(scores if tape else scores.data)
        return heads[0], heads[1]

    __call__ = forward


@dataclass
class ModelTriple:
    domain: str
    encoder: LayerStack
    generator: LayerStack
    discriminator: Discriminator

    def parameters(self) -> list[ag.Tensor]:
        return (
            self.encoder.parameters()
            + self.generator.parameters()
            + self.discriminator.parameters()
        )


def make_triple(domain: str, arch: ArchSpec, rng: np.random.Generator) -> ModelTriple:
    return ModelTriple(
        domain=domain,
        encoder=LayerStack(arch.encoder_layers(), rng, arch.init_scale, arch.dtype),
        generator=LayerStack(arch.generator_layers(), rng, arch.init_scale, arch.dtype),
        discriminator=Discriminator(arch, rng),
    )


def identity_triple(domain: str, arch: ArchSpec) -> ModelTriple:
    """Encoder/generator pair composing to the exact identity map."""
    if arch.latent_channels < 3:
        raise ConfigurationError("identity configuration needs >= 3 latent channels")
    lin = replace(arch, hidden_activation="linear", output_activation="linear")
    triple = ModelTriple(
        domain=domain,
        encoder=LayerStack(lin.encoder_layers(), None, 0.0),
        generator=LayerStack(lin.generator_layers(), None, 0.0),
        discriminator=Discriminator(lin, None),
    )
    c = arch.latent_channels
    embed = np.zeros((3, c))
    embed[:3, :3] = np.eye(3)
    project = np.zeros((c, 3))
    project[:3, :3] = np.eye(3)
    delta = np.zeros((3, 3, c))
    delta[1, 1, :] = 1.0
    triple.encoder.weights[0].data[...] = embed
    triple.encoder.kernels[0].data[...] = delta
    triple.encoder.weights[1].data[...] = np.eye(c)
    triple.generator.weights[0].data[...] = np.eye(c)
    triple.generator.kernels[0].data[...] = delta
    triple.generator.weights[1].data[...] = project
    return triple


# ---------------------------------------------------------------------
# parameter plumbing
# ---------------------------------------------------------------------


def flat_params(params: list[ag.Tensor]) -> np.ndarray:
    if not params:
        return np.zeros(0)
    return np.concatenate([p.data.ravel() for p in params])


def set_flat_params(params: list[ag.Tensor], vec: np.ndarray) -> None:
    n = sum(p.data.size for p in params)
    if vec.size != n:
        raise ShapeError(f"flat vector has {vec.size} values, parameters need {n}")
    pos = 0
    for p in params:
        k = p.data.size
        p.data[...] = vec[pos : pos + k].reshape(p.data.shape)
        pos += k


def collect_grads(params: list[ag.Tensor]) -> np.ndarray:
    parts = []
    for p in params:
        parts.append(
            (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
        )
    return np.concatenate(parts) if parts else np.zeros(0)


def zero_grads(params: list[ag.Tensor]) -> None:
    for p in params:
        p.grad = None


def count_parameters(obj) -> int:
    return int(sum(p.data.size for p in obj.parameters()))


def params_checksum(obj) -> str:
    """Stable digest of a component's parameters; equal iff bit-equal."""
    h = hashlib.sha256()
    for p in obj.parameters():
        h.update(p.data.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ParameterBudget:
    """Model count comparison: one shared H&E triple plus S stain triples
    versus S independent pairwise banks of two triples each."""

    n_stains: int
    per_triple: int
    unified_total: int
    pairwise_total: int

    @property
    def ratio(self) -> float:
        return self.unified_total / self.pairwise_total


def parameter_budget(n_stains: int, arch: ArchSpec) -> ParameterBudget:
    if n_stains < 1:
        raise ConfigurationError("need at least one stain")
    rng = np.random.default_rng(0)
    per = count_parameters(make_triple("probe", arch, rng))
    return ParameterBudget(
        n_stains=n_stains,
        per_triple=per,
        unified_total=(n_stains + 1) * per,
        pairwise_total=2 * n_stains * per,
    )


# ---------------------------------------------------------------------
# named state for checkpoints
# ---------------------------------------------------------------------


def _stack_state(stack: LayerStack, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b, k) in enumerate(zip(stack.weights, stack.biases, stack.kernels)):
        out[f"{prefix}w{i}"] = w.data
        out[f"{prefix}b{i}"] = b.data
        if k is not None:
            out[f"{prefix}k{i}"] = k.data
    return out


def state_dict(triple: ModelTriple) -> dict[str, np.ndarray]:
    d = {}
    d.update(_stack_state(triple.encoder, "enc/"))
    d.update(_stack_state(triple.generator, "gen/"))
    d.update(_stack_state(triple.discriminator.lum_stack, "disc/lum/"))
    d.update(_stack_state(triple.discriminator.rgb_stack, "disc/rgb/"))
    d["disc/lum/head_w"] = triple.discriminator.lum_head[0].data
    d["disc/lum/head_b"] = triple.discriminator.lum_head[1].data
    d["disc/rgb/head_w"] = triple.discriminator.rgb_head[0].data
    d["disc/rgb/head_b"] = triple.discriminator.rgb_head[1].data
    return d


def _load_stack(stack: LayerStack, prefix: str, state: dict[str, np.ndarray]) -> None:
    for i, (w, b, k) in enumerate(zip(stack.weights, stack.biases, stack.kernels)):
        w.data[...] = state[f"{prefix}w{i}"]
        b.data[...] = state[f"{prefix}b{i}"]
        if k is not None:
            k.data[...] = state[f"{prefix}k{i}"]


def load_state(
    triple: ModelTriple,
    state: dict[str, np.ndarray],
    components: tuple[str, ...] = ("enc", "gen", "disc"),
) -> None:
    """Copy named arrays into the triple, restricted to the requested
    components so discriminators can stay untouched on generation-only
    runs."""
    if "enc" in components:
        _load_stack(triple.encoder, "enc/", state)
    if "gen" in components:
        _load_stack(triple.generator, "gen/", state)
    if "disc" in components:
        _load_stack(triple.discriminator.lum_stack, "disc/lum/", state)
        _load_stack(triple.discriminator.rgb_stack, "disc/rgb/", state)
        triple.discriminator.lum_head[0].data[...] = state["disc/lum/head_w"]
        triple.discriminator.lum_head[1].data[...] = state["disc/lum/head_b"]
        triple.discriminator.rgb_head[0].data[...] = state["disc/rgb/head_w"]
        triple.discriminator.rgb_head[1].data[...] = state["disc/rgb/head_b"]
