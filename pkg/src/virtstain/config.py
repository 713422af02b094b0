"""Run configuration: a flat INI-style file with typed sections.

One file drives every subcommand. Unknown sections or keys are
rejected outright so typos fail loudly instead of silently running on
defaults. The only environment override is VIRTSTAIN_OUT for the
output directory; everything else must be written down.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigurationError
from .losses import LossWeights
from .masks import DegradeSpec, StainConfig
from .models import ArchSpec
from .training import TrainingConfig
from .wsi import MAGNIFICATION_LEVELS

OUT_ENV = "VIRTSTAIN_OUT"

MODES = ("synth", "train", "stain", "qc", "eval")


@dataclass
class TileParams:
    tile_size: int = 64
    overlap_fraction: float = 0.0
    magnification: str = "x40"
    min_tissue: float = 0.10

    def __post_init__(self):
        if self.tile_size < 1:
            raise ConfigurationError("tile_size must be positive")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ConfigurationError("overlap_fraction must be in [0, 1)")
        if not 0.0 <= self.min_tissue <= 1.0:
            raise ConfigurationError("min_tissue must be in [0, 1]")
        if self.magnification not in MAGNIFICATION_LEVELS:
            raise ConfigurationError(
                f"magnification must be one of {sorted(MAGNIFICATION_LEVELS)}"
            )


@dataclass
class SynthParams:
    n_pairs: int = 200
    tile: int = 64
    slide_width: int = 640
    slide_height: int = 448

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ConfigurationError("n_pairs must be positive")


@dataclass
class QcParams:
    lo_pct: float = 1.0
    hi_pct: float = 99.0

    def __post_init__(self):
        if not 0.0 <= self.lo_pct < self.hi_pct <= 100.0:
            raise ConfigurationError(
                f"percentiles must satisfy 0 <= lo < hi <= 100, "
                f"got ({self.lo_pct}, {self.hi_pct})"
            )


@dataclass
class RunConfig:
    """Everything a subcommand needs, validated up front."""

    mode: str = ""
    seed: int = 0
    out_dir: str = "out"
    iterations: int = 400
    stitch_overlap: float = 0.6
    tiles: TileParams = field(default_factory=TileParams)
    synth: SynthParams = field(default_factory=SynthParams)
    qc: QcParams = field(default_factory=QcParams)
    arch: ArchSpec = field(default_factory=ArchSpec)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    stains: list = field(default_factory=list)  # StainConfig entries

    def __post_init__(self):
        if self.mode and self.mode not in MODES:
            raise ConfigurationError(
                f"mode must be one of {MODES}, got {self.mode!r}"
            )
        if self.iterations < 1:
            raise ConfigurationError("iterations must be positive")
        if not 0.0 <= self.stitch_overlap < 1.0:
            raise ConfigurationError("stitch_overlap must be in [0, 1)")


def _typed(section: str, key: str, raw: str, target_type):
    try:
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as e:
        raise ConfigurationError(
            f"[{section}] {key}: cannot parse {raw!r} as {target_type.__name__}"
        ) from e


def _section_kwargs(parser, section: str, cls) -> dict:
    """Typed kwargs for one dataclass section; unknown keys rejected."""
    allowed = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]")
        ann = allowed[key]
        if ann in ("int", int):
            out[key] = _typed(section, key, raw, int)
        elif ann in ("float", float):
            out[key] = _typed(section, key, raw, float)
        elif ann in ("bool", bool):
            out[key] = _typed(section, key, raw, bool)
        elif ann in ("str", str):
            out[key] = raw
        else:
            # composite fields (nested dataclasses) have their own sections
            raise ConfigurationError(
                f"key {key!r} in [{section}] is not settable from the file"
            )
    return out


# Sections mapped to the dataclasses they populate. [run] keys land on
# RunConfig itself; [stain:*] sections each build one StainConfig.
_SECTION_CLASSES = {
    "tiles": TileParams,
    "synth": SynthParams,
    "qc": QcParams,
    "arch": ArchSpec,
    "training": TrainingConfig,
    "losses": LossWeights,
    "degrade": DegradeSpec,
}

_RUN_KEYS = {
    "seed": int,
    "out": str,
    "iterations": int,
    "stitch_overlap": float,
}


def load_config(path=None, mode: str = "") -> RunConfig:
    """Parse the INI file (all sections optional) into a RunConfig.

    ``path=None`` gives pure defaults. The VIRTSTAIN_OUT environment
    variable, when set, overrides the configured output directory.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigurationError(f"cannot read config file {path}")

    kwargs = {"mode": mode}
    section_values = {}
    stains = []
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items(section):
                if key not in _RUN_KEYS:
                    raise ConfigurationError(f"unknown key {key!r} in [run]")
                target = "out_dir" if key == "out" else key
                kwargs[target] = _typed(section, key, raw, _RUN_KEYS[key])
        elif section in _SECTION_CLASSES:
            cls = _SECTION_CLASSES[section]
            section_values[section] = cls(**_section_kwargs(parser, section, cls))
        elif section.startswith("stain:"):
            stain_id = section.split(":", 1)[1]
            if not stain_id:
                raise ConfigurationError("empty stain id in section header")
            entries = _section_kwargs(parser, section, StainConfig)
            if "stain_id" in entries and entries["stain_id"] != stain_id:
                raise ConfigurationError(
                    f"[{section}]: stain_id {entries['stain_id']!r} contradicts header"
                )
            entries["stain_id"] = stain_id
            stains.append(StainConfig(**entries))
        else:
            raise ConfigurationError(f"unknown section [{section}]")

    training_kwargs = {}
    if "training" in section_values:
        training = section_values.pop("training")
        training_kwargs = {
            f.name: getattr(training, f.name)
            for f in fields(TrainingConfig)
            if f.name not in ("loss_weights", "degrade")
        }
    if "losses" in section_values:
        training_kwargs["loss_weights"] = section_values.pop("losses")
    if "degrade" in section_values:
        training_kwargs["degrade"] = section_values.pop("degrade")
    if training_kwargs:
        kwargs["training"] = TrainingConfig(**training_kwargs)

    for section, attr in (("tiles", "tiles"), ("synth", "synth"),
                          ("qc", "qc"), ("arch", "arch")):
        if section in section_values:
            kwargs[attr] = section_values[section]
    if stains:
        kwargs["stains"] = stains

    config = RunConfig(**kwargs)
    env_out = os.environ.get(OUT_ENV)
    if env_out:
        config.out_dir = env_out
    return config
