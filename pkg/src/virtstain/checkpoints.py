"""Checkpoint layout: one array archive per domain plus a manifest.

A bank with S stains persists as S+1 ``<domain>.npz`` files whose keys
are namespaced ``enc/``, ``gen/``, ``disc/``, and one ``manifest.json``
recording the architecture, the stain table, and the iteration counter.
Loads are selective: asking for a subset of stains or components opens
only the archives involved, and the store keeps an access log so that
behaviour is checkable. Discriminator arrays live in the same archives
but are only pulled out of them when a load asks for the ``disc``
component.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, StateError
from .masks import StainConfig
from .models import ArchSpec, make_triple, load_state, state_dict
from .training import HE_DOMAIN, ModelBank

MANIFEST_NAME = "manifest.json"
GENERATOR_SIDE = ("enc", "gen")
ALL_COMPONENTS = ("enc", "gen", "disc")


class CheckpointStore:
    """Reads and writes one directory of per-domain archives."""

    def __init__(self, root):
        self.root = Path(root)
        self.opened: list[str] = []  # archive paths, in open order
        self.keys_read: dict[str, list[str]] = {}

    # -- paths ---------------------------------------------------------

    def domain_path(self, domain: str) -> Path:
        return self.root / f"{domain}.npz"

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    # -- writing ---------------------------------------------------------

    def save_bank(self, bank: ModelBank, iteration: int) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        manifest = {
            "n_stains": len(bank.stains),
            "iteration": int(iteration),
            "arch": dataclasses.asdict(bank.arch),
            "stains": [dataclasses.asdict(s) for s in bank.stains],
        }
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        for domain, triple in bank.triples.items():
            np.savez(self.domain_path(domain), **state_dict(triple))

    # -- reading ---------------------------------------------------------

    def read_manifest(self) -> dict:
        if not self.manifest_path.exists():
            raise StateError(f"no manifest at {self.manifest_path}")
        return json.loads(self.manifest_path.read_text())

    def _open(self, domain: str):
        path = self.domain_path(domain)
        if not path.exists():
            raise StateError(f"no checkpoint archive for domain {domain!r} at {path}")
        self.opened.append(str(path))
        self.keys_read.setdefault(str(path), [])
        return np.load(path)

    def load_domain(self, bank: ModelBank, domain: str, components=ALL_COMPONENTS) -> None:
        """Pull the named components of one domain into an existing bank."""
        bad = [c for c in components if c not in ALL_COMPONENTS]
        if bad:
            raise ConfigurationError(f"unknown components {bad}")
        with self._open(domain) as npz:
            wanted = [k for k in npz.files if k.split("/", 1)[0] in components]
            state = {k: npz[k] for k in wanted}
        self.keys_read[str(self.domain_path(domain))].extend(wanted)
        load_state(bank.triple(domain), state, components=tuple(components))

    def load_bank(
        self,
        stain_ids: list[str] | None = None,
        components=ALL_COMPONENTS,
    ) -> tuple[ModelBank, dict]:
        """Rebuild a bank from disk.

        ``stain_ids=None`` loads every stain in the manifest; a subset
        opens only those archives (plus the H&E one). Components not in
        ``components`` stay zero-initialized.
        """
        manifest = self.read_manifest()
        arch = ArchSpec(**manifest["arch"])
        all_stains = [StainConfig(**s) for s in manifest["stains"]]
        by_id = {s.stain_id: s for s in all_stains}
        if stain_ids is None:
            chosen = all_stains
        else:
            missing = [s for s in stain_ids if s not in by_id]
            if missing:
                raise ConfigurationError(f"stains not in checkpoint: {missing}")
            chosen = [by_id[s] for s in stain_ids]
        triples = {HE_DOMAIN: make_triple(HE_DOMAIN, arch, rng=None)}
        for s in chosen:
            triples[s.stain_id] = make_triple(s.stain_id, arch, rng=None)
        bank = ModelBank(arch=arch, stains=chosen, triples=triples)
        for domain in triples:
            self.load_domain(bank, domain, components)
        return bank, manifest

    def load_for_staining(
        self, stain_ids: list[str] | None = None, with_disc: bool = False
    ) -> tuple[ModelBank, dict]:
        """Open the H&E archive plus one archive per requested stain.

        Generator-side arrays only, unless ``with_disc`` asks for the
        discriminators (the quality-control path needs their scores).
        """
        components = ALL_COMPONENTS if with_disc else GENERATOR_SIDE
        return self.load_bank(stain_ids, components)
