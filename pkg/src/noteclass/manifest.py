"""Run manifest: one human-readable config binding paths and all sub-configs.

A manifest fully determines a run; its hash and seed are recorded in every
output so results stay reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import yaml

from .comb import CombConfig
from .features import ClipConfig
from .model import MULTI_KERNELS, ModelConfig
from .notes import DataError, InstrumentTaxonomy
from .training import TrainConfig

BRANCH_PRESETS = {
    "multi": MULTI_KERNELS,
    "square-k57": ((3, 3),),
    "triple-square": ((3, 3), (3, 3), (3, 3)),
}


@dataclass
class RunManifest:
    audio_dir: Optional[str] = None
    labels_dir: Optional[str] = None
    notes: Optional[str] = None          # estimator interchange file/dir for assign
    cache_dir: Optional[str] = None
    checkpoint_dir: str = "checkpoints"
    out_dir: str = "out"
    seed: int = 0
    clip: ClipConfig = field(default_factory=ClipConfig)
    comb: Optional[CombConfig] = field(default_factory=CombConfig)
    model: dict = field(default_factory=dict)     # ModelConfig overrides
    train: TrainConfig = field(default_factory=TrainConfig)
    taxonomy: InstrumentTaxonomy = field(default_factory=InstrumentTaxonomy)

    def model_config(self) -> ModelConfig:
        overrides = dict(self.model)
        branches = overrides.pop("branches", "multi")
        if isinstance(branches, str):
            if branches not in BRANCH_PRESETS:
                raise DataError(f"unknown branch preset {branches!r}; "
                                f"options: {sorted(BRANCH_PRESETS)}")
            if branches == "square-k57":
                overrides.setdefault("growth_rate", 57)
            branches = BRANCH_PRESETS[branches]
        else:
            branches = tuple(tuple(k) for k in branches)
        return ModelConfig(
            input_bins=self.clip.n_bins,
            input_frames=self.clip.frame_count,
            classes=self.taxonomy.num_classes,
            branches=branches,
            **overrides,
        )

    def to_dict(self) -> dict:
        return {
            "audio_dir": self.audio_dir,
            "labels_dir": self.labels_dir,
            "notes": self.notes,
            "cache_dir": self.cache_dir,
            "checkpoint_dir": self.checkpoint_dir,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "clip": asdict(self.clip),
            "comb": None if self.comb is None else asdict(self.comb),
            "model": dict(self.model),
            "train": asdict(self.train),
            "taxonomy": {"classes": list(self.taxonomy.classes),
                         "map": dict(self.taxonomy.raw_map)},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]

    def require_paths(self, *names: str) -> None:
        """Check that the named input paths exist before any work starts."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise DataError(f"manifest is missing required path {name!r}")
            if not Path(value).exists():
                raise DataError(f"{name} path does not exist: {value}")


def load_manifest(path, overrides: Optional[dict] = None) -> RunManifest:
    """Build a RunManifest from flag-level defaults overlaid by the file.

    ``overrides`` holds values collected from individual CLI flags; anything
    the manifest file defines wins over them.
    """
    base = dict(overrides or {})
    if path is not None:
        path = Path(path)
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}")
        except yaml.YAMLError as exc:
            raise DataError(f"cannot parse manifest {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise DataError(f"manifest {path} must be a mapping")
        for key, value in data.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        root = path.parent
    else:
        root = Path(".")

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() else root / p)

    clip = ClipConfig(**base.get("clip", {}))

    if "comb" not in base:
        comb = CombConfig.default_for(clip.frontend)
    elif base["comb"] in (None, "none", "off"):
        comb = None
    else:
        comb_kwargs = dict(base["comb"])
        if "harmonics" in comb_kwargs:
            comb_kwargs["n_harmonics"] = comb_kwargs.pop("harmonics")
        comb = CombConfig(**comb_kwargs)

    tax_raw = base.get("taxonomy")
    if tax_raw is None:
        taxonomy = InstrumentTaxonomy()
    elif isinstance(tax_raw, str):
        taxonomy = InstrumentTaxonomy.from_file(resolve(tax_raw))
    elif isinstance(tax_raw, dict):
        taxonomy = InstrumentTaxonomy(classes=tax_raw["classes"],
                                      raw_map=tax_raw.get("map"))
    else:
        raise DataError("taxonomy must be a path or a {classes, map} mapping")

    try:
        train = TrainConfig(**base.get("train", {}))
    except TypeError as exc:
        raise DataError(f"bad train config: {exc}") from exc

    return RunManifest(
        audio_dir=resolve(base.get("audio_dir")),
        labels_dir=resolve(base.get("labels_dir")),
        notes=resolve(base.get("notes")),
        cache_dir=resolve(base.get("cache_dir")),
        checkpoint_dir=resolve(base.get("checkpoint_dir", "checkpoints")),
        out_dir=resolve(base.get("out_dir", "out")),
        seed=int(base.get("seed", 0)),
        clip=clip,
        comb=comb,
        model=base.get("model", {}),
        train=train,
        taxonomy=taxonomy,
    )
