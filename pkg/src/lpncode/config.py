"""Run configuration with two stock profiles.

``full`` holds the full-scale hyper-parameters; ``desk`` shrinks every
dimension so a CPU can train on a few hundred short examples.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelDims:
    char_emb: int = 100        # input characters fed to C2W
    c2w_hidden: int = 300
    word_dim: int = 300        # C2W output / lookup table width
    text_hidden: int = 300     # each direction of the text-field Bi-LSTM
    common: int = 300          # shared space every input token is projected into
    attn_hidden: int = 200
    out_emb: int = 100         # decoder character embeddings
    dec_hidden: int = 300
    pointer_hidden: int = 200

    def scaled(self, factor: float) -> "ModelDims":
        return ModelDims(**{k: max(1, int(round(v * factor))) for k, v in dataclasses.asdict(self).items()})


@dataclass
class RunConfig:
    dataset: str = ""
    schema: str = ""
    dims: ModelDims = field(default_factory=ModelDims)
    embedding: str = "c2w"            # c2w | lookup
    attention: str = "structured"     # structured | none
    predictors: str = "lpn"           # lpn | char
    unk_singleton_prob: float = 0.5
    batch_size: int = 20
    rho: float = 0.95
    eps: float = 1e-6
    clip_norm: float = 5.0
    init_scale: float = 0.08
    seed: int = 1
    epochs: int = 10
    compress_max_len: int = 0         # 0 disables compression
    compress_target: float = 0.0      # target average length in output units
    compress_rate: float = 0.0        # alternative: fraction of the average length to remove
    beam: int = 64
    max_decode_len: int = 400
    valid_interval: int = 1           # epochs between validation decodes
    valid_beam: int = 0               # 0 means use ``beam``
    out_dir: str = "run"

    def validate(self) -> "RunConfig":
        for k, v in dataclasses.asdict(self.dims).items():
            if v <= 0:
                raise ConfigError(f"dimension {k} must be positive, got {v}")
        if self.embedding not in ("c2w", "lookup"):
            raise ConfigError(f"embedding must be c2w or lookup, got {self.embedding!r}")
        if self.attention not in ("structured", "none"):
            raise ConfigError(f"attention must be structured or none, got {self.attention!r}")
        if self.predictors not in ("lpn", "char"):
            raise ConfigError(f"predictors must be lpn or char, got {self.predictors!r}")
        if not 0.0 <= self.unk_singleton_prob <= 1.0:
            raise ConfigError("unk_singleton_prob must be in [0, 1]")
        if not 0.0 < self.rho < 1.0 or self.eps <= 0:
            raise ConfigError("AdaDelta needs 0 < rho < 1 and eps > 0")
        if not 0.0 <= self.compress_rate < 1.0:
            raise ConfigError("compress_rate must be in [0, 1)")
        if self.compress_rate > 0 and self.compress_target > 0:
            raise ConfigError("set compress_target or compress_rate, not both")
        if self.batch_size < 1 or self.beam < 1 or self.max_decode_len < 1:
            raise ConfigError("batch_size, beam and max_decode_len must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        dims = ModelDims(**d.pop("dims", {}))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(dims=dims, **d).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def model_digest(self) -> str:
        """Hash of everything that determines parameter shapes and semantics."""
        keys = ("dims", "embedding", "attention", "predictors", "init_scale", "seed")
        d = {k: self.to_dict()[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def full_profile(**overrides) -> RunConfig:
    cfg = RunConfig(beam=1000, max_decode_len=2000, valid_interval=1)
    return dataclasses.replace(cfg, **overrides).validate()


def desk_profile(factor: float = 0.1, **overrides) -> RunConfig:
    cfg = RunConfig(dims=ModelDims().scaled(factor), beam=64, max_decode_len=400)
    return dataclasses.replace(cfg, **overrides).validate()
