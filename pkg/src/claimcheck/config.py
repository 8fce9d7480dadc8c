"""Model and training configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

VARIANTS = ("claim_only", "claim_only_embavg", "crawled_avg", "crawled_ranked")

# hyperparameter search space; defaults below are the tuned values
GRID = {
    "word_emb": (64, 128, 256),
    "hidden": (64, 128, 256),
    "layers": (1, 2, 3),
    "dropout": (0.0, 0.1, 0.2, 0.5),
    "attention": (True, False),
    "skip_connections": (True, False),
    "batch": (32, 64, 128),
    "label_emb": (16, 32, 64),
}

METADATA_FIELD_CHOICES = ("speaker", "category", "tags", "entities")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "crawled_ranked"
    word_emb: int = 128
    hidden: int = 128
    layers: int = 2
    dropout: float = 0.1
    attention: bool = False
    skip_connections: bool = True
    batch: int = 32
    label_emb: int = 16
    cnn_filters: int = 32
    cnn_kernel: int = 32
    lr: float = 0.001
    patience: int = 3
    use_metadata: bool = False
    metadata_fields: tuple[str, ...] = METADATA_FIELD_CHOICES
    seed: int = 0
    max_epochs: int = 100
    token_cap: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.attention:
            raise ConfigError("attention is not implemented (grid selects False)")
        for name in ("word_emb", "hidden", "layers", "batch", "label_emb",
                     "cnn_filters", "cnn_kernel", "patience", "max_epochs", "token_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        fields = tuple(self.metadata_fields)
        object.__setattr__(self, "metadata_fields", fields)
        unknown = set(fields) - set(METADATA_FIELD_CHOICES)
        if unknown:
            raise ConfigError(
                f"unknown metadata fields {sorted(unknown)}; choose from {METADATA_FIELD_CHOICES}"
            )

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metadata_fields"] = list(self.metadata_fields)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "metadata_fields" in d:
            d = dict(d, metadata_fields=tuple(d["metadata_fields"]))
        return cls(**d)


def default_grid() -> dict[str, tuple]:
    return dict(GRID)
