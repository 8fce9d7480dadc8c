"""Tokenization, vocabulary construction, and metadata/entity encodings."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# unicode word characters minus underscore; everything else splits
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

PAD_ID = 0
UNK_ID = 1


def tokenize(text: str) -> list[str]:
    """Lowercased, punctuation-split tokens. Deterministic and idempotent."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Token to id mapping with reserved ids 0 (padding) and 1 (unknown)."""

    token_to_id: dict[str, int]
    min_frequency: int = 1

    def __len__(self) -> int:
        return len(self.token_to_id) + 2

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: list[str], cap: int | None = None) -> np.ndarray:
        """Ids for ``tokens``, truncated and right-padded to ``cap`` if given."""
        ids = [self.token_to_id.get(t, UNK_ID) for t in tokens]
        if cap is not None:
            ids = ids[:cap] + [PAD_ID] * (cap - len(ids))
        return np.asarray(ids, dtype=np.int64)


def build_vocab(sequences, min_frequency: int = 1) -> Vocabulary:
    """Vocabulary over training token sequences.

    Ids are assigned by descending frequency with lexicographic
    tie-break, starting after the two reserved slots, so rebuilding from
    a shuffled corpus yields the identical mapping.
    """
    counts: dict[str, int] = {}
    for seq in sequences:
        for tok in seq:
            counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_frequency]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary({t: i + 2 for i, t in enumerate(kept)}, min_frequency)


# ---------------------------------------------------------------------------
# entity annotations (precomputed by an external linker, joined by claim id)


@dataclass(frozen=True)
class EntityAnnotation:
    claim_id: str
    entities: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.entities)


def load_entity_annotations(path, known_claim_ids=None) -> dict[str, EntityAnnotation]:
    """Parse a sidecar TSV of ``claim_id \\t entity1|entity2|...`` lines.

    Annotations for claim ids outside ``known_claim_ids`` (when given)
    are skipped with a warning rather than failing the load.
    """
    out: dict[str, EntityAnnotation] = {}
    known = set(known_claim_ids) if known_claim_ids is not None else None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields")
        claim_id, joined = parts
        if known is not None and claim_id not in known:
            log.warning("entity annotation for unknown claim %r skipped", claim_id)
            continue
        entities = tuple(e for e in joined.split("|") if e)
        out[claim_id] = EntityAnnotation(claim_id, entities)
    return out


def entity_stats(annotations: dict[str, EntityAnnotation], n_claims_total: int):
    """Corpus-level linking stats: total entities, annotated claims, coverage."""
    with_entities = [a for a in annotations.values() if a.count > 0]
    n_entities = sum(a.count for a in with_entities)
    n_claims_with = len(with_entities)
    fraction = n_claims_with / n_claims_total if n_claims_total else 0.0
    return n_entities, n_claims_with, fraction


def entity_count_histogram(annotations: dict[str, EntityAnnotation]) -> dict[int, int]:
    hist: dict[int, int] = {}
    for a in annotations.values():
        if a.count > 0:
            hist[a.count] = hist.get(a.count, 0) + 1
    return hist


# ---------------------------------------------------------------------------
# metadata encoding: binary blocks over per-field train-split inventories

METADATA_FIELDS = ("speaker", "category", "tags", "entities")


@dataclass(frozen=True)
class MetadataInventories:
    """Per-field value inventories, built from the training split only."""

    speaker: tuple[str, ...]
    category: tuple[str, ...]
    tags: tuple[str, ...]
    entities: tuple[str, ...]
    index: dict[str, dict[str, int]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self,
            "index",
            {f: {v: i for i, v in enumerate(getattr(self, f))} for f in METADATA_FIELDS},
        )

    def block_sizes(self) -> dict[str, int]:
        return {f: len(getattr(self, f)) for f in METADATA_FIELDS}

    @property
    def total_size(self) -> int:
        return sum(self.block_sizes().values())


def build_metadata_inventories(train_records, annotations=None) -> MetadataInventories:
    """Collect sorted value inventories from training records.

    Reason, checker, and date fields never enter an inventory: the first
    two leak the verdict and temporal modelling is out of scope.
    """
    speakers, categories, tags = set(), set(), set()
    for rec in train_records:
        if rec.speaker:
            speakers.add(rec.speaker)
        if rec.category:
            categories.add(rec.category)
        tags.update(t for t in rec.tags if t)
    entities: set[str] = set()
    if annotations:
        train_ids = {rec.claim_id for rec in train_records}
        for ann in annotations.values():
            if ann.claim_id in train_ids:
                entities.update(ann.entities)
    return MetadataInventories(
        speaker=tuple(sorted(speakers)),
        category=tuple(sorted(categories)),
        tags=tuple(sorted(tags)),
        entities=tuple(sorted(entities)),
    )


@dataclass(frozen=True)
class MetadataVector:
    """Concatenated binary encoding [speaker; category; tags; entities]."""

    speaker_onehot: np.ndarray
    category_onehot: np.ndarray
    tags_multihot: np.ndarray
    entities_multihot: np.ndarray

    def concatenated(self) -> np.ndarray:
        return np.concatenate(
            [self.speaker_onehot, self.category_onehot, self.tags_multihot, self.entities_multihot]
        )

    def active_indices(self) -> np.ndarray:
        """Positions of set bits in the concatenated vector."""
        return np.nonzero(self.concatenated())[0]


def encode_metadata(record, inventories: MetadataInventories, entities=()) -> MetadataVector:
    """Binary metadata blocks for one claim.

    Values unseen at inventory-build time encode as all zeros in their
    block; there is no unknown bucket.
    """

    def onehot(field_name: str, value: str | None) -> np.ndarray:
        vec = np.zeros(len(getattr(inventories, field_name)), dtype=np.float32)
        if value:
            idx = inventories.index[field_name].get(value)
            if idx is not None:
                vec[idx] = 1.0
        return vec

    def multihot(field_name: str, values) -> np.ndarray:
        vec = np.zeros(len(getattr(inventories, field_name)), dtype=np.float32)
        table = inventories.index[field_name]
        for v in values:
            idx = table.get(v)
            if idx is not None:
                vec[idx] = 1.0
        return vec

    return MetadataVector(
        speaker_onehot=onehot("speaker", record.speaker),
        category_onehot=onehot("category", record.category),
        tags_multihot=multihot("tags", record.tags),
        entities_multihot=multihot("entities", entities),
    )


def restrict_inventories(inventories: MetadataInventories, fields) -> MetadataInventories:
    """Empty out every field not in ``fields`` (for metadata ablations)."""
    keep = set(fields)
    return MetadataInventories(
        **{f: (getattr(inventories, f) if f in keep else ()) for f in METADATA_FIELDS}
    )


def dump_inventories(inventories: MetadataInventories, directory) -> None:
    """Write one sorted text file per field for auditing."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for field_name in METADATA_FIELDS:
        values = getattr(inventories, field_name)
        (directory / f"{field_name}.txt").write_text(
            "".join(v + "\n" for v in values), encoding="utf-8"
        )
