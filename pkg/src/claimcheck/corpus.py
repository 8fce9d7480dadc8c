"""Loading, cleansing, deduplication, filtering, and splitting of claims.

The cleansing pipeline runs in a fixed order: strip verdict leaks from
claim texts, group duplicates, merge label aliases, drop rare labels,
then produce a label-stratified 80/10/10 split with duplicate groups
pinned to train. Every step is deterministic given (input, config,
seed), so split manifests are byte-identical across runs.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np

from .features import tokenize
from .refdata import DOMAIN_CODES, LABEL_INVENTORIES

log = logging.getLogger(__name__)


class CorpusFormatError(Exception):
    """Malformed corpus file (bad header, column count, field value)."""


class ConfigError(Exception):
    """Invalid pipeline configuration (merge tables, ratios, codes)."""


@dataclass(frozen=True)
class ClaimRecord:
    claim_id: str
    claim_text: str
    label: str
    domain: str
    claim_url: str = ""
    reason: str | None = None
    category: str | None = None
    speaker: str | None = None
    checker: str | None = None
    tags: tuple[str, ...] = ()
    article_title: str | None = None
    publish_date: date | None = None
    claim_date: date | None = None
    entities: tuple[str, ...] = ()


TSV_COLUMNS = (
    "claim_id", "claim_text", "label", "claim_url", "reason", "category",
    "speaker", "checker", "tags", "article_title", "publish_date",
    "claim_date", "domain",
)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_date(cell: str, path, lineno: int, column: str) -> date | None:
    if not cell:
        return None
    try:
        return date.fromisoformat(cell)
    except ValueError as exc:
        raise CorpusFormatError(f"{path}:{lineno}: bad {column} {cell!r}: {exc}") from None


def load_corpus(path, format: str = "tsv", domain_codes=DOMAIN_CODES) -> list[ClaimRecord]:
    """Read claim records from a TSV file.

    The header row must match the declared column order exactly. Empty
    cells become None for optional fields. Rows with a wrong column
    count or an unknown domain code fail with the offending line number.
    """
    if format != "tsv":
        raise CorpusFormatError(f"unsupported corpus format {format!r}")
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorpusFormatError(f"{path}: empty file, expected a header row")
    header = tuple(lines[0].split("\t"))
    if header != TSV_COLUMNS:
        raise CorpusFormatError(
            f"{path}: header mismatch, expected {list(TSV_COLUMNS)} got {list(header)}"
        )
    known = set(domain_codes)
    records: list[ClaimRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        cells = line.split("\t")
        if len(cells) != len(TSV_COLUMNS):
            raise CorpusFormatError(
                f"{path}:{lineno}: expected {len(TSV_COLUMNS)} columns, got {len(cells)}"
            )
        cells = [_unescape(c) for c in cells]
        row = dict(zip(TSV_COLUMNS, cells))
        if row["domain"] not in known:
            raise CorpusFormatError(
                f"{path}:{lineno}: unknown domain {row['domain']!r}; "
                f"valid codes: {', '.join(sorted(known))}"
            )
        if row["claim_id"] in seen_ids:
            raise CorpusFormatError(f"{path}:{lineno}: duplicate claim_id {row['claim_id']!r}")
        seen_ids.add(row["claim_id"])
        records.append(
            ClaimRecord(
                claim_id=row["claim_id"],
                claim_text=row["claim_text"],
                label=row["label"],
                domain=row["domain"],
                claim_url=row["claim_url"],
                reason=row["reason"] or None,
                category=row["category"] or None,
                speaker=row["speaker"] or None,
                checker=row["checker"] or None,
                tags=tuple(t for t in row["tags"].split("|") if t),
                article_title=row["article_title"] or None,
                publish_date=_parse_date(row["publish_date"], path, lineno, "publish_date"),
                claim_date=_parse_date(row["claim_date"], path, lineno, "claim_date"),
            )
        )
    return records


def save_corpus(records, path) -> None:
    lines = ["\t".join(TSV_COLUMNS)]
    for rec in records:
        cells = [
            rec.claim_id,
            rec.claim_text,
            rec.label,
            rec.claim_url,
            rec.reason or "",
            rec.category or "",
            rec.speaker or "",
            rec.checker or "",
            "|".join(rec.tags),
            rec.article_title or "",
            rec.publish_date.isoformat() if rec.publish_date else "",
            rec.claim_date.isoformat() if rec.claim_date else "",
            rec.domain,
        ]
        lines.append("\t".join(_escape(c) for c in cells))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# leak stripping

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    """Rule-based segmentation: break after ., ! or ? plus whitespace."""
    return [s for s in _SENTENCE_RE.split(text.strip()) if s]


@dataclass(frozen=True)
class LeakStripResult:
    record: ClaimRecord
    changed: bool
    discard: bool


def _label_pattern(label: str) -> re.Pattern | None:
    toks = tokenize(label)
    if not toks:
        return None
    # whole-token match of the label's token sequence, any separators between
    body = r"[\W_]+".join(re.escape(t) for t in toks)
    return re.compile(rf"(?<![^\W_]){body}(?![^\W_])", re.IGNORECASE | re.UNICODE)


def strip_label_leaks(record: ClaimRecord, label_lexicon) -> LeakStripResult:
    """Remove verdict giveaways from the first or last sentence.

    A sentence leaks when some label's tokens appear in it as a
    contiguous whole-token run. If those tokens make up at least half of
    the sentence's tokens the whole sentence goes; otherwise only the
    matching span. A record whose text would end up empty is flagged for
    discard instead.
    """
    patterns = [
        (lbl, _label_pattern(lbl))
        for lbl in sorted(label_lexicon, key=lambda s: -len(tokenize(s)))
    ]
    sentences = split_sentences(record.claim_text)
    if not sentences:
        return LeakStripResult(record, False, True)

    positions = {0, len(sentences) - 1}
    changed = False
    kept: list[str] = []
    for idx, sent in enumerate(sentences):
        if idx not in positions:
            kept.append(sent)
            continue
        new_sent = sent
        for lbl, pat in patterns:
            if pat is None or not pat.search(new_sent):
                continue
            n_label = len(tokenize(lbl))
            n_sent = len(tokenize(new_sent))
            if n_sent and n_label / n_sent >= 0.5:
                new_sent = ""
            else:
                new_sent = pat.sub(" ", new_sent)
                new_sent = re.sub(r"\s+", " ", new_sent).strip()
            changed = True
        if new_sent:
            kept.append(new_sent)

    if not changed:
        return LeakStripResult(record, False, False)
    new_text = " ".join(kept).strip()
    if not new_text:
        return LeakStripResult(record, True, True)
    return LeakStripResult(replace(record, claim_text=new_text), True, False)


# ---------------------------------------------------------------------------
# duplicates


def normalize_claim_text(text: str) -> str:
    """Duplicate-matching key: lowercase, collapse whitespace, strip trailing punctuation."""
    collapsed = re.sub(r"\s+", " ", text.lower()).strip()
    return collapsed.rstrip(".!?,;: ")


@dataclass(frozen=True)
class DuplicateGroup:
    normalized_text: str
    claim_ids: tuple[str, ...]
    labels: tuple[str, ...]

    @property
    def labels_agree(self) -> bool:
        return len(set(self.labels)) == 1


def resolve_duplicates(records) -> list[DuplicateGroup]:
    """Group records sharing normalized claim text; singletons excluded."""
    by_text: dict[str, list[ClaimRecord]] = {}
    for rec in records:
        by_text.setdefault(normalize_claim_text(rec.claim_text), []).append(rec)
    groups = []
    for text in sorted(by_text):
        members = by_text[text]
        if len(members) < 2:
            continue
        members.sort(key=lambda r: r.claim_id)
        groups.append(
            DuplicateGroup(
                normalized_text=text,
                claim_ids=tuple(r.claim_id for r in members),
                labels=tuple(r.label for r in members),
            )
        )
    return groups


def duplicate_stats(groups) -> tuple[int, int]:
    """(total instances inside duplicate groups, instances in groups with label disagreement)."""
    total = sum(len(g.claim_ids) for g in groups)
    disagreeing = sum(len(g.claim_ids) for g in groups if not g.labels_agree)
    return total, disagreeing


# ---------------------------------------------------------------------------
# label merging and rare-label filtering


def merge_labels(records, merge_table: dict[str, dict[str, str]]) -> list[ClaimRecord]:
    """Rewrite label aliases to canonical labels, per domain, exactly once.

    A merge target may not itself be a merge source (that would make the
    result depend on application count), and must belong to the domain's
    label inventory: the canonical release inventory when the domain is
    a known code, extended by labels observed in the input.
    """
    observed: dict[str, set[str]] = {}
    for rec in records:
        observed.setdefault(rec.domain, set()).add(rec.label)
    for domain, mapping in merge_table.items():
        inventory = set(LABEL_INVENTORIES.get(domain, ())) | observed.get(domain, set())
        for old, new in mapping.items():
            if new in mapping:
                raise ConfigError(
                    f"merge target {new!r} for domain {domain!r} is itself a merge source"
                )
            if new not in inventory:
                raise ConfigError(
                    f"merge target {new!r} not in label inventory of domain {domain!r}"
                )
    out = []
    for rec in records:
        mapping = merge_table.get(rec.domain, {})
        new_label = mapping.get(rec.label)
        out.append(replace(rec, label=new_label) if new_label else rec)
    return out


@dataclass(frozen=True)
class FilterReport:
    removed: dict[tuple[str, str], int]
    dropped_domains: tuple[str, ...]
    before: int
    after: int


def filter_rare_labels(records, min_count: int = 5) -> tuple[list[ClaimRecord], FilterReport]:
    """Drop every (domain, label) pair with fewer than ``min_count`` instances."""
    counts: dict[tuple[str, str], int] = {}
    for rec in records:
        key = (rec.domain, rec.label)
        counts[key] = counts.get(key, 0) + 1
    removed = {k: c for k, c in counts.items() if c < min_count}
    kept = [rec for rec in records if (rec.domain, rec.label) not in removed]
    before_domains = {rec.domain for rec in records}
    after_domains = {rec.domain for rec in kept}
    dropped = tuple(sorted(before_domains - after_domains))
    for domain in dropped:
        log.warning("domain %r lost all labels and was dropped", domain)
    return kept, FilterReport(removed, dropped, len(records), len(kept))


# ---------------------------------------------------------------------------
# stratified splitting


@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def as_dict(self) -> dict[str, tuple[str, ...]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _largest_remainder(n: int, ratios) -> list[int]:
    quotas = [n * r for r in ratios]
    counts = [int(q) for q in quotas]
    short = n - sum(counts)
    # distribute leftovers by descending fractional part; earlier bucket wins ties
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def stratified_split(records, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> CorpusSplit:
    """80/10/10 split stratified by (domain, label).

    Duplicate-text groups go wholly to train before stratification, so
    no dev/test text can reappear in train. Strata smaller than 3 also
    go wholly to train. Allocation within a stratum uses largest-
    remainder rounding over a seeded shuffle; the whole procedure is a
    pure function of (records, ratios, seed).
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = [rec.claim_id for rec in records]
    if len(set(ids)) != len(ids):
        raise ConfigError("claim_id values must be unique before splitting")

    pinned: set[str] = set()
    for group in resolve_duplicates(records):
        pinned.update(group.claim_ids)

    strata: dict[tuple[str, str], list[ClaimRecord]] = {}
    for rec in records:
        if rec.claim_id in pinned:
            continue
        strata.setdefault((rec.domain, rec.label), []).append(rec)

    rng = np.random.default_rng(seed)
    train: list[str] = sorted(pinned)
    dev: list[str] = []
    test: list[str] = []
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda r: r.claim_id)
        if len(members) < 3:
            log.warning("stratum %r has %d records; all to train", key, len(members))
            train.extend(r.claim_id for r in members)
            continue
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        n_train, n_dev, n_test = _largest_remainder(len(shuffled), ratios)
        train.extend(r.claim_id for r in shuffled[:n_train])
        dev.extend(r.claim_id for r in shuffled[n_train : n_train + n_dev])
        test.extend(r.claim_id for r in shuffled[n_train + n_dev :])
    return CorpusSplit(tuple(sorted(train)), tuple(sorted(dev)), tuple(sorted(test)), seed)


def save_split(split: CorpusSplit, directory) -> None:
    """One line-delimited claim_id file per split, with a provenance header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, ids in split.as_dict().items():
        lines = [f"# seed={split.seed}", f"# count={len(ids)}"]
        lines.extend(ids)
        (directory / f"{name}.txt").write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )


def load_split(directory) -> CorpusSplit:
    directory = Path(directory)
    parts: dict[str, tuple[str, ...]] = {}
    seed = None
    for name in ("train", "dev", "test"):
        path = directory / f"{name}.txt"
        if not path.exists():
            raise CorpusFormatError(f"missing split manifest {path}")
        ids: list[str] = []
        count = None
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.startswith("# seed="):
                seed = int(line.split("=", 1)[1])
            elif line.startswith("# count="):
                count = int(line.split("=", 1)[1])
            elif line:
                ids.append(line)
        if count is not None and count != len(ids):
            raise CorpusFormatError(f"{path}: header count {count} != {len(ids)} ids")
        parts[name] = tuple(ids)
    if seed is None:
        raise CorpusFormatError(f"{directory}: no seed header found")
    return CorpusSplit(parts["train"], parts["dev"], parts["test"], seed)


# ---------------------------------------------------------------------------
# domain tasks


@dataclass(frozen=True)
class DomainTask:
    code: str
    labels: tuple[str, ...]
    global_offset: int
    instance_count: int

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def label_index(self, label: str) -> int:
        return self.labels.index(label)


def build_domain_tasks(records) -> list[DomainTask]:
    """One task per domain, with disjoint contiguous global label ranges.

    Domains are ordered by code and labels alphabetically within a
    domain, so the global label space is reproducible from the records
    alone.
    """
    by_domain: dict[str, list[ClaimRecord]] = {}
    for rec in records:
        by_domain.setdefault(rec.domain, []).append(rec)
    tasks = []
    offset = 0
    for code in sorted(by_domain):
        members = by_domain[code]
        labels = tuple(sorted({r.label for r in members}))
        tasks.append(DomainTask(code, labels, offset, len(members)))
        offset += len(labels)
    return tasks


# ---------------------------------------------------------------------------
# pipeline driver


@dataclass(frozen=True)
class CleanseResult:
    records: list[ClaimRecord]
    split: CorpusSplit
    tasks: list[DomainTask]
    discarded_ids: tuple[str, ...]
    leak_stripped: int
    duplicate_groups: list[DuplicateGroup]
    filter_report: FilterReport = field(repr=False, default=None)


def cleanse_corpus(
    records,
    merge_table: dict[str, dict[str, str]] | None = None,
    min_count: int = 5,
    ratios=(0.8, 0.1, 0.1),
    seed: int = 0,
) -> CleanseResult:
    """Full pipeline: leak strip, dedup report, merge, filter, split."""
    lexicons: dict[str, set[str]] = {}
    for rec in records:
        lexicons.setdefault(rec.domain, set()).add(rec.label)
        if rec.domain in LABEL_INVENTORIES:
            lexicons[rec.domain].update(LABEL_INVENTORIES[rec.domain])

    stripped: list[ClaimRecord] = []
    discarded: list[str] = []
    n_changed = 0
    for rec in records:
        result = strip_label_leaks(rec, lexicons[rec.domain])
        if result.discard:
            discarded.append(rec.claim_id)
            continue
        if result.changed:
            n_changed += 1
        stripped.append(result.record)

    groups = resolve_duplicates(stripped)
    merged = merge_labels(stripped, merge_table or {})
    kept, report = filter_rare_labels(merged, min_count)
    split = stratified_split(kept, ratios, seed)
    tasks = build_domain_tasks(kept)
    return CleanseResult(
        records=kept,
        split=split,
        tasks=tasks,
        discarded_ids=tuple(discarded),
        leak_stripped=n_changed,
        duplicate_groups=groups,
        filter_report=report,
    )
