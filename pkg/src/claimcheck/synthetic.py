"""Synthetic corpora with planted, verifiable structure.

These generators back the property-style benchmarks: a planted-evidence
task where exactly one snippet per claim carries the verdict, a
shared-label-semantics benchmark where three domains express the same
three truth classes in different label vocabularies, and a
metadata-signal corpus where tags give the label away. Each returns
plain corpus records (plus evidence or ground truth where relevant), so
the full pipeline runs on them unchanged.
"""

from __future__ import annotations

import numpy as np

from .corpus import ClaimRecord, CorpusSplit, DomainTask
from .evidence import EvidenceSet, EvidenceSnippet


def _join(tokens) -> str:
    return " ".join(tokens)


# ---------------------------------------------------------------------------
# planted-evidence ranking benchmark


PLANTED_DOMAIN = "snes"
PLANTED_LABELS = ("true", "false", "mixture")
PLANTED_KEYWORDS = {"true": "corroborated", "false": "debunked", "mixture": "contested"}


def planted_evidence_corpus(n_claims: int = 500, n_distractors: int = 9, seed: int = 0,
                            n_topics: int = 60):
    """Claims whose label is readable only from one informative snippet.

    Topics come from a small shared pool, so the same claim text recurs
    with different labels and the text alone cannot predict the verdict.
    The informative snippet repeats the claim's topic and carries the
    label's verdict keyword; distractors pair other topics with random
    keywords. Claim and snippet both end with the topic tokens, which
    keeps the match visible to a recurrent encoder's final states.
    Returns (records, evidence sets by claim id, informative page index
    by claim id).
    """
    rng = np.random.default_rng(seed)
    keywords = list(PLANTED_KEYWORDS.values())
    topics = [
        [
            f"subj{rng.integers(25)}", f"verb{rng.integers(11)}",
            f"obj{rng.integers(17)}", f"num{rng.integers(13)}",
            f"place{rng.integers(19)}",
        ]
        for _ in range(n_topics)
    ]
    records: list[ClaimRecord] = []
    evidence: dict[str, EvidenceSet] = {}
    informative_at: dict[str, int] = {}
    for i in range(n_claims):
        label = PLANTED_LABELS[i % len(PLANTED_LABELS)]
        claim_id = f"{PLANTED_DOMAIN}-{i:05d}"
        topic = topics[int(rng.integers(n_topics))]
        records.append(
            ClaimRecord(
                claim_id=claim_id,
                claim_text=_join(["claim", "that"] + topic),
                label=label,
                domain=PLANTED_DOMAIN,
                claim_url=f"https://example.org/{claim_id}",
            )
        )
        slot = int(rng.integers(0, n_distractors + 1))
        informative_at[claim_id] = slot
        snippets = []
        for j in range(n_distractors + 1):
            page_topic = topic if j == slot else topics[int(rng.integers(n_topics))]
            keyword = PLANTED_KEYWORDS[label] if j == slot else keywords[int(rng.integers(3))]
            snippets.append(
                EvidenceSnippet(
                    claim_id=claim_id,
                    rank=j + 1,
                    title=_join(["verdict", keyword]),
                    snippet_text=_join(["regarding"] + page_topic),
                    url=f"https://news{j}.example.com/{claim_id}",
                )
            )
        evidence[claim_id] = EvidenceSet(claim_id, tuple(snippets))
    return records, evidence, informative_at


def interleaved_split(records, cycle: int = 10) -> CorpusSplit:
    """Deterministic 8/1/1 split by record position.

    Unlike the stratified splitter this never pins repeated claim texts
    to train; the planted-evidence benchmark relies on the same text
    appearing in every split with labels that only evidence resolves.
    """
    train, dev, test = [], [], []
    for i, rec in enumerate(records):
        bucket = train if i % cycle < cycle - 2 else dev if i % cycle == cycle - 2 else test
        bucket.append(rec.claim_id)
    return CorpusSplit(tuple(sorted(train)), tuple(sorted(dev)), tuple(sorted(test)), 0)


# ---------------------------------------------------------------------------
# shared-label-semantics benchmark (three domains, paraphrased labels)


SEMANTICS_DOMAINS = ("mpws", "peck", "huca")
SEMANTICS_LABELS = {
    "mpws": ("accurate", "false", "misleading"),
    "peck": ("true", "false", "partially true"),
    "huca": ("a little baloney", "a lot of baloney", "some baloney"),
}
_CLASS_SIGNALS = (
    ("verified", "sound", "supported", "credible", "solid",
     "attested", "documented", "grounded", "airtight", "watertight"),
    ("fabricated", "bogus", "baseless", "sham", "phony",
     "concocted", "spurious", "unfounded", "fictitious", "hollow"),
    ("selective", "murky", "lopsided", "thin", "muddled",
     "skewed", "partial", "foggy", "slanted", "blurry"),
)
_FILLERS = (
    "the", "statement", "made", "during", "a", "press", "briefing",
    "about", "policy", "figures", "this", "week",
)


def shared_semantics_corpus(sizes=(300, 60, 45), seed: int = 0):
    """Three domains with the same three truth classes under different names.

    Claim texts carry two class-specific signal words among shared
    fillers; domain sizes are deliberately unequal so the smallest
    domain profits from joint training. Returns (records, target domain
    code).
    """
    if len(sizes) != len(SEMANTICS_DOMAINS):
        raise ValueError("one size per domain required")
    rng = np.random.default_rng(seed)
    records: list[ClaimRecord] = []
    counter = 0
    for domain, size in zip(SEMANTICS_DOMAINS, sizes):
        for i in range(size):
            cls = i % 3
            label = SEMANTICS_LABELS[domain][cls]
            signals = rng.choice(_CLASS_SIGNALS[cls], size=2, replace=False)
            fillers = rng.choice(_FILLERS, size=5, replace=False)
            tokens = list(fillers[:2]) + [signals[0]] + list(fillers[2:4]) + [
                signals[1], fillers[4], f"case{counter}",
            ]
            records.append(
                ClaimRecord(
                    claim_id=f"{domain}-{i:05d}",
                    claim_text=_join(tokens),
                    label=label,
                    domain=domain,
                    claim_url=f"https://example.org/{domain}/{i}",
                )
            )
            counter += 1
    target = SEMANTICS_DOMAINS[np.argmin(sizes)]
    return records, target


# ---------------------------------------------------------------------------
# metadata-signal corpus (tags give the label away; text does not)


def metadata_signal_corpus(n: int = 240, seed: int = 0):
    """Claims with uninformative text whose tags encode the label."""
    rng = np.random.default_rng(seed)
    domain = "mpws"
    labels = SEMANTICS_LABELS[domain]
    records = []
    for i in range(n):
        label = labels[i % 3]
        fillers = rng.choice(_FILLERS, size=6, replace=False)
        records.append(
            ClaimRecord(
                claim_id=f"{domain}-{i:05d}",
                claim_text=_join(list(fillers) + [f"case{i}"]),
                label=label,
                domain=domain,
                claim_url=f"https://example.org/{domain}/{i}",
                speaker=f"person{int(rng.integers(0, 12))}",
                tags=("marker-" + label.replace(" ", "-"),),
            )
        )
    return records


# ---------------------------------------------------------------------------
# bare task structures for mask soundness checks


def synthetic_tasks(label_counts=(2, 3, 4, 5, 6)) -> list[DomainTask]:
    """Disjoint-label tasks without any backing records."""
    tasks = []
    offset = 0
    for idx, count in enumerate(label_counts):
        code = f"dom{idx}"
        labels = tuple(f"{code}_label{j}" for j in range(count))
        tasks.append(DomainTask(code, labels, offset, count * 10))
        offset += count
    return tasks
