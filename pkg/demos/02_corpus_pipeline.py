"""
Corpus cleansing, deduplication, and stratified splitting
=========================================================

Run a small hand-built corpus through the full preparation pipeline:
verdict words leaking into claim text are stripped, duplicates are
reported, rare labels are filtered, and the survivors are split into
train/dev/test with per-label stratification.
"""

import tempfile
from pathlib import Path

from claimcheck.corpus import (
    ClaimRecord,
    cleanse_corpus,
    duplicate_stats,
    load_corpus,
    save_corpus,
)

# --- two small domains, six claims per (domain, label) stratum

topics = ("budget", "harbor", "election", "railway", "census", "tariff")
records = []
for domain in ("pomt", "snes"):
    for label, verb in (("true", "confirmed"), ("false", "retracted")):
        for i, topic in enumerate(topics):
            records.append(ClaimRecord(
                claim_id=f"{domain}-{label}-{i}",
                claim_text=f"the {domain} desk {verb} the {topic} figure {i}",
                label=label, domain=domain,
                speaker=f"speaker {i % 3}", category="politics",
            ))

# a verdict word leaking into the claim text, a duplicated text with a
# conflicting label, and a label too rare to keep
records.append(ClaimRecord("pomt-leak", "reporters rated the bridge claim false last week",
                           "false", "pomt"))
records.append(ClaimRecord("pomt-dupe", "The POMT desk confirmed the budget figure 0!",
                           "false", "pomt"))
records.append(ClaimRecord("pomt-rare", "the new rail line is fully funded",
                           "half-true", "pomt"))

result = cleanse_corpus(records, min_count=3, ratios=(0.6, 0.2, 0.2), seed=0)

print(f"kept {len(result.records)} of {len(records)} claims")
print(f"leak-stripped claims: {result.leak_stripped}")
for rec in result.records:
    if rec.claim_id == "pomt-leak":
        print(f"  pomt-leak text is now: {rec.claim_text!r}")

total, disagreeing = duplicate_stats(result.duplicate_groups)
print(f"duplicate instances: {total} ({disagreeing} in groups with conflicting labels)")
print(f"rare labels removed: {result.filter_report.removed}")

print("split sizes:", len(result.split.train), len(result.split.dev),
      len(result.split.test))
for task in result.tasks:
    print(f"  task {task.code}: labels {task.labels}")

# --- the same records round-trip through the TSV format used on disk

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "corpus.tsv"
    save_corpus(result.records, path)
    again = load_corpus(path)
    print(f"TSV round-trip: {len(again)} records, "
          f"first is {again[0].claim_id} / {again[0].label!r}")
