"""
Evidence snippets on disk and metadata as model features
========================================================

Store search-result snippets in the checksummed fixture format, read
them back through the offline search client, and turn claim metadata
(speaker, category, tags, linked entities) into the multi-hot vectors
the model's CNN encoder consumes.
"""

import tempfile

from claimcheck.corpus import ClaimRecord
from claimcheck.evidence import (
    EvidenceSet,
    EvidenceSnippet,
    FixtureClient,
    FixtureStore,
    domain_frequency_report,
)
from claimcheck.features import (
    EntityAnnotation,
    build_metadata_inventories,
    encode_metadata,
)

# --- a claim with three retrieved snippets

claim = ClaimRecord(
    "pomt-100", "the harbor expansion is fully funded", "half-true", "pomt",
    speaker="city councilor", category="infrastructure",
    tags=("budget", "transport"),
)
snippets = EvidenceSet("pomt-100", (
    EvidenceSnippet("pomt-100", 1, "city approves harbor plan",
                    "the council vote covered phase one of the expansion",
                    "https://news.example.com/harbor"),
    EvidenceSnippet("pomt-100", 2, "fact check: harbor funding",
                    "only half the required bonds have been issued so far",
                    "https://factcheck.example.org/harbor-funding"),
    EvidenceSnippet("pomt-100", 3, "harbor expansion timeline",
                    "officials expect construction to begin next spring",
                    "https://news.example.com/timeline"),
))

with tempfile.TemporaryDirectory() as tmp:
    store = FixtureStore(tmp)
    store.store(snippets)
    client = FixtureClient(store)
    loaded = client.search(claim.claim_id, claim.claim_text)
    print(f"loaded {len(loaded.snippets)} snippets for {claim.claim_id}")
    for s in loaded.snippets:
        print(f"  {s.rank}. {s.title}")

# which sites answered: useful for spotting one source dominating

report = domain_frequency_report([snippets])
for site, share in report:
    print(f"  {share:.0f}% of snippets from {site}")

# --- metadata becomes index lists into train-built inventories

train_records = [
    claim,
    ClaimRecord("pomt-101", "crime fell citywide", "true", "pomt",
                speaker="police chief", category="crime", tags=("safety",)),
    ClaimRecord("pomt-102", "the stadium cost tripled", "false", "pomt",
                speaker="city councilor", category="infrastructure",
                tags=("budget",)),
]
linked = {"pomt-100": EntityAnnotation("pomt-100", ("harbor authority",))}
inventories = build_metadata_inventories(train_records, annotations=linked)
print(f"inventory sizes: {inventories.block_sizes()} (total {inventories.total_size})")

vec = encode_metadata(claim, inventories, entities=("harbor authority",))
print(f"active slots for {claim.claim_id}: {vec.active_indices().tolist()}")
