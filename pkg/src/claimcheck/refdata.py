"""Reference constants shipped with the dataset distribution.

Domain codes, per-domain label inventories, and per-domain instance
counts as published with the multi-domain fact-checking corpus. The
inventories are transcribed as released; a couple of rows are known to
disagree with the summary statistics of the release notes and are kept
as printed.
"""

from __future__ import annotations

DOMAIN_CODES = (
    "abbc", "afck", "bove", "chct", "clck", "faan", "faly", "fani", "farg",
    "goop", "hoer", "huca", "mpws", "obry", "para", "peck", "pomt", "pose",
    "ranz", "snes", "thal", "thet", "tron", "vees", "vogo", "wast",
)

# Canonical per-domain label inventories. Order as released.
LABEL_INVENTORIES: dict[str, tuple[str, ...]] = {
    "abbc": ("in-between", "in-the-red", "in-the-green"),
    "afck": (
        "correct", "incorrect", "mostly-correct", "unproven", "misleading",
        "understated", "exaggerated",
    ),
    "bove": ("none", "rating: false"),
    "chct": ("verdict: true", "verdict: false", "verdict: unsubstantiated", "none"),
    "clck": ("incorrect", "unsupported", "misleading"),
    "faan": (
        "factscan score: false", "factscan score: true", "factscan score: misleading",
    ),
    "faly": ("true", "none", "partly true", "unverified", "false"),
    "fani": ("conclusion: accurate", "conclusion: false", "conclusion: unclear"),
    "farg": (
        "false", "none", "distorts the facts", "misleading", "spins the facts",
        "no evidence", "not the whole story", "unsupported", "cherry picks",
        "exaggerates", "out of context",
    ),
    "goop": ("0", "1", "2", "3", "4", "10"),
    "hoer": (
        "facebook scams", "true messages", "bogus warning", "statirical reports",
        "fake news", "unsubstantiated messages", "misleading recommendations",
    ),
    "huca": ("a lot of baloney", "a little baloney", "some baloney"),
    "mpws": ("accurate", "false", "misleading"),
    "obry": ("mostly_true", "verified", "unobservable", "mostly_false"),
    "para": (
        "mostly false", "mostly true", "half-true", "false", "true",
        "pants on fire!", "half flip",
    ),
    "peck": ("false", "true", "partially true"),
    "pomt": (
        "half-true", "false", "mostly true", "mostly false", "true",
        "pants on fire!", "full flop", "half flip", "no flip",
    ),
    "pose": (
        "promise kept", "promise broken", "compromise", "in the works",
        "not yet rated", "stalled",
    ),
    "ranz": ("fact", "fiction"),
    "snes": (
        "false", "true", "mixture", "unproven", "mostly false", "mostly true",
        "miscaptioned", "legend", "outdated", "misattributed", "scam",
        "correct attribution",
    ),
    "thal": ("none", "we rate this claim false"),
    "thet": ("none", "mostly false", "mostly true", "half true", "false", "true"),
    "tron": (
        "fiction!", "truth!", "unproven!", "truth! & fiction!", "mostly fiction!",
        "none", "disputed!", "truth! & misleading!", "authorship confirmed!",
        "mostly truth!", "incorrect attribution!", "scam!", "investigation pending!",
        "confirmed authorship!", "commentary!", "previously truth! now resolved!",
        "outdated!", "truth! & outdated!", "virus!", "fiction! & satire!",
        "truth! & unproven!", "misleading!", "grass roots movement!", "opinion!",
        "correct attribution!", "truth! & disputed!", "inaccurate attribution!",
    ),
    "vees": ("none", "fake", "misleading", "false"),
    "vogo": (
        "none", "determination: false", "determination: true",
        "determination: mostly true", "determination: misleading",
        "determination: barely true", "determination: huckster propaganda",
        "determination: a stretch",
    ),
    "wast": (
        "4 pinnochios", "3 pinnochios", "2 pinnochios", "false",
        "not the whole story", "needs context", "none",
    ),
}

# Published per-domain (instances, label count) summary of the cleansed corpus.
DOMAIN_STATS: dict[str, tuple[int, int]] = {
    "abbc": (436, 3), "afck": (433, 7), "bove": (295, 2), "chct": (355, 4),
    "clck": (38, 3), "faan": (111, 3), "faly": (111, 5), "fani": (20, 3),
    "farg": (485, 11), "goop": (2943, 6), "hoer": (1310, 7), "huca": (34, 3),
    "mpws": (47, 3), "obry": (59, 4), "para": (222, 7), "peck": (65, 3),
    "pomt": (15390, 9), "pose": (1361, 6), "ranz": (21, 2), "snes": (6455, 12),
    "thal": (163, 7), "thet": (79, 6), "tron": (3423, 27), "vees": (504, 4),
    "vogo": (654, 8), "wast": (201, 7),
}

TOTAL_CLAIMS_RAW = 36_534
TOTAL_CLAIMS_CLEANSED = 34_918
