"""
The command-line workflow end to end
====================================

Everything the library does is also reachable through the `claimcheck`
executable. This script builds a throwaway workspace (corpus TSV plus a
JSON run config), then walks prepare -> train -> evaluate -> predict ->
report exactly as one would from a shell.
"""

import json
import tempfile
from pathlib import Path

from claimcheck import cli

workspace = Path(tempfile.mkdtemp(prefix="claimcheck-demo-"))

# --- a small single-domain corpus in the on-disk TSV format

header = ("claim_id\tclaim_text\tlabel\tclaim_url\treason\tcategory\tspeaker"
          "\tchecker\ttags\tarticle_title\tpublish_date\tclaim_date\tdomain")
rows = [header]
for i in range(40):
    verdict = "confirmed" if i % 2 == 0 else "retracted"
    label = "accurate" if i % 2 == 0 else "false"
    rows.append("\t".join([
        f"mpws-{i:03}", f"officials say the {verdict} report number {i} is out",
        label, f"https://example.org/{i}", "", "politics", f"speaker{i % 4}",
        "demo", "politics", "", "", "", "mpws",
    ]))
(workspace / "corpus.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")

(workspace / "run.json").write_text(json.dumps({
    "corpus": "corpus.tsv",
    "output": "out",
    "min_count": 1,
    "split_seed": 0,
    "target_task": "mpws",
    "mode": "mtl-lel",
    "model": {
        "variant": "claim_only", "word_emb": 12, "hidden": 8, "layers": 1,
        "dropout": 0.0, "batch": 16, "label_emb": 4, "lr": 0.01,
        "patience": 10, "seed": 0, "max_epochs": 16, "token_cap": 10,
    },
}), encoding="utf-8")


def run(*argv):
    print(f"\n$ claimcheck {' '.join(argv)}")
    rc = cli.main(["--workspace", str(workspace), *argv, "--config", "run.json"])
    print(f"  -> exit code {rc}")
    return rc


run("prepare")
run("prepare")                      # second call short-circuits on the fingerprint
run("train")
run("evaluate")
run("predict", "--claim-id", "mpws-007")
run("report")

out = workspace / "out"
print("\nartifacts under", out)
for path in sorted(out.rglob("*")):
    if path.is_file():
        print(" ", path.relative_to(out))
