"""Command-line operator surface.

Subcommands: prepare, train, evaluate, ablate, predict, report. A JSON
run-config file declares paths and model settings; command-line flags
override file values. All paths resolve against the workspace root.
Exit codes: 0 success, 1 validation problem, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import features as features_mod
from . import train as train_mod
from .config import ConfigError, ModelConfig
from .evidence import FixtureClient, FixtureStore, fetch_snippets
from .model import VeracityModel


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


RUN_CONFIG_KEYS = {
    "corpus": str,
    "snippets": str,
    "entities": str,
    "output": str,
    "split_seed": int,
    "min_count": int,
    "merge_table": dict,
    "model": dict,
    "target_task": str,
    "mode": str,
}

MODES = {"stl": "single", "mtl": "per_task", "mtl-lel": "lel"}


def load_run_config(path: Path, workspace: Path) -> dict:
    if not path.exists():
        raise CliValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliValidationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise CliValidationError(f"{path}: top level must be an object")
    unknown = set(raw) - set(RUN_CONFIG_KEYS)
    if unknown:
        raise CliValidationError(f"{path}: unknown config keys: {sorted(unknown)}")
    for key, value in raw.items():
        if not isinstance(value, RUN_CONFIG_KEYS[key]):
            raise CliValidationError(
                f"{path}: key {key!r} must be {RUN_CONFIG_KEYS[key].__name__}"
            )
    for key in ("corpus", "snippets", "entities", "output"):
        if key in raw:
            raw[key] = str((workspace / raw[key]).resolve())
    return raw


def _merge_flags(cfg: dict, args) -> dict:
    """Flags beat config-file values."""
    for key in ("corpus", "snippets", "entities", "output", "target_task", "mode"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "split_seed", None) is not None:
        cfg["split_seed"] = args.split_seed
    if getattr(args, "min_count", None) is not None:
        cfg["min_count"] = args.min_count
    model = dict(cfg.get("model", {}))
    for key in ("variant", "seed", "batch", "max_epochs", "hidden", "layers",
                "word_emb", "label_emb", "dropout", "lr", "token_cap"):
        value = getattr(args, key, None)
        if value is not None:
            model[key] = value
    if getattr(args, "use_metadata", None) is not None:
        model["use_metadata"] = args.use_metadata
    cfg["model"] = model
    return cfg


def _require(cfg: dict, keys, command: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise CliValidationError(
            f"{command} requires {', '.join(missing)} (set in config file or via flags)"
        )


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(cfg.get("model", {}))
    except ConfigError as exc:
        raise CliValidationError(str(exc)) from None


@contextmanager
def output_lock(output_dir: Path):
    output_dir.mkdir(parents=True, exist_ok=True)
    lock = output_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliValidationError(
            f"output dir {output_dir} is locked by another invocation ({lock})"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# shared artifact plumbing


def _prepared_dir(cfg: dict) -> Path:
    return Path(cfg["output"]) / "prepared"


def _input_fingerprint(cfg: dict) -> str:
    h = hashlib.sha256()
    h.update(Path(cfg["corpus"]).read_bytes())
    h.update(json.dumps(cfg.get("merge_table", {}), sort_keys=True).encode())
    h.update(str(cfg.get("min_count", 5)).encode())
    h.update(str(cfg.get("split_seed", 0)).encode())
    if cfg.get("entities"):
        h.update(Path(cfg["entities"]).read_bytes())
    return h.hexdigest()


def _load_prepared(cfg: dict):
    prepared = _prepared_dir(cfg)
    cleansed = prepared / "cleansed.tsv"
    if not cleansed.exists():
        raise CliValidationError(f"no prepared corpus at {cleansed}; run prepare first")
    records = corpus_mod.load_corpus(cleansed)
    split = corpus_mod.load_split(prepared / "split")
    tasks = corpus_mod.build_domain_tasks(records)
    return records, split, tasks


def _load_evidence(cfg: dict, records, model_cfg: ModelConfig):
    if model_cfg.variant not in ("crawled_avg", "crawled_ranked"):
        return None
    snippets = cfg.get("snippets")
    if not snippets or not Path(snippets).is_dir():
        raise CliValidationError(
            f"variant {model_cfg.variant} needs a snippets dir (got {snippets!r})"
        )
    store = FixtureStore(Path(snippets).parent if Path(snippets).name == "snippets"
                         else Path(snippets))
    client = FixtureClient(store)
    return {rec.claim_id: fetch_snippets(rec, client) for rec in records}


def _load_annotations(cfg: dict, records):
    path = cfg.get("entities")
    if not path or not Path(path).exists():
        return None
    ids = {rec.claim_id for rec in records}
    return features_mod.load_entity_annotations(path, ids)


def _build_data(cfg: dict, model_cfg: ModelConfig):
    records, split, tasks = _load_prepared(cfg)
    evidence = _load_evidence(cfg, records, model_cfg)
    annotations = _load_annotations(cfg, records)
    data = train_mod.build_training_data(
        records, split, tasks, model_cfg, evidence_sets=evidence, annotations=annotations
    )
    return records, split, tasks, data


def _run_tag(cfg: dict) -> str:
    return f"{cfg['target_task']}__{cfg.get('mode', 'mtl-lel')}"


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(cfg: dict) -> int:
    _require(cfg, ("corpus", "output"), "prepare")
    if not Path(cfg["corpus"]).exists():
        raise CliValidationError(f"corpus file not found: {cfg['corpus']}")
    prepared = _prepared_dir(cfg)
    fingerprint_file = prepared / "fingerprint.json"
    fingerprint = _input_fingerprint(cfg)
    if fingerprint_file.exists():
        stored = json.loads(fingerprint_file.read_text("utf-8")).get("fingerprint")
        if stored == fingerprint and (prepared / "cleansed.tsv").exists():
            print("up to date")
            return 0

    records = corpus_mod.load_corpus(cfg["corpus"])
    result = corpus_mod.cleanse_corpus(
        records,
        merge_table=cfg.get("merge_table"),
        min_count=cfg.get("min_count", 5),
        seed=cfg.get("split_seed", 0),
    )
    prepared.mkdir(parents=True, exist_ok=True)
    corpus_mod.save_corpus(result.records, prepared / "cleansed.tsv")
    corpus_mod.save_split(result.split, prepared / "split")
    train_records = {cid for cid in result.split.train}
    inventories = features_mod.build_metadata_inventories(
        [r for r in result.records if r.claim_id in train_records],
        _load_annotations(cfg, result.records),
    )
    features_mod.dump_inventories(inventories, prepared / "inventories")

    dup_total, dup_disagree = corpus_mod.duplicate_stats(result.duplicate_groups)
    summary = {
        "claims_in": len(records),
        "claims_out": len(result.records),
        "discarded_empty": len(result.discarded_ids),
        "leak_stripped": result.leak_stripped,
        "duplicate_instances": dup_total,
        "duplicate_label_disagreements": dup_disagree,
        "splits": {name: len(ids) for name, ids in result.split.as_dict().items()},
        "domains": {
            t.code: {"instances": t.instance_count, "labels": t.n_labels}
            for t in result.tasks
        },
    }
    (prepared / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", "utf-8")
    fingerprint_file.write_text(json.dumps({"fingerprint": fingerprint}) + "\n", "utf-8")

    print(f"claims: {summary['claims_in']} -> {summary['claims_out']}")
    print(f"duplicates: {dup_total} instances, {dup_disagree} with differing labels")
    print(f"{'domain':8} {'instances':>9} {'labels':>6}")
    for code, stats in sorted(summary["domains"].items()):
        print(f"{code:8} {stats['instances']:>9} {stats['labels']:>6}")
    return 0


def cmd_train(cfg: dict) -> int:
    _require(cfg, ("corpus", "output", "target_task"), "train")
    model_cfg = _model_config(cfg)
    mode = cfg.get("mode", "mtl-lel")
    if mode not in MODES:
        raise CliValidationError(f"unknown mode {mode!r}; choose from {sorted(MODES)}")
    records, split, tasks, data = _build_data(cfg, model_cfg)
    if cfg["target_task"] not in {t.code for t in tasks}:
        raise CliValidationError(f"target task {cfg['target_task']!r} not in corpus")
    out = Path(cfg["output"])
    tag = _run_tag(cfg)
    log_path = out / "runs" / f"{tag}.jsonl"
    if mode == "stl":
        run = train_mod.train_stl(data, model_cfg, cfg["target_task"], log_path=log_path)
    else:
        run = train_mod.train_mtl(data, model_cfg, cfg["target_task"],
                                  head_mode=MODES[mode], log_path=log_path)
    ckpt = out / "models" / f"{tag}.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    run.model.save(ckpt, vocab_hash=data.vocab_hash())
    print(json.dumps(run.summary(), indent=2))
    print(f"checkpoint: {ckpt}")
    return 0


def _load_checkpoint(cfg: dict, data) -> VeracityModel:
    ckpt = Path(cfg["output"]) / "models" / f"{_run_tag(cfg)}.ckpt"
    if not ckpt.exists():
        raise CliValidationError(f"no checkpoint at {ckpt}; run train first")
    try:
        return VeracityModel.load(ckpt, expected_vocab_hash=data.vocab_hash())
    except ConfigError as exc:
        raise CliValidationError(str(exc)) from None


def cmd_evaluate(cfg: dict, split_name: str = "test") -> int:
    _require(cfg, ("corpus", "output", "target_task"), "evaluate")
    model_cfg = _model_config(cfg)
    records, split, tasks, data = _build_data(cfg, model_cfg)
    model = _load_checkpoint(cfg, data)
    suite = eval_mod.evaluate_suite(model, data, split_name)
    out = Path(cfg["output"]) / "eval" / _run_tag(cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        {"domain": r.domain, "support": r.support,
         "micro_f1": f"{r.micro_f1:.6f}", "macro_f1": f"{r.macro_f1:.6f}"}
        for r in suite.reports
    ]
    rows.append({"domain": "mean", "support": "",
                 "micro_f1": f"{suite.mean_micro_f1:.6f}",
                 "macro_f1": f"{suite.mean_macro_f1:.6f}"})
    eval_mod.write_rows_csv(out / "suite.csv", rows)
    for r in suite.reports:
        eval_mod.confusion_to_csv(r, out / f"confusion_{r.domain}.csv")
    (out / "report.md").write_text(eval_mod.suite_to_markdown(suite), "utf-8")
    print(eval_mod.suite_to_markdown(suite))
    return 0


def cmd_ablate(cfg: dict, ablation_mode: str, seeds) -> int:
    _require(cfg, ("corpus", "output", "target_task"), "ablate")
    model_cfg = _model_config(cfg)
    records, split, tasks = _load_prepared(cfg)
    evidence = _load_evidence(cfg, records, model_cfg)
    annotations = _load_annotations(cfg, records)
    out = Path(cfg["output"]) / "ablation"
    if ablation_mode == "metadata":
        rows = eval_mod.run_metadata_ablation(
            records, split, tasks, model_cfg, cfg["target_task"],
            evidence_sets=evidence, annotations=annotations,
        )
        eval_mod.write_rows_csv(out / "metadata.csv", rows)
    elif ablation_mode == "training":
        rows = eval_mod.run_training_ablation(
            records, split, tasks, model_cfg, cfg["target_task"],
            evidence_sets=evidence, annotations=annotations, seeds=tuple(seeds),
        )
        eval_mod.write_rows_csv(out / "training.csv", rows)
    else:
        raise CliValidationError(f"unknown ablation mode {ablation_mode!r}")
    for row in rows:
        print(json.dumps(row))
    return 0


def cmd_predict(cfg: dict, claim_id: str | None, text: str | None,
                domain: str | None) -> int:
    _require(cfg, ("corpus", "output", "target_task"), "predict")
    model_cfg = _model_config(cfg)
    records, split, tasks, data = _build_data(cfg, model_cfg)
    model = _load_checkpoint(cfg, data)
    by_id = {rec.claim_id: rec for rec in records}
    if claim_id:
        if claim_id not in by_id:
            raise CliValidationError(f"claim {claim_id!r} not in prepared corpus")
        record = by_id[claim_id]
    elif text and domain:
        record = corpus_mod.ClaimRecord(
            claim_id="adhoc-00000", claim_text=text, label="", domain=domain
        )
    else:
        raise CliValidationError("predict needs --claim-id or both --text and --domain")
    task = data.task(record.domain)

    evidence = None
    use_evidence = model_cfg.variant in ("crawled_avg", "crawled_ranked")
    if use_evidence:
        _require(cfg, ("snippets",), "predict with an evidence-based variant")
        store = FixtureStore(Path(cfg["snippets"]).parent
                             if Path(cfg["snippets"]).name == "snippets"
                             else Path(cfg["snippets"]))
        evidence = fetch_snippets(record, FixtureClient(store))

    cap = model_cfg.token_cap
    from .model import MAX_EVIDENCE, TaskBatch

    claim_tokens = data.vocab.encode(features_mod.tokenize(record.claim_text), cap)
    evid = np.zeros((MAX_EVIDENCE, cap), dtype=np.int64)
    avail = np.zeros(MAX_EVIDENCE, dtype=np.float64)
    urls = [None] * MAX_EVIDENCE
    if evidence is not None:
        for j, sn in enumerate(evidence.snippets[:MAX_EVIDENCE]):
            evid[j] = data.vocab.encode(
                features_mod.tokenize(sn.title) + features_mod.tokenize(sn.snippet_text), cap
            )
            avail[j] = 1.0
            urls[j] = sn.url
    ann = (_load_annotations(cfg, records) or {}).get(record.claim_id)
    vec = features_mod.encode_metadata(record, data.inventories,
                                       ann.entities if ann else ())
    slots = vec.active_indices().astype(np.int64)
    batch = TaskBatch(
        task_code=record.domain,
        claim_ids=claim_tokens.reshape(1, -1),
        labels_local=np.zeros(1, dtype=np.int64),
        labels_global=np.zeros(1, dtype=np.int64),
    )
    if use_evidence:
        batch.evid_ids = evid
        batch.evid_avail = avail.reshape(-1, 1)
    if model_cfg.use_metadata:
        batch.meta_slots = slots.reshape(1, -1)
        batch.meta_mask = np.ones((1, len(slots)))
    result = model.predict(batch)
    row = result.probs.data[0]
    if model.head_mode == "lel":
        row = row[task.global_offset : task.global_offset + task.n_labels]
    payload = {
        "claim_id": record.claim_id,
        "domain": record.domain,
        "probabilities": {label: float(p) for label, p in zip(task.labels, row)},
        "fallback_claim_only": bool(result.fallback[0]),
    }
    if result.ranking is not None:
        payload["evidence_ranking"] = [
            {"position": j + 1, "weight": float(w), "url": urls[j]}
            for j, w in enumerate(result.ranking[0])
        ]
    print(json.dumps(payload, indent=2))
    return 0


def cmd_report(cfg: dict) -> int:
    _require(cfg, ("output",), "report")
    out = Path(cfg["output"])
    eval_root = out / "eval"
    runs = sorted(eval_root.glob("*/suite.csv")) if eval_root.exists() else []
    if not runs:
        print("no runs found")
        return 0
    import csv as csv_lib

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# Run reports", ""]
    for suite_csv in runs:
        tag = suite_csv.parent.name
        lines.append(f"## {tag}")
        lines.append("")
        lines.append("| domain | support | micro F1 | macro F1 |")
        lines.append("| --- | --- | --- | --- |")
        with open(suite_csv, newline="", encoding="utf-8") as fh:
            for row in csv_lib.DictReader(fh):
                lines.append(
                    f"| {row['domain']} | {row['support']} "
                    f"| {row['micro_f1']} | {row['macro_f1']} |"
                )
        lines.append("")
        for conf_csv in sorted(suite_csv.parent.glob("confusion_*.csv")):
            domain = conf_csv.stem.replace("confusion_", "")
            with open(conf_csv, newline="", encoding="utf-8") as fh:
                table = list(csv_lib.reader(fh))
            labels = table[0][1:]
            matrix = np.array([[int(c) for c in row[1:]] for row in table[1:]])
            fig, ax = plt.subplots(figsize=(max(4, len(labels)), max(3, len(labels) * 0.8)))
            ax.imshow(matrix, cmap="Blues")
            ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=7)
            ax.set_yticks(range(len(labels)), labels, fontsize=7)
            for i in range(len(labels)):
                for j in range(len(labels)):
                    ax.text(j, i, str(matrix[i, j]), ha="center", va="center", fontsize=6)
            ax.set_xlabel("predicted")
            ax.set_ylabel("gold")
            ax.set_title(f"{tag}: {domain}")
            fig.tight_layout()
            png = report_dir / f"{tag}_confusion_{domain}.png"
            fig.savefig(png, dpi=120)
            plt.close(fig)
            lines.append(f"![confusion {domain}]({png.name})")
            lines.append("")
    (report_dir / "report.md").write_text("\n".join(lines) + "\n", "utf-8")
    print(f"report written to {report_dir / 'report.md'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="claimcheck",
                     description="Multi-domain claim veracity toolkit")
    parser.add_argument("--workspace", default=".",
                        help="root for relative paths (default: cwd)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--corpus")
        p.add_argument("--snippets")
        p.add_argument("--entities")
        p.add_argument("--output")
        p.add_argument("--split-seed", type=int, dest="split_seed")
        p.add_argument("--target-task", dest="target_task")
        p.add_argument("--mode", choices=sorted(MODES))
        p.add_argument("--variant")
        p.add_argument("--seed", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--max-epochs", type=int, dest="max_epochs")
        p.add_argument("--use-metadata", dest="use_metadata", action="store_true",
                       default=None)
        p.add_argument("--no-metadata", dest="use_metadata", action="store_false")
        return p

    p = common(sub.add_parser("prepare", help="cleanse corpus, write splits"))
    p.add_argument("--min-count", type=int, dest="min_count")

    common(sub.add_parser("train", help="train a model for one target task"))
    p = common(sub.add_parser("evaluate", help="score a trained checkpoint"))
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))

    p = common(sub.add_parser("ablate", help="run an ablation protocol"))
    p.add_argument("--ablation", required=True, choices=("metadata", "training"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0])

    p = common(sub.add_parser("predict", help="score one claim"))
    p.add_argument("--claim-id", dest="claim_id")
    p.add_argument("--text")
    p.add_argument("--domain")

    common(sub.add_parser("report", help="emit tables and confusion heatmaps"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        workspace = Path(args.workspace).resolve()
        cfg = (load_run_config(workspace / args.config, workspace)
               if getattr(args, "config", None) else {})
        cfg = _merge_flags(cfg, args)
        for key in ("corpus", "snippets", "entities", "output"):
            if cfg.get(key) and not Path(cfg[key]).is_absolute():
                cfg[key] = str((workspace / cfg[key]).resolve())

        if args.command == "prepare":
            _require(cfg, ("corpus", "output"), "prepare")
            with output_lock(Path(cfg["output"])):
                return cmd_prepare(cfg)
        if args.command == "train":
            _require(cfg, ("output",), "train")
            with output_lock(Path(cfg["output"])):
                return cmd_train(cfg)
        if args.command == "evaluate":
            _require(cfg, ("output",), "evaluate")
            with output_lock(Path(cfg["output"])):
                return cmd_evaluate(cfg, args.split)
        if args.command == "ablate":
            _require(cfg, ("output",), "ablate")
            with output_lock(Path(cfg["output"])):
                return cmd_ablate(cfg, args.ablation, args.seeds)
        if args.command == "predict":
            return cmd_predict(cfg, args.claim_id, args.text, args.domain)
        if args.command == "report":
            _require(cfg, ("output",), "report")
            with output_lock(Path(cfg["output"])):
                return cmd_report(cfg)
        raise CliValidationError(f"unknown command {args.command!r}")
    except (CliValidationError, ConfigError, corpus_mod.CorpusFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
