"""Metrics, per-domain reports, confusion matrices, ablation protocols."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


def _per_label_counts(gold, pred, labels):
    index = {lbl: i for i, lbl in enumerate(labels)}
    tp = np.zeros(len(labels))
    fp = np.zeros(len(labels))
    fn = np.zeros(len(labels))
    for g, p in zip(gold, pred):
        if g not in index:
            raise ValueError(f"gold label {g!r} outside label set")
        if p not in index:
            raise ValueError(f"predicted label {p!r} outside label set")
        if g == p:
            tp[index[g]] += 1
        else:
            fp[index[p]] += 1
            fn[index[g]] += 1
    return tp, fp, fn


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_scores(gold, pred, labels) -> tuple[float, float]:
    """(micro F1, macro F1) over a label set.

    Micro pools counts over labels; macro is the unweighted mean of
    per-label F1, where a label absent from both gold and predictions
    contributes 0.
    """
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    tp, fp, fn = _per_label_counts(gold, pred, labels)
    tp_sum, fp_sum, fn_sum = tp.sum(), fp.sum(), fn.sum()
    micro_p = tp_sum / (tp_sum + fp_sum) if tp_sum + fp_sum else 0.0
    micro_r = tp_sum / (tp_sum + fn_sum) if tp_sum + fn_sum else 0.0
    micro = _f1(micro_p, micro_r)
    per_label = []
    for i in range(len(labels)):
        p = tp[i] / (tp[i] + fp[i]) if tp[i] + fp[i] else 0.0
        r = tp[i] / (tp[i] + fn[i]) if tp[i] + fn[i] else 0.0
        per_label.append(_f1(p, r))
    macro = float(np.mean(per_label)) if per_label else 0.0
    return float(micro), macro


def confusion_matrix(gold, pred, labels) -> np.ndarray:
    """Counts matrix, rows = gold, columns = predicted."""
    index = {lbl: i for i, lbl in enumerate(labels)}
    matrix = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for g, p in zip(gold, pred):
        matrix[index[g], index[p]] += 1
    return matrix


@dataclass(frozen=True)
class DomainReport:
    domain: str
    labels: tuple[str, ...]
    micro_f1: float
    macro_f1: float
    support: int
    matrix: np.ndarray

    def __post_init__(self):
        if int(self.matrix.sum()) != self.support:
            raise ValueError(
                f"{self.domain}: confusion matrix sums to {int(self.matrix.sum())}, "
                f"support is {self.support}"
            )


@dataclass(frozen=True)
class SuiteReport:
    reports: tuple[DomainReport, ...]

    @property
    def mean_micro_f1(self) -> float:
        return float(np.mean([r.micro_f1 for r in self.reports])) if self.reports else 0.0

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean([r.macro_f1 for r in self.reports])) if self.reports else 0.0


def domain_report(domain: str, gold, pred, labels) -> DomainReport:
    micro, macro = f1_scores(gold, pred, labels)
    return DomainReport(
        domain=domain,
        labels=tuple(labels),
        micro_f1=micro,
        macro_f1=macro,
        support=len(gold),
        matrix=confusion_matrix(gold, pred, labels),
    )


def evaluate_suite(model, data, split_name: str = "test", task_codes=None) -> SuiteReport:
    """Per-domain reports for every (or selected) task, merged in code order."""
    from .train import predict_task_split

    codes = sorted(task_codes or [t.code for t in data.tasks])
    reports = []
    for code in codes:
        task = data.task(code)
        gold, pred = predict_task_split(model, data, code, split_name)
        if not gold:
            continue
        reports.append(domain_report(code, gold, pred, task.labels))
    return SuiteReport(tuple(reports))


# ---------------------------------------------------------------------------
# ablation protocols

METADATA_ABLATION_SUBSETS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("none", ()),
    ("speaker", ("speaker",)),
    ("speaker+tags", ("speaker", "tags")),
    ("tags", ("tags",)),
    ("entity", ("entities",)),
    ("entity+speaker", ("entities", "speaker")),
    ("entity+speaker+tags", ("entities", "speaker", "tags")),
)


def run_metadata_ablation(records, split, tasks, cfg, target_task,
                          evidence_sets=None, annotations=None,
                          head_mode: str = "lel", split_name: str = "test",
                          subsets=METADATA_ABLATION_SUBSETS) -> list[dict]:
    """Train once per metadata subset and score the target task.

    Returns one row per subset with micro/macro F1 plus the counts of
    test instances with and without any active metadata.
    """
    from .train import build_training_data, predict_task_split, train_mtl

    rows = []
    for name, fields in subsets:
        sub_cfg = replace(cfg, use_metadata=bool(fields), metadata_fields=fields)
        data = build_training_data(records, split, tasks, sub_cfg,
                                   evidence_sets=evidence_sets, annotations=annotations)
        run = train_mtl(data, sub_cfg, target_task, head_mode=head_mode)
        gold, pred = predict_task_split(run.model, data, target_task, split_name)
        micro, macro = f1_scores(gold, pred, data.task(target_task).labels)
        instances = data.split_instances(split_name, target_task)
        n_with = sum(1 for inst in instances if len(inst.meta_slots) > 0)
        rows.append({
            "subset": name,
            "micro_f1": micro,
            "macro_f1": macro,
            "test_with_metadata": n_with,
            "test_without_metadata": len(instances) - n_with,
            "data_hash": data.data_hash,
        })
    return rows


TRAINING_ABLATION_MODES = ("STL", "MTL", "MTL+LEL")


def run_training_ablation(records, split, tasks, cfg, target_task,
                          evidence_sets=None, annotations=None,
                          split_name: str = "test", seeds=(0,)) -> list[dict]:
    """Compare STL vs MTL (per-task heads) vs MTL+LEL on one target task.

    All three modes train on identical data (hash recorded per row);
    results are averaged over the given seeds.
    """
    from .train import build_training_data, predict_task_split, train_mtl, train_stl

    data = build_training_data(records, split, tasks, cfg,
                               evidence_sets=evidence_sets, annotations=annotations)
    rows = []
    for mode in TRAINING_ABLATION_MODES:
        micros, macros = [], []
        for seed in seeds:
            seed_cfg = replace(cfg, seed=seed)
            if mode == "STL":
                run = train_stl(data, seed_cfg, target_task)
            elif mode == "MTL":
                run = train_mtl(data, seed_cfg, target_task, head_mode="per_task")
            else:
                run = train_mtl(data, seed_cfg, target_task, head_mode="lel")
            gold, pred = predict_task_split(run.model, data, target_task, split_name)
            micro, macro = f1_scores(gold, pred, data.task(target_task).labels)
            micros.append(micro)
            macros.append(macro)
        rows.append({
            "mode": mode,
            "micro_f1": float(np.mean(micros)),
            "macro_f1": float(np.mean(macros)),
            "seeds": list(seeds),
            "data_hash": data.data_hash,
        })
    return rows


# ---------------------------------------------------------------------------
# tabular writers


def write_rows_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def confusion_to_csv(report: DomainReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gold\\predicted", *report.labels])
        for i, label in enumerate(report.labels):
            writer.writerow([label, *report.matrix[i].tolist()])


def suite_to_markdown(suite: SuiteReport) -> str:
    lines = [
        "| domain | instances | micro F1 | macro F1 |",
        "| --- | --- | --- | --- |",
    ]
    for r in suite.reports:
        lines.append(f"| {r.domain} | {r.support} | {r.micro_f1:.3f} | {r.macro_f1:.3f} |")
    lines.append(
        f"| mean | | {suite.mean_micro_f1:.3f} | {suite.mean_macro_f1:.3f} |"
    )
    return "\n".join(lines) + "\n"
