"""Desk-scale acceptance gate.

Each test prints exactly one ``[criterion N] name: PASS|FAIL|SKIP`` line
outside pytest's capture (so the verdicts are visible in any run mode)
and then enforces the same condition with asserts. Tolerances and
runtime budgets are part of the contract, not advisory.

Criterion 6 audits the released full corpus and only runs when
``CLAIMCHECK_DATASET_TSV`` (and ``CLAIMCHECK_ENTITIES_TSV`` for the
entity share) point at local copies. Criterion 8 is a full-scale
training target and is excluded from this desk-scale gate by design.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

import claimcheck.autograd as ag
from claimcheck import refdata
from claimcheck.autograd import Tensor
from claimcheck.config import ModelConfig
from claimcheck.corpus import (
    build_domain_tasks,
    cleanse_corpus,
    duplicate_stats,
    load_corpus,
    stratified_split,
)
from claimcheck.evaluation import f1_scores, run_training_ablation
from claimcheck.features import entity_stats, load_entity_annotations
from claimcheck.model import TaskBatch, VeracityModel, joint_predict
from claimcheck.synthetic import (
    PLANTED_DOMAIN,
    interleaved_split,
    planted_evidence_corpus,
    shared_semantics_corpus,
    synthetic_tasks,
)
from claimcheck.train import build_training_data, make_batch, predict_task_split, train_stl

DATASET_ENV = "CLAIMCHECK_DATASET_TSV"
ENTITIES_ENV = "CLAIMCHECK_ENTITIES_TSV"


def _verdict(capsys, number: int, name: str, status: str, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {number}] {name}: {status} ({detail})", flush=True)


def _batch_for(task, cfg, rng, B=2, with_evidence=False, with_metadata=False,
               vocab=12, metadata_size=0, k=3):
    ids = rng.integers(1, vocab, size=(B, cfg.token_cap))
    labels = rng.integers(0, task.n_labels, size=B).astype(np.int64)
    batch = TaskBatch(
        task_code=task.code,
        claim_ids=ids,
        labels_local=labels,
        labels_global=labels + task.global_offset,
    )
    if with_evidence:
        evid = rng.integers(1, vocab, size=(B, k, cfg.token_cap))
        avail = (rng.uniform(size=(B, k)) < 0.7).astype(float)
        avail[0, :] = [1.0, 1.0, 0.0][:k] if k >= 3 else 1.0
        evid[avail == 0.0] = 0
        batch.evid_ids = evid.transpose(1, 0, 2).reshape(k * B, cfg.token_cap)
        batch.evid_avail = avail.T.reshape(k * B, 1)
    if with_metadata:
        width = 3
        slots = rng.integers(0, metadata_size, size=(B, width))
        mask = (rng.uniform(size=(B, width)) < 0.8).astype(float)
        mask[0, 0] = 1.0
        slots[mask == 0.0] = metadata_size
        batch.meta_slots = slots.astype(np.int64)
        batch.meta_mask = mask
    return batch


def test_criterion_1_gradient_fidelity(capsys):
    """Analytic gradients match central finite differences on every variant."""
    t0 = time.perf_counter()
    tasks = synthetic_tasks((2, 3))
    worst = 0.0
    worst_case = ""
    for variant in ("claim_only", "claim_only_embavg", "crawled_avg", "crawled_ranked"):
        for with_meta in (False, True):
            cfg = ModelConfig(
                variant=variant, word_emb=4, hidden=3, layers=2, dropout=0.0,
                batch=2, label_emb=3, cnn_filters=4, cnn_kernel=2,
                use_metadata=with_meta, seed=0, token_cap=4,
            )
            metadata_size = 6 if with_meta else 0
            model = VeracityModel(cfg, tasks, vocab_size=12,
                                  metadata_size=metadata_size, head_mode="lel")
            model.set_dtype(np.float64)
            rng = np.random.default_rng(7)
            batch = _batch_for(
                tasks[1], cfg, rng, B=2,
                with_evidence=variant.startswith("crawled"),
                with_metadata=with_meta, metadata_size=metadata_size,
            )

            def loss_fn():
                loss, _ = model.loss(batch, train=False)
                return loss

            err = ag.finite_difference_check(
                loss_fn, model.graph.params, eps=1e-4, samples_per_param=4,
                rng=np.random.default_rng(0),
            )
            if err > worst:
                worst, worst_case = err, f"{variant}{'+meta' if with_meta else ''}"
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and dt < 120
    _verdict(capsys, 1, "gradient fidelity", "PASS" if ok else "FAIL",
             f"max rel err {worst:.2e} < 1e-3 at {worst_case}, {dt:.0f}s < 120s")
    assert worst < 1e-3, f"finite-difference mismatch {worst:.3e} on {worst_case}"
    assert dt < 120, f"took {dt:.0f}s, budget 120s"


def test_criterion_2_task_mask_soundness(capsys):
    """No probability mass ever lands on another task's labels."""
    t0 = time.perf_counter()
    tasks = synthetic_tasks()
    n_global = sum(t.n_labels for t in tasks)
    rng = np.random.default_rng(3)
    leak = 0.0

    cfg = ModelConfig(variant="claim_only_embavg", word_emb=8, hidden=6, layers=1,
                      dropout=0.0, batch=250, label_emb=4, seed=0, token_cap=6)
    model = VeracityModel(cfg, tasks, vocab_size=40, head_mode="lel")
    for task in tasks:
        outside = np.ones(n_global, dtype=bool)
        outside[task.global_offset:task.global_offset + task.n_labels] = False
        for _ in range(4):
            batch = _batch_for(task, cfg, rng, B=250, vocab=40)
            probs = model.predict(batch).probs.data
            leak = max(leak, float(np.abs(probs[:, outside]).max()))
            assert np.all(probs[:, outside] == 0.0)

    cfg_r = replace(cfg, variant="crawled_ranked", batch=100)
    model_r = VeracityModel(cfg_r, tasks, vocab_size=40, head_mode="lel")
    for task in tasks:
        outside = np.ones(n_global, dtype=bool)
        outside[task.global_offset:task.global_offset + task.n_labels] = False
        batch = _batch_for(task, cfg_r, rng, B=100, vocab=40, with_evidence=True)
        batch.evid_avail[::3] = 0.0
        probs = model_r.predict(batch).probs.data
        leak = max(leak, float(np.abs(probs[:, outside]).max()))
        assert np.all(probs[:, outside] == 0.0)

    dt = time.perf_counter() - t0
    ok = leak == 0.0 and dt < 10
    _verdict(capsys, 2, "task mask soundness", "PASS" if ok else "FAIL",
             f"out-of-task mass {leak:.1e} == 0 over 1000 inputs x {len(tasks)} tasks, "
             f"{dt:.1f}s < 10s")
    assert leak == 0.0
    assert dt < 10, f"took {dt:.1f}s, budget 10s"


def test_criterion_3_joint_prediction_oracle(capsys):
    """Evidence-weighted label scores match a brute-force numpy oracle."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    B, D, k, n, emb = 100, 7, 3, 6, 3
    pairs = [rng.normal(size=(B, D)) for _ in range(k)]
    weights = [rng.uniform(size=(B, 1)) for _ in range(k)]
    L = rng.normal(size=(n, emb))
    mask = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 1.0])

    probs = joint_predict(
        [Tensor(p) for p in pairs], [Tensor(w) for w in weights], Tensor(L), mask
    ).data

    L_pad = np.hstack([L, np.zeros((n, D - emb))])
    total = sum(w * (p @ L_pad.T) for p, w in zip(pairs, weights))
    idx = mask == 1.0
    exp = np.exp(total[:, idx] - total[:, idx].max(axis=1, keepdims=True))
    expected = np.zeros_like(total)
    expected[:, idx] = exp / exp.sum(axis=1, keepdims=True)

    diff = float(np.abs(probs - expected).max())
    dt = time.perf_counter() - t0
    ok = diff <= 1e-10 and dt < 10
    _verdict(capsys, 3, "joint prediction oracle", "PASS" if ok else "FAIL",
             f"max abs diff {diff:.1e} <= 1e-10 on {B} three-evidence instances, "
             f"{dt:.1f}s < 10s")
    assert diff <= 1e-10
    assert dt < 10, f"took {dt:.1f}s, budget 10s"


def test_criterion_4_planted_evidence_ranking(capsys):
    """The trained ranker finds the one informative snippet and beats averaging."""
    t0 = time.perf_counter()
    records, evidence, informative_at = planted_evidence_corpus(
        n_claims=500, n_distractors=9, seed=0)
    tasks = build_domain_tasks(records)
    split = interleaved_split(records)
    cfg = ModelConfig(
        variant="crawled_ranked", word_emb=20, hidden=20, layers=1, dropout=0.0,
        batch=16, label_emb=4, lr=0.02, patience=50, seed=0, max_epochs=300,
        token_cap=8,
    )
    data = build_training_data(records, split, tasks, cfg, evidence_sets=evidence)

    run = train_stl(data, cfg, PLANTED_DOMAIN)
    gold, pred = predict_task_split(run.model, data, PLANTED_DOMAIN, "test")
    macro_ranked = f1_scores(gold, pred, data.task(PLANTED_DOMAIN).labels)[1]

    hits = total = 0
    insts = data.split_instances("test", PLANTED_DOMAIN)
    for start in range(0, len(insts), 25):
        chunk = insts[start:start + 25]
        batch = make_batch(chunk, PLANTED_DOMAIN, data.metadata_size, True, False)
        ranking = run.model.predict(batch).ranking
        for i, inst in enumerate(chunk):
            hits += int(np.argmax(ranking[i]) == informative_at[inst.claim_id])
            total += 1
    top1 = hits / total

    run_avg = train_stl(data, replace(cfg, variant="crawled_avg"), PLANTED_DOMAIN)
    gold_a, pred_a = predict_task_split(run_avg.model, data, PLANTED_DOMAIN, "test")
    macro_avg = f1_scores(gold_a, pred_a, data.task(PLANTED_DOMAIN).labels)[1]

    gap = macro_ranked - macro_avg
    dt = time.perf_counter() - t0
    ok = top1 >= 0.90 and gap >= 0.10 and dt < 900
    _verdict(capsys, 4, "planted-evidence ranking", "PASS" if ok else "FAIL",
             f"top-1 informative {top1:.2f} >= 0.90 on {total} held-out claims, "
             f"macro gap {gap:.2f} >= 0.10 ({macro_ranked:.3f} ranked vs "
             f"{macro_avg:.3f} averaged), {dt:.0f}s < 900s")
    assert top1 >= 0.90, f"informative snippet ranked first on only {top1:.2%}"
    assert gap >= 0.10, f"macro gap {gap:.3f} below 10 points"
    assert dt < 900, f"took {dt:.0f}s, budget 900s"


def test_criterion_5_training_ablation_ordering(capsys):
    """Joint training helps a small domain, and shared label space helps more."""
    t0 = time.perf_counter()
    records, target = shared_semantics_corpus(sizes=(300, 60, 45), seed=0)
    tasks = build_domain_tasks(records)
    split = stratified_split(records, ratios=(0.5, 0.2, 0.3), seed=0)
    cfg = ModelConfig(
        variant="claim_only", word_emb=12, hidden=8, layers=1, dropout=0.0,
        batch=16, label_emb=16, lr=0.01, patience=8, seed=0, max_epochs=20,
        token_cap=10,
    )
    rows = run_training_ablation(records, split, tasks, cfg, target,
                                 seeds=(0, 1, 2, 3, 4))
    macro = {row["mode"]: row["macro_f1"] for row in rows}

    dt = time.perf_counter() - t0
    ok = macro["MTL+LEL"] >= macro["MTL"] >= macro["STL"] and dt < 1200
    _verdict(capsys, 5, "training ablation ordering", "PASS" if ok else "FAIL",
             f"mean macro F1 over 5 seeds on {target}: "
             f"MTL+LEL {macro['MTL+LEL']:.3f} >= MTL {macro['MTL']:.3f} "
             f">= STL {macro['STL']:.3f}, {dt:.0f}s < 1200s")
    assert macro["MTL+LEL"] >= macro["MTL"] >= macro["STL"], macro
    assert dt < 1200, f"took {dt:.0f}s, budget 1200s"


def test_criterion_6_pipeline_counts(capsys):
    """Cleansing the released corpus reproduces the published statistics."""
    dataset = os.environ.get(DATASET_ENV)
    if not dataset:
        _verdict(capsys, 6, "pipeline counts", "SKIP",
                 f"set {DATASET_ENV} to the released corpus TSV to run")
        pytest.skip(f"{DATASET_ENV} not set")

    t0 = time.perf_counter()
    records = load_corpus(dataset)
    result = cleanse_corpus(records)

    assert len(result.records) == refdata.TOTAL_CLAIMS_CLEANSED, (
        f"{len(result.records)} cleansed claims, "
        f"expected {refdata.TOTAL_CLAIMS_CLEANSED}")

    dup_total, dup_disagree = duplicate_stats(result.duplicate_groups)
    assert (dup_total, dup_disagree) == (202, 69), (
        f"duplicates {dup_total}/{dup_disagree}, expected 202/69")

    per_domain = {}
    for rec in result.records:
        per_domain[rec.domain] = per_domain.get(rec.domain, 0) + 1
    labels_by_domain = {t.code: t.n_labels for t in result.tasks}
    for code, (n_claims, n_labels) in refdata.DOMAIN_STATS.items():
        assert per_domain.get(code, 0) == n_claims, (
            f"{code}: {per_domain.get(code, 0)} claims, expected {n_claims}")
        assert labels_by_domain.get(code, 0) == n_labels, (
            f"{code}: {labels_by_domain.get(code, 0)} labels, expected {n_labels}")

    entities = os.environ.get(ENTITIES_ENV)
    assert entities, f"set {ENTITIES_ENV} to the entity annotation TSV"
    annotations = load_entity_annotations(
        entities, known_claim_ids={rec.claim_id for rec in result.records})
    _, _, fraction = entity_stats(annotations, len(result.records))
    assert abs(fraction - 0.42) <= 0.005, (
        f"entity-annotated share {fraction:.3f}, expected 0.42 +- 0.005")

    dt = time.perf_counter() - t0
    ok = dt < 300
    _verdict(capsys, 6, "pipeline counts", "PASS" if ok else "FAIL",
             f"{len(result.records)} claims, duplicates {dup_total}/{dup_disagree}, "
             f"entity share {fraction:.3f}, {dt:.0f}s < 300s")
    assert dt < 300, f"took {dt:.0f}s, budget 300s"


def test_criterion_7_metric_oracle(capsys):
    """Micro/macro F1 agree with a from-scratch recount."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(1000):
        n_labels = int(rng.integers(2, 9))
        labels = [f"l{j}" for j in range(n_labels)]
        m = int(rng.integers(1, 51))
        gold = [labels[int(rng.integers(n_labels))] for _ in range(m)]
        pred = [labels[int(rng.integers(n_labels))] for _ in range(m)]
        micro, macro = f1_scores(gold, pred, labels)

        tp_all = fp_all = fn_all = 0
        per_label_f1 = []
        for lab in labels:
            tp = sum(1 for g, p in zip(gold, pred) if g == lab and p == lab)
            fp = sum(1 for g, p in zip(gold, pred) if g != lab and p == lab)
            fn = sum(1 for g, p in zip(gold, pred) if g == lab and p != lab)
            tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
            prec = tp / (tp + fp) if tp + fp else 0.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            per_label_f1.append(
                2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        prec = tp_all / (tp_all + fp_all) if tp_all + fp_all else 0.0
        rec = tp_all / (tp_all + fn_all) if tp_all + fn_all else 0.0
        micro_ref = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        macro_ref = sum(per_label_f1) / len(per_label_f1)

        worst = max(worst, abs(micro - micro_ref), abs(macro - macro_ref))

    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 5
    _verdict(capsys, 7, "metric oracle", "PASS" if ok else "FAIL",
             f"max abs diff {worst:.1e} <= 1e-12 on 1000 prediction sets, "
             f"{dt:.1f}s < 5s")
    assert worst <= 1e-12
    assert dt < 5, f"took {dt:.1f}s, budget 5s"


def test_criterion_8_full_scale_training(capsys):
    """Full-corpus training accuracy target; needs hours of compute."""
    _verdict(capsys, 8, "full-scale training target", "SKIP",
             "long-run target, excluded from the desk-scale gate")
    pytest.skip("full-scale training is a long-run target, not part of this gate")
