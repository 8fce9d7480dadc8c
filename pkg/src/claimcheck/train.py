"""Multi-task training with a target task, early stopping, grid search.

An epoch is one pass over the concatenated multi-task training data:
every task's instances are chopped into task-homogeneous batches and
the pooled batch list is shuffled, so tasks are visited proportionally
to their training-set size. Model selection (early stopping, grid
search) watches the target task's dev Macro F1 only; the best
checkpoint is restored bit-exact at the end.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .config import ConfigError, ModelConfig, default_grid
from .evaluation import f1_scores
from .features import (
    METADATA_FIELDS,
    MetadataInventories,
    Vocabulary,
    build_metadata_inventories,
    build_vocab,
    encode_metadata,
    restrict_inventories,
    tokenize,
)
from .model import MAX_EVIDENCE, TaskBatch, VeracityModel

log = logging.getLogger(__name__)


class TrainingDiverged(Exception):
    """Loss went non-finite; training aborted."""


# ---------------------------------------------------------------------------
# encoded data


@dataclass
class EncodedInstance:
    claim_id: str
    domain: str
    label_local: int
    label_global: int
    claim_tokens: np.ndarray               # (T,)
    evid_tokens: np.ndarray                # (k, T)
    evid_avail: np.ndarray                 # (k,)
    meta_slots: np.ndarray                 # (A_i,) active slot indices


@dataclass
class TrainingData:
    tasks: list
    vocab: Vocabulary
    inventories: MetadataInventories
    instances: dict[str, list[EncodedInstance]] = field(default_factory=dict)
    data_hash: str = ""

    @property
    def metadata_size(self) -> int:
        return self.inventories.total_size

    def task(self, code: str):
        for t in self.tasks:
            if t.code == code:
                return t
        raise ConfigError(f"unknown task {code!r}")

    def split_instances(self, split_name: str, task_code: str | None = None):
        items = self.instances[split_name]
        if task_code is None:
            return items
        return [inst for inst in items if inst.domain == task_code]

    def vocab_hash(self) -> str:
        blob = json.dumps(sorted(self.vocab.token_to_id.items()))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _evidence_tokens(snippet) -> list[str]:
    return tokenize(snippet.title) + tokenize(snippet.snippet_text)


def build_training_data(
    records,
    split,
    tasks,
    cfg: ModelConfig,
    evidence_sets: dict | None = None,
    annotations: dict | None = None,
) -> TrainingData:
    """Tokenize, build train-only vocabulary and inventories, encode all splits."""
    by_id = {rec.claim_id: rec for rec in records}
    task_by_code = {t.code: t for t in tasks}
    evidence_sets = evidence_sets or {}
    annotations = annotations or {}

    train_sequences = []
    for cid in split.train:
        rec = by_id[cid]
        train_sequences.append(tokenize(rec.claim_text))
        ev = evidence_sets.get(cid)
        if ev is not None:
            for sn in ev.snippets:
                train_sequences.append(_evidence_tokens(sn))
    vocab = build_vocab(train_sequences)
    train_records = [by_id[cid] for cid in split.train]
    inventories = build_metadata_inventories(train_records, annotations)
    if set(cfg.metadata_fields) != set(METADATA_FIELDS):
        inventories = restrict_inventories(inventories, cfg.metadata_fields)

    cap = cfg.token_cap
    n_truncated = 0

    def encode_tokens(tokens: list[str]) -> np.ndarray:
        nonlocal n_truncated
        if len(tokens) > cap:
            n_truncated += 1
        return vocab.encode(tokens, cap)

    data = TrainingData(tasks=list(tasks), vocab=vocab, inventories=inventories)
    for split_name, ids in (("train", split.train), ("dev", split.dev), ("test", split.test)):
        encoded = []
        for cid in ids:
            rec = by_id[cid]
            task = task_by_code[rec.domain]
            evid = np.zeros((MAX_EVIDENCE, cap), dtype=np.int64)
            avail = np.zeros(MAX_EVIDENCE, dtype=np.float64)
            ev = evidence_sets.get(cid)
            if ev is not None:
                for j, sn in enumerate(ev.snippets[:MAX_EVIDENCE]):
                    evid[j] = encode_tokens(_evidence_tokens(sn))
                    avail[j] = 1.0
            ann = annotations.get(cid)
            vec = encode_metadata(rec, inventories, ann.entities if ann else ())
            local = task.label_index(rec.label)
            encoded.append(
                EncodedInstance(
                    claim_id=cid,
                    domain=rec.domain,
                    label_local=local,
                    label_global=task.global_offset + local,
                    claim_tokens=encode_tokens(tokenize(rec.claim_text)),
                    evid_tokens=evid,
                    evid_avail=avail,
                    meta_slots=vec.active_indices().astype(np.int64),
                )
            )
        data.instances[split_name] = encoded
    if n_truncated:
        log.warning("%d token sequences exceeded cap %d and were truncated", n_truncated, cap)

    digest = hashlib.sha256()
    for name in ("train", "dev", "test"):
        for inst in data.instances[name]:
            digest.update(inst.claim_id.encode("utf-8"))
        digest.update(b"|")
    digest.update(str(split.seed).encode())
    data.data_hash = digest.hexdigest()[:16]
    return data


def make_batch(instances: list[EncodedInstance], task_code: str, metadata_size: int,
               use_evidence: bool, use_metadata: bool) -> TaskBatch:
    B = len(instances)
    claim = np.stack([inst.claim_tokens for inst in instances])
    labels_local = np.asarray([inst.label_local for inst in instances], dtype=np.int64)
    labels_global = np.asarray([inst.label_global for inst in instances], dtype=np.int64)
    batch = TaskBatch(task_code, claim, labels_local, labels_global)
    if use_evidence:
        evid = np.stack([inst.evid_tokens for inst in instances])      # (B, k, T)
        avail = np.stack([inst.evid_avail for inst in instances])      # (B, k)
        k = evid.shape[1]
        batch.evid_ids = evid.transpose(1, 0, 2).reshape(k * B, -1)
        batch.evid_avail = avail.T.reshape(k * B, 1)
    if use_metadata:
        width = max((len(inst.meta_slots) for inst in instances), default=0)
        slots = np.full((B, width), metadata_size, dtype=np.int64)
        mask = np.zeros((B, width), dtype=np.float64)
        for i, inst in enumerate(instances):
            n = len(inst.meta_slots)
            slots[i, :n] = inst.meta_slots
            mask[i, :n] = 1.0
        batch.meta_slots = slots
        batch.meta_mask = mask
    return batch


def iter_epoch_batches(data: TrainingData, cfg: ModelConfig, rng: np.random.Generator,
                       task_codes=None, use_evidence=True):
    """Task-homogeneous batches over one epoch, pooled and shuffled."""
    codes = task_codes or [t.code for t in data.tasks]
    batches = []
    for code in codes:
        instances = list(data.split_instances("train", code))
        if not instances:
            continue
        order = rng.permutation(len(instances))
        for start in range(0, len(instances), cfg.batch):
            chunk = [instances[i] for i in order[start : start + cfg.batch]]
            batches.append((code, chunk))
    batch_order = rng.permutation(len(batches))
    for idx in batch_order:
        code, chunk = batches[idx]
        yield make_batch(chunk, code, data.metadata_size, use_evidence, cfg.use_metadata)


# ---------------------------------------------------------------------------
# early stopping


class EarlyStopper:
    """Stop when the monitored metric has not improved for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0

    def update(self, epoch: int, metric: float) -> bool:
        if metric > self.best:
            self.best = metric
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience


# ---------------------------------------------------------------------------
# evaluation glue


def predict_task_split(model: VeracityModel, data: TrainingData, task_code: str,
                       split_name: str, batch_size: int | None = None):
    """(gold labels, predicted labels) for one task on one split."""
    instances = data.split_instances(split_name, task_code)
    task = data.task(task_code)
    use_evidence = model.cfg.variant in ("crawled_avg", "crawled_ranked")
    size = batch_size or model.cfg.batch
    gold, pred = [], []
    for start in range(0, len(instances), size):
        chunk = instances[start : start + size]
        batch = make_batch(chunk, task_code, data.metadata_size, use_evidence,
                           model.cfg.use_metadata)
        pred.extend(model.predicted_labels(batch))
        gold.extend(task.labels[inst.label_local] for inst in chunk)
    return gold, pred


def dev_macro_f1(model: VeracityModel, data: TrainingData, task_code: str) -> tuple[float, float]:
    gold, pred = predict_task_split(model, data, task_code, "dev")
    task = data.task(task_code)
    micro, macro = f1_scores(gold, pred, task.labels)
    return micro, macro


# ---------------------------------------------------------------------------
# training runs


@dataclass
class TrainRun:
    target_task: str
    config: ModelConfig
    head_mode: str
    history: list[dict]
    best_epoch: int
    stop_epoch: int
    best_dev_micro: float
    best_dev_macro: float
    model: VeracityModel

    def summary(self) -> dict:
        return {
            "target_task": self.target_task,
            "head_mode": self.head_mode,
            "config_hash": self.config.config_hash(),
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
            "best_dev_micro": self.best_dev_micro,
            "best_dev_macro": self.best_dev_macro,
        }


def _append_jsonl(path, payload: dict) -> None:
    if path is None:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True) + "\n")


def _run_training(data: TrainingData, cfg: ModelConfig, target_task: str,
                  head_mode: str, task_codes, log_path=None) -> TrainRun:
    if not data.split_instances("dev", target_task):
        raise ConfigError(f"target task {target_task!r} has an empty dev set")
    tasks = [t for t in data.tasks if t.code in task_codes]
    model = VeracityModel(
        cfg,
        tasks if head_mode != "single" else [data.task(target_task)],
        vocab_size=len(data.vocab),
        metadata_size=data.metadata_size if cfg.use_metadata else 0,
        head_mode=head_mode,
    )
    model.set_dtype(np.float32)
    optimizer = ag.RMSProp(model.graph.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    use_evidence = cfg.variant in ("crawled_avg", "crawled_ranked")
    stopper = EarlyStopper(cfg.patience)
    history: list[dict] = []
    best_state = None
    best_micro = 0.0

    _append_jsonl(log_path, {
        "event": "start", "config": cfg.to_dict(), "head_mode": head_mode,
        "target_task": target_task, "data_hash": data.data_hash,
        "vocab_hash": data.vocab_hash(),
    })

    stop_epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for batch in iter_epoch_batches(data, cfg, rng, task_codes, use_evidence):
            model.graph.zero_grad()
            loss, _ = model.loss(batch, train=True, rng=rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} on task {batch.task_code!r} "
                    f"(lr={cfg.lr}, batch={batch.size})"
                )
            loss.backward()
            optimizer.step()
            losses.append(value)
        micro, macro = dev_macro_f1(model, data, target_task)
        entry = {
            "event": "epoch", "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else 0.0,
            "dev_micro": micro, "dev_macro": macro,
        }
        history.append(entry)
        _append_jsonl(log_path, entry)
        if stopper.update(epoch, macro):
            best_state = model.graph.state_arrays()
            best_micro = micro
        stop_epoch = epoch
        if stopper.should_stop(epoch):
            break

    if best_state is not None:
        model.graph.load_state(best_state)
    run = TrainRun(
        target_task=target_task,
        config=cfg,
        head_mode=head_mode,
        history=history,
        best_epoch=stopper.best_epoch,
        stop_epoch=stop_epoch,
        best_dev_micro=best_micro,
        best_dev_macro=stopper.best if np.isfinite(stopper.best) else 0.0,
        model=model,
    )
    _append_jsonl(log_path, {"event": "end", **run.summary()})
    return run


def train_mtl(data: TrainingData, cfg: ModelConfig, target_task: str,
              head_mode: str = "lel", log_path=None) -> TrainRun:
    """Train on all tasks jointly; select on the target task's dev Macro F1."""
    codes = [t.code for t in data.tasks]
    return _run_training(data, cfg, target_task, head_mode, codes, log_path)


def train_stl(data: TrainingData, cfg: ModelConfig, task_code: str,
              log_path=None) -> TrainRun:
    """Single-task training with the task's own softmax head."""
    return _run_training(data, cfg, task_code, "single", [task_code], log_path)


def grid_search(data: TrainingData, target_task: str, base: ModelConfig,
                grid: dict[str, tuple] | None = None, head_mode: str = "lel",
                results_path=None) -> tuple[ModelConfig, list[dict]]:
    """Exhaustive search over the hyperparameter grid, best by dev Macro F1."""
    grid = grid if grid is not None else default_grid()
    names = sorted(grid)
    results = []
    best_cfg, best_macro = None, -np.inf
    for values in itertools.product(*(grid[n] for n in names)):
        overrides = dict(zip(names, values))
        try:
            cfg = ModelConfig.from_dict({**base.to_dict(), **overrides})
        except ConfigError:
            continue  # e.g. attention=True points are declared but not runnable
        run = _run_training(data, cfg, target_task, head_mode,
                            [t.code for t in data.tasks])
        row = {**overrides, "dev_micro": run.best_dev_micro,
               "dev_macro": run.best_dev_macro, "config_hash": cfg.config_hash()}
        results.append(row)
        _append_jsonl(results_path, row)
        if run.best_dev_macro > best_macro:
            best_macro, best_cfg = run.best_dev_macro, cfg
    if best_cfg is None:
        raise ConfigError("empty hyperparameter grid")
    return best_cfg, results
