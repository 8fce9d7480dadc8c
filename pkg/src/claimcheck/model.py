"""Veracity models: sentence encoders, instance-encoding variants, label
embedding layer with task masks, evidence ranking, and joint prediction.

Four instance encodings are supported. "claim_only" scores a BiLSTM
claim embedding alone, "claim_only_embavg" a mean of word embeddings.
"crawled_avg" concatenates the claim embedding with the mean over
available evidence-snippet embeddings. "crawled_ranked" builds one
matching representation per claim/evidence pair, learns a ranking
weight per pair end-to-end from veracity labels only, and predicts from
the ranking-weighted sum of per-pair label scores.

All heavy lifting is batched 2-D tensor algebra; evidence pairs are
laid out page-major (rows j*B..j*B+B-1 hold page j for every instance),
so per-page slices stay contiguous.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import ConfigError, ModelConfig

log = logging.getLogger(__name__)

MAX_EVIDENCE = 10


# ---------------------------------------------------------------------------
# initialization helpers


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def _embedding_init(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    return rng.uniform(-0.1, 0.1, size=(rows, dim))


def _const(values: np.ndarray) -> Tensor:
    return Tensor(values)


# ---------------------------------------------------------------------------
# functional pieces (shared by the model and the test oracles)


def combine_avg(h_a: Tensor, evidence: list[Tensor], avail: list[np.ndarray]) -> Tensor:
    """s_g = [h_a ; mean over available evidence embeddings].

    ``avail[j]`` is a (B, 1) indicator of page j's availability; missing
    pages are excluded from the mean. Instances with zero available
    pages get an all-zero evidence half.
    """
    if len(evidence) != len(avail):
        raise ConfigError("evidence/availability length mismatch")
    total = None
    for e_j, a_j in zip(evidence, avail):
        term = ag.mul(e_j, a_j)
        total = term if total is None else ag.add(total, term)
    counts = np.sum(np.stack(avail), axis=0)
    inv = 1.0 / np.maximum(counts, 1.0)
    return ag.concat([h_a, ag.mul(total, inv)], axis=-1)


def match_pair(h_a: Tensor, h_e: Tensor, h_m: Tensor | None = None) -> Tensor:
    """Matching representation [h_a ; h_e ; h_a - h_e ; h_a * h_e] (+ metadata)."""
    if h_a.shape != h_e.shape:
        raise ConfigError(f"claim/evidence dimension mismatch: {h_a.shape} vs {h_e.shape}")
    parts = [h_a, h_e, ag.sub(h_a, h_e), ag.mul(h_a, h_e)]
    if h_m is not None:
        parts.append(h_m)
    return ag.concat(parts, axis=-1)


def rank_evidence(s_r: Tensor, weight: Tensor, bias: Tensor, avail: np.ndarray) -> Tensor:
    """Per-pair ranking weights o = sigmoid(FC(s_r)), absent pairs forced to 0."""
    logits = ag.add(ag.matmul(s_r, weight), bias)
    return ag.mul(ag.sigmoid(logits), avail)


def pad_label_matrix(label_emb: Tensor, rep_dim: int) -> Tensor:
    """Zero-extend label embedding rows to the representation width."""
    n_labels, emb_dim = label_emb.shape
    if emb_dim > rep_dim:
        raise ConfigError(
            f"label embedding size {emb_dim} exceeds representation size {rep_dim}"
        )
    if emb_dim == rep_dim:
        return label_emb
    zeros = _const(np.zeros((n_labels, rep_dim - emb_dim), dtype=label_emb.data.dtype))
    return ag.concat([label_emb, zeros], axis=-1)


def label_scores(rep: Tensor, label_emb: Tensor, task_mask: np.ndarray) -> Tensor:
    """p = masked_softmax(rep · padded-Lᵀ, task mask); mass only on the task's labels."""
    padded = pad_label_matrix(label_emb, rep.shape[-1])
    scores = ag.matmul(rep, ag.transpose(padded))
    return ag.masked_softmax(scores, task_mask)


def joint_predict(
    pair_reps: list[Tensor],
    rank_weights: list[Tensor],
    label_emb: Tensor,
    task_mask: np.ndarray,
) -> Tensor:
    """p = masked_softmax(Σ_j o_j · (s_r_j · padded-Lᵀ), task mask)."""
    padded = pad_label_matrix(label_emb, pair_reps[0].shape[-1])
    padded_t = ag.transpose(padded)
    total = None
    for s_r_j, o_j in zip(pair_reps, rank_weights):
        scores_j = ag.mul(ag.matmul(s_r_j, padded_t), o_j)
        total = scores_j if total is None else ag.add(total, scores_j)
    return ag.masked_softmax(total, task_mask)


def stl_predict(h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Single-task head: p = softmax(W·h + b)."""
    return ag.softmax(ag.add(ag.matmul(h, ag.transpose(weight)), bias))


# ---------------------------------------------------------------------------
# BiLSTM sentence encoder


class BiLSTMEncoder:
    """Stacked bidirectional LSTM with concatenative skip connections.

    The sentence embedding is [last forward state ; last backward state]
    of the top layer, passed through a ReLU-activated linear projection.
    Padding freezes the recurrent state, so right-padded batches give
    the same per-sequence result as unpadded ones.
    """

    def __init__(self, graph: ag.Graph, prefix: str, input_dim: int, cfg: ModelConfig,
                 rng: np.random.Generator):
        self.hidden = cfg.hidden
        self.layers = cfg.layers
        self.skip = cfg.skip_connections
        self.dropout = cfg.dropout
        self.weights: list[dict[str, dict[str, Tensor]]] = []
        dim = input_dim
        for layer in range(cfg.layers):
            per_dir = {}
            for direction in ("fwd", "bwd"):
                name = f"{prefix}/l{layer}/{direction}"
                bias = np.zeros(4 * cfg.hidden)
                bias[cfg.hidden : 2 * cfg.hidden] = 1.0  # forget gate opens by default
                per_dir[direction] = {
                    "Wx": graph.parameter(f"{name}/Wx", _glorot(rng, dim, 4 * cfg.hidden)),
                    "Wh": graph.parameter(f"{name}/Wh", _glorot(rng, cfg.hidden, 4 * cfg.hidden)),
                    "b": graph.parameter(f"{name}/b", bias),
                }
            self.weights.append(per_dir)
            dim = (dim + 2 * cfg.hidden) if self.skip else 2 * cfg.hidden
        out_dim = 2 * cfg.hidden
        self.proj_w = graph.parameter(f"{prefix}/proj/W", _glorot(rng, out_dim, out_dim))
        self.proj_b = graph.parameter(f"{prefix}/proj/b", np.zeros(out_dim))

    def _run_direction(self, steps, masks, params, reverse: bool):
        batch = steps[0].shape[0]
        dtype = steps[0].data.dtype
        h = _const(np.zeros((batch, self.hidden), dtype=dtype))
        c = _const(np.zeros((batch, self.hidden), dtype=dtype))
        order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
        outputs: list[Tensor | None] = [None] * len(steps)
        H = self.hidden
        for t in order:
            z = ag.add(ag.add(ag.matmul(steps[t], params["Wx"]), ag.matmul(h, params["Wh"])),
                       params["b"])
            i_g = ag.sigmoid(ag.narrow(z, 1, 0, H))
            f_g = ag.sigmoid(ag.narrow(z, 1, H, H))
            g_g = ag.tanh(ag.narrow(z, 1, 2 * H, H))
            o_g = ag.sigmoid(ag.narrow(z, 1, 3 * H, H))
            c_new = ag.add(ag.mul(f_g, c), ag.mul(i_g, g_g))
            h_new = ag.mul(o_g, ag.tanh(c_new))
            m = masks[t]
            c = ag.add(ag.mul(c_new, m), ag.mul(c, 1.0 - m))
            h = ag.add(ag.mul(h_new, m), ag.mul(h, 1.0 - m))
            outputs[t] = h
        return outputs, h

    def __call__(self, token_ids: np.ndarray, embeddings: Tensor, train: bool,
                 rng: np.random.Generator) -> Tensor:
        batch, length = token_ids.shape
        masks = [
            (token_ids[:, t] != 0).astype(embeddings.data.dtype).reshape(batch, 1)
            for t in range(length)
        ]
        steps = [ag.embedding_lookup(embeddings, token_ids[:, t]) for t in range(length)]
        if train and self.dropout > 0:
            steps = [ag.dropout(s, self.dropout, rng, train) for s in steps]
        final_fwd = final_bwd = None
        for layer, params in enumerate(self.weights):
            out_fwd, final_fwd = self._run_direction(steps, masks, params["fwd"], reverse=False)
            out_bwd, final_bwd = self._run_direction(steps, masks, params["bwd"], reverse=True)
            if layer + 1 < self.layers:
                combined = [
                    ag.concat([out_fwd[t], out_bwd[t]], axis=-1) for t in range(length)
                ]
                if self.skip:
                    steps = [ag.concat([steps[t], combined[t]], axis=-1) for t in range(length)]
                else:
                    steps = combined
        h = ag.concat([final_fwd, final_bwd], axis=-1)
        h = ag.relu(ag.add(ag.matmul(h, self.proj_w), self.proj_b))
        if train and self.dropout > 0:
            h = ag.dropout(h, self.dropout, rng, train)
        # empty sequences embed to exactly zero, not to the projected bias
        nonempty = (token_ids != 0).any(axis=1).astype(h.data.dtype).reshape(batch, 1)
        if not nonempty.all():
            h = ag.mul(h, nonempty)
        return h


def embavg_encode(token_ids: np.ndarray, embeddings: Tensor) -> Tensor:
    """Mean of word embeddings over non-padding positions; empty → zeros."""
    batch, length = token_ids.shape
    dtype = embeddings.data.dtype
    total = None
    for t in range(length):
        m = (token_ids[:, t] != 0).astype(dtype).reshape(batch, 1)
        term = ag.mul(ag.embedding_lookup(embeddings, token_ids[:, t]), m)
        total = term if total is None else ag.add(total, term)
    counts = (token_ids != 0).sum(axis=1).astype(dtype).reshape(batch, 1)
    return ag.mul(total, 1.0 / np.maximum(counts, 1.0))


# ---------------------------------------------------------------------------
# metadata CNN


class MetadataEncoder:
    """CNN + global max pooling over the embedded active metadata values.

    Each active slot of the binary metadata vector contributes one
    embedded token; convolution windows slide over each token's
    embedding, are ReLU-activated, and a global max pool over every
    window of every token yields a fixed 32-dim summary. Pooling over a
    set makes the result invariant to duplication and ordering; a claim
    with no active metadata gets an exact zero vector.
    """

    def __init__(self, graph: ag.Graph, prefix: str, n_slots: int, cfg: ModelConfig,
                 rng: np.random.Generator):
        self.n_slots = n_slots
        self.emb_dim = cfg.cnn_kernel
        self.filters = cfg.cnn_filters
        self.kernel = cfg.cnn_kernel
        # extra zero row at index n_slots backs padding positions
        table = _embedding_init(rng, n_slots + 1, self.emb_dim)
        table[n_slots] = 0.0
        self.table = graph.parameter(f"{prefix}/emb", table)
        self.conv_w = graph.parameter(
            f"{prefix}/conv/W", _glorot(rng, self.kernel, self.filters)
        )
        self.conv_b = graph.parameter(f"{prefix}/conv/b", np.zeros(self.filters))

    def __call__(self, slot_ids: np.ndarray, slot_mask: np.ndarray) -> Tensor:
        """slot_ids: (B, A) indices into the slot table, padded with n_slots.

        slot_mask: (B, A) availability of each position.
        """
        batch, width = slot_ids.shape
        dtype = self.table.data.dtype
        any_active = (slot_mask.sum(axis=1) > 0).astype(dtype).reshape(batch, 1)
        if width == 0:
            return _const(np.zeros((batch, self.filters), dtype=dtype))
        pooled = None
        n_windows = self.emb_dim - self.kernel + 1
        for a in range(width):
            emb = ag.embedding_lookup(self.table, slot_ids[:, a])
            m = slot_mask[:, a].astype(dtype).reshape(batch, 1)
            for w in range(n_windows):
                window = emb if n_windows == 1 else ag.narrow(emb, 1, w, self.kernel)
                act = ag.relu(ag.add(ag.matmul(window, self.conv_w), self.conv_b))
                act = ag.mul(act, m)
                pooled = act if pooled is None else ag.maximum(pooled, act)
        return ag.mul(pooled, any_active)


# ---------------------------------------------------------------------------
# batches


@dataclass
class TaskBatch:
    """One task-homogeneous batch, fully tensorized.

    Evidence arrays are page-major: row j*B+i is page j of instance i.
    """

    task_code: str
    claim_ids: np.ndarray                    # (B, T) int64
    labels_local: np.ndarray                 # (B,) int64
    labels_global: np.ndarray                # (B,) int64
    evid_ids: np.ndarray | None = None       # (k*B, T) int64
    evid_avail: np.ndarray | None = None     # (k*B, 1) float
    meta_slots: np.ndarray | None = None     # (B, A) int64
    meta_mask: np.ndarray | None = None      # (B, A) float

    @property
    def size(self) -> int:
        return self.claim_ids.shape[0]


@dataclass
class ForwardResult:
    probs: Tensor                            # (B, n_outputs)
    ranking: np.ndarray | None               # (B, k) detached ranking weights
    fallback: np.ndarray                     # (B,) bool, claim-only fallback used
    targets: np.ndarray                      # (B,) target ids aligned with probs columns


# ---------------------------------------------------------------------------
# the model


class VeracityModel:
    """Joint evidence-ranking veracity model over one or many domains.

    head_mode selects the output layer: "lel" scores against a shared
    label embedding matrix under per-task masks; "per_task" gives every
    domain its own softmax layer; "single" is the one-domain special
    case of per_task.
    """

    HEAD_MODES = ("lel", "per_task", "single")

    def __init__(self, cfg: ModelConfig, tasks, vocab_size: int,
                 metadata_size: int = 0, head_mode: str = "lel"):
        if head_mode not in self.HEAD_MODES:
            raise ConfigError(f"unknown head mode {head_mode!r}")
        if head_mode == "single" and len(tasks) != 1:
            raise ConfigError("single head mode requires exactly one task")
        if not tasks:
            raise ConfigError("at least one task required")
        self.cfg = cfg
        self.tasks = list(tasks)
        self.task_by_code = {t.code: t for t in self.tasks}
        self.vocab_size = vocab_size
        self.metadata_size = metadata_size
        self.head_mode = head_mode
        self.graph = ag.Graph(dtype=np.float64)
        rng = np.random.default_rng(cfg.seed)

        self.word_emb = self.graph.parameter(
            "emb/word", _embedding_init(rng, vocab_size, cfg.word_emb)
        )
        self.encoder = None
        if cfg.variant != "claim_only_embavg":
            self.encoder = BiLSTMEncoder(self.graph, "lstm", cfg.word_emb, cfg, rng)

        self.meta_encoder = None
        if cfg.use_metadata and metadata_size > 0:
            self.meta_encoder = MetadataEncoder(self.graph, "meta", metadata_size, cfg, rng)

        claim_dim = cfg.word_emb if cfg.variant == "claim_only_embavg" else 2 * cfg.hidden
        rep_dims = {
            "claim_only": claim_dim,
            "claim_only_embavg": claim_dim,
            "crawled_avg": 2 * claim_dim,
            "crawled_ranked": 4 * claim_dim,
        }
        self.rep_dim = rep_dims[cfg.variant]
        if self.meta_encoder is not None:
            self.rep_dim += cfg.cnn_filters

        if cfg.variant == "crawled_ranked":
            self.rank_w = self.graph.parameter(
                "rank/W", _glorot(rng, self.rep_dim, 1)
            )
            self.rank_b = self.graph.parameter("rank/b", np.zeros(1))

        self.n_global = sum(t.n_labels for t in self.tasks)
        if head_mode == "lel":
            if cfg.label_emb > self.rep_dim:
                raise ConfigError(
                    f"label_emb {cfg.label_emb} exceeds representation size {self.rep_dim}"
                )
            self.label_emb = self.graph.parameter(
                "lel/L", _embedding_init(rng, self.n_global, cfg.label_emb)
            )
            self.task_masks = {}
            for t in self.tasks:
                mask = np.zeros(self.n_global)
                mask[t.global_offset : t.global_offset + t.n_labels] = 1.0
                self.task_masks[t.code] = mask
        else:
            self.heads = {}
            for t in self.tasks:
                self.heads[t.code] = {
                    "W": self.graph.parameter(
                        f"head/{t.code}/W",
                        _glorot(rng, t.n_labels, self.rep_dim, (t.n_labels, self.rep_dim)),
                    ),
                    "b": self.graph.parameter(f"head/{t.code}/b", np.zeros(t.n_labels)),
                }

    # -- encoding pieces ----------------------------------------------------

    def _encode_tokens(self, ids: np.ndarray, train: bool, rng) -> Tensor:
        if self.cfg.variant == "claim_only_embavg":
            return embavg_encode(ids, self.word_emb)
        return self.encoder(ids, self.word_emb, train, rng)

    def _metadata(self, batch: TaskBatch) -> Tensor | None:
        if self.meta_encoder is None:
            return None
        if batch.meta_slots is None:
            raise ConfigError("model uses metadata but batch has no metadata slots")
        return self.meta_encoder(batch.meta_slots, batch.meta_mask)

    # -- forward ------------------------------------------------------------

    def forward(self, batch: TaskBatch, train: bool = False,
                rng: np.random.Generator | None = None) -> ForwardResult:
        if rng is None:
            rng = np.random.default_rng(0)
        cfg = self.cfg
        task = self.task_by_code[batch.task_code]
        B = batch.size
        h_a = self._encode_tokens(batch.claim_ids, train, rng)
        h_m = self._metadata(batch)
        ranking = None
        fallback = np.zeros(B, dtype=bool)

        if cfg.variant in ("claim_only", "claim_only_embavg"):
            rep = h_a if h_m is None else ag.concat([h_a, h_m], axis=-1)
            probs, targets = self._head(rep, None, None, task, batch)
            return ForwardResult(probs, None, fallback, targets)

        if batch.evid_ids is None or batch.evid_avail is None:
            raise ConfigError(f"variant {cfg.variant} requires evidence arrays")
        k = batch.evid_ids.shape[0] // B
        h_e_all = self._encode_tokens(batch.evid_ids, train, rng)
        avail_rows = batch.evid_avail
        fallback = avail_rows.reshape(k, B).sum(axis=0) == 0

        if cfg.variant == "crawled_avg":
            evid = [ag.narrow(h_e_all, 0, j * B, B) for j in range(k)]
            avail = [avail_rows[j * B : (j + 1) * B] for j in range(k)]
            rep = combine_avg(h_a, evid, avail)
            if h_m is not None:
                rep = ag.concat([rep, h_m], axis=-1)
            probs, targets = self._head(rep, None, None, task, batch)
            return ForwardResult(probs, None, fallback, targets)

        # crawled_ranked
        h_a_tiled = ag.concat([h_a] * k, axis=0)
        h_m_tiled = ag.concat([h_m] * k, axis=0) if h_m is not None else None
        s_r = match_pair(h_a_tiled, h_e_all, h_m_tiled)
        o = rank_evidence(s_r, self.rank_w, self.rank_b, avail_rows)
        if fallback.any():
            # no evidence at all: page-0 slot is the all-zero pseudo pair
            # [h_a; 0; h_a; 0]; force its weight to 1 so the claim alone scores
            bonus = np.zeros_like(avail_rows)
            bonus[:B, 0] = fallback.astype(avail_rows.dtype)
            o = ag.add(o, bonus)
        ranking = o.data.reshape(k, B).T.copy()
        pair_reps = [ag.narrow(s_r, 0, j * B, B) for j in range(k)]
        rank_weights = [ag.narrow(o, 0, j * B, B) for j in range(k)]
        probs, targets = self._head(None, pair_reps, rank_weights, task, batch)
        return ForwardResult(probs, ranking, fallback, targets)

    def _head(self, rep, pair_reps, rank_weights, task, batch: TaskBatch):
        if self.head_mode == "lel":
            mask = self.task_masks[task.code]
            if pair_reps is not None:
                probs = joint_predict(pair_reps, rank_weights, self.label_emb, mask)
            else:
                probs = label_scores(rep, self.label_emb, mask)
            return probs, batch.labels_global
        head = self.heads[task.code]
        if pair_reps is not None:
            w_t = ag.transpose(head["W"])
            total = None
            for s_r_j, o_j in zip(pair_reps, rank_weights):
                scores_j = ag.mul(ag.matmul(s_r_j, w_t), o_j)
                total = scores_j if total is None else ag.add(total, scores_j)
            probs = ag.softmax(ag.add(total, head["b"]))
        else:
            probs = stl_predict(rep, head["W"], head["b"])
        return probs, batch.labels_local

    def loss(self, batch: TaskBatch, train: bool = True,
             rng: np.random.Generator | None = None) -> tuple[Tensor, ForwardResult]:
        result = self.forward(batch, train, rng)
        return ag.cross_entropy(result.probs, result.targets), result

    def predict(self, batch: TaskBatch) -> ForwardResult:
        return self.forward(batch, train=False)

    def predicted_labels(self, batch: TaskBatch) -> list[str]:
        result = self.predict(batch)
        task = self.task_by_code[batch.task_code]
        out = []
        for row in result.probs.data:
            if self.head_mode == "lel":
                local = int(np.argmax(row[task.global_offset : task.global_offset + task.n_labels]))
            else:
                local = int(np.argmax(row))
            out.append(task.labels[local])
        return out

    # -- persistence ----------------------------------------------------------

    def set_dtype(self, dtype) -> None:
        """Switch parameter precision (float64 for checking, float32 to train)."""
        dtype = np.dtype(dtype)
        self.graph.dtype = dtype
        for t in self.graph.params.values():
            t.data = t.data.astype(dtype)

    def manifest(self, vocab_hash: str = "") -> dict:
        return {
            "variant": self.cfg.variant,
            "head_mode": self.head_mode,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "vocab_size": self.vocab_size,
            "vocab_hash": vocab_hash,
            "metadata_size": self.metadata_size,
            "tasks": [
                {
                    "code": t.code,
                    "labels": list(t.labels),
                    "global_offset": t.global_offset,
                    "instance_count": t.instance_count,
                }
                for t in self.tasks
            ],
        }

    def save(self, path, vocab_hash: str = "") -> None:
        path = Path(path)
        ag.save_checkpoint(path, self.graph.state_arrays())
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(self.manifest(vocab_hash), indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path, expected_vocab_hash: str | None = None) -> "VeracityModel":
        from .corpus import DomainTask

        path = Path(path)
        manifest = json.loads(path.with_suffix(path.suffix + ".json").read_text("utf-8"))
        if expected_vocab_hash is not None and manifest["vocab_hash"] != expected_vocab_hash:
            raise ConfigError(
                "checkpoint was built against a different vocabulary "
                f"({manifest['vocab_hash']} != {expected_vocab_hash})"
            )
        cfg = ModelConfig.from_dict(manifest["config"])
        tasks = [
            DomainTask(t["code"], tuple(t["labels"]), t["global_offset"], t["instance_count"])
            for t in manifest["tasks"]
        ]
        model = cls(cfg, tasks, manifest["vocab_size"], manifest["metadata_size"],
                    manifest["head_mode"])
        state = ag.load_checkpoint(path)
        model.set_dtype(next(iter(state.values())).dtype if state else np.float64)
        model.graph.load_state(state)
        return model
