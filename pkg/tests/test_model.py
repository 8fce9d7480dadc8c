import numpy as np
import pytest

import claimcheck.autograd as ag
from claimcheck.autograd import Tensor
from claimcheck.config import ConfigError, ModelConfig
from claimcheck.corpus import DomainTask
from claimcheck.model import (
    BiLSTMEncoder,
    MetadataEncoder,
    TaskBatch,
    VeracityModel,
    combine_avg,
    embavg_encode,
    joint_predict,
    label_scores,
    match_pair,
    pad_label_matrix,
    rank_evidence,
    stl_predict,
)
from claimcheck.synthetic import synthetic_tasks


def _cfg(**kw):
    base = dict(variant="claim_only", word_emb=8, hidden=6, layers=1,
                dropout=0.0, batch=4, label_emb=4, cnn_filters=5, cnn_kernel=4,
                seed=0, token_cap=6)
    base.update(kw)
    return ModelConfig(**base)


def _tasks(counts=(3,)):
    return synthetic_tasks(counts)


def _batch(task, ids, labels_local, **kw):
    labels_local = np.asarray(labels_local, dtype=np.int64)
    return TaskBatch(
        task_code=task.code,
        claim_ids=np.asarray(ids, dtype=np.int64),
        labels_local=labels_local,
        labels_global=labels_local + task.global_offset,
        **kw,
    )


# --- sequence encoders -------------------------------------------------------------


def test_encoder_output_shape():
    cfg = _cfg(hidden=5, layers=2)
    graph = ag.Graph()
    rng = np.random.default_rng(0)
    emb = graph.parameter("emb", rng.normal(size=(20, cfg.word_emb)))
    enc = BiLSTMEncoder(graph, "lstm", cfg.word_emb, cfg, rng)
    ids = rng.integers(1, 20, size=(3, 7))
    out = enc(ids, emb, train=False, rng=rng)
    assert out.shape == (3, 2 * cfg.hidden)


def test_encoder_all_padding_embeds_to_exact_zero():
    cfg = _cfg()
    graph = ag.Graph()
    rng = np.random.default_rng(1)
    emb = graph.parameter("emb", rng.normal(size=(10, cfg.word_emb)))
    enc = BiLSTMEncoder(graph, "lstm", cfg.word_emb, cfg, rng)
    ids = np.array([[2, 3, 0, 0], [0, 0, 0, 0]])
    out = enc(ids, emb, train=False, rng=rng)
    assert np.all(out.data[1] == 0.0)
    assert np.any(out.data[0] != 0.0)


def test_encoder_direction_sensitive():
    cfg = _cfg()
    graph = ag.Graph()
    rng = np.random.default_rng(2)
    emb = graph.parameter("emb", rng.normal(size=(10, cfg.word_emb)))
    enc = BiLSTMEncoder(graph, "lstm", cfg.word_emb, cfg, rng)
    fwd = enc(np.array([[2, 3, 4]]), emb, train=False, rng=rng)
    rev = enc(np.array([[4, 3, 2]]), emb, train=False, rng=rng)
    assert not np.allclose(fwd.data, rev.data)


def test_encoder_padding_equals_unpadded():
    cfg = _cfg(layers=2)
    graph = ag.Graph(dtype=np.float64)
    rng = np.random.default_rng(3)
    emb = graph.parameter("emb", rng.normal(size=(10, cfg.word_emb)))
    enc = BiLSTMEncoder(graph, "lstm", cfg.word_emb, cfg, rng)
    padded = enc(np.array([[5, 6, 7, 0, 0], [8, 9, 0, 0, 0]]), emb,
                 train=False, rng=rng)
    solo_a = enc(np.array([[5, 6, 7]]), emb, train=False, rng=rng)
    solo_b = enc(np.array([[8, 9]]), emb, train=False, rng=rng)
    np.testing.assert_allclose(padded.data[0], solo_a.data[0], rtol=1e-12)
    np.testing.assert_allclose(padded.data[1], solo_b.data[0], rtol=1e-12)


def test_encoder_gradient_matches_finite_differences():
    cfg = _cfg(hidden=3, word_emb=4, layers=2)
    graph = ag.Graph(dtype=np.float64)
    rng = np.random.default_rng(4)
    emb = graph.parameter("emb", rng.normal(size=(8, cfg.word_emb)) * 0.3)
    enc = BiLSTMEncoder(graph, "lstm", cfg.word_emb, cfg, rng)
    ids = np.array([[2, 3, 0], [4, 5, 6]])

    def loss_fn():
        out = enc(ids, emb, train=False, rng=rng)
        return ag.mean(ag.mul(out, out))

    err = ag.finite_difference_check(loss_fn, graph.params, samples_per_param=4)
    assert err < 1e-5


def test_embavg_hand_example():
    table = Tensor(np.array([[0.0, 0.0], [9.0, 9.0], [1.0, 2.0], [3.0, 4.0]]),
                   requires_grad=True)
    out = embavg_encode(np.array([[2, 3, 0, 0]]), table)
    np.testing.assert_allclose(out.data, [[2.0, 3.0]])


def test_embavg_permutation_invariant():
    rng = np.random.default_rng(5)
    table = Tensor(rng.normal(size=(12, 4)), requires_grad=True)
    ids = np.array([[3, 7, 2, 9, 0]])
    perm = np.array([[9, 2, 7, 3, 0]])
    a = embavg_encode(ids, table)
    b = embavg_encode(perm, table)
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12)


def test_embavg_empty_row_is_zero():
    table = Tensor(np.ones((5, 3)), requires_grad=True)
    out = embavg_encode(np.array([[0, 0], [1, 0]]), table)
    assert np.all(out.data[0] == 0.0)
    np.testing.assert_allclose(out.data[1], [1.0, 1.0, 1.0])


# --- representation builders ----------------------------------------------------------


def test_combine_avg_hand_example():
    h_a = Tensor(np.array([[1.0]]))
    evid = [Tensor(np.array([[2.0]])), Tensor(np.array([[4.0]]))]
    avail = [np.ones((1, 1)), np.ones((1, 1))]
    out = combine_avg(h_a, evid, avail)
    np.testing.assert_allclose(out.data, [[1.0, 3.0]])


def test_combine_avg_partial_availability_oracle():
    rng = np.random.default_rng(6)
    B, D, k = 5, 3, 10
    h_a = Tensor(rng.normal(size=(B, D)))
    pages = [rng.normal(size=(B, D)) for _ in range(k)]
    avail = [np.zeros((B, 1)) for _ in range(k)]
    n_avail = [7, 3, 0, 10, 1]
    for i, n in enumerate(n_avail):
        for j in range(n):
            avail[j][i, 0] = 1.0
    out = combine_avg(h_a, [Tensor(p) for p in pages], avail)
    for i, n in enumerate(n_avail):
        expected = (np.mean([pages[j][i] for j in range(n)], axis=0)
                    if n else np.zeros(D))
        np.testing.assert_allclose(out.data[i, :D], h_a.data[i], rtol=1e-12)
        np.testing.assert_allclose(out.data[i, D:], expected, rtol=1e-12)


def test_match_pair_hand_example():
    h_a = Tensor(np.array([[1.0, 2.0]]))
    h_e = Tensor(np.array([[3.0, 4.0]]))
    out = match_pair(h_a, h_e)
    np.testing.assert_allclose(out.data, [[1, 2, 3, 4, -2, -2, 3, 8]])


def test_match_pair_appends_metadata():
    h_a = Tensor(np.array([[1.0]]))
    h_e = Tensor(np.array([[2.0]]))
    h_m = Tensor(np.array([[5.0, 6.0]]))
    out = match_pair(h_a, h_e, h_m)
    np.testing.assert_allclose(out.data, [[1, 2, -1, 2, 5, 6]])


def test_match_pair_rejects_mismatched_dims():
    with pytest.raises(ConfigError, match="mismatch"):
        match_pair(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))


def test_rank_evidence_zero_logits_give_half():
    s_r = Tensor(np.zeros((3, 4)))
    w = Tensor(np.zeros((4, 1)), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    avail = np.array([[1.0], [1.0], [0.0]])
    out = rank_evidence(s_r, w, b, avail)
    np.testing.assert_allclose(out.data, [[0.5], [0.5], [0.0]])
    assert out.data[2, 0] == 0.0


def test_pad_label_matrix_zero_extends():
    L = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out = pad_label_matrix(L, 4)
    np.testing.assert_allclose(out.data, [[1, 2, 0, 0], [3, 4, 0, 0]])
    with pytest.raises(ConfigError, match="exceeds"):
        pad_label_matrix(L, 1)


# --- label-embedding scoring -----------------------------------------------------------


def test_label_scores_single_label_task_is_certain():
    rep = Tensor(np.random.default_rng(0).normal(size=(2, 4)))
    L = Tensor(np.random.default_rng(1).normal(size=(3, 2)))
    mask = np.array([0.0, 1.0, 0.0])
    probs = label_scores(rep, L, mask)
    np.testing.assert_allclose(probs.data[:, 1], 1.0)
    assert np.all(probs.data[:, [0, 2]] == 0.0)


def test_label_scores_match_plain_softmax_oracle():
    rng = np.random.default_rng(7)
    rep = rng.normal(size=(4, 6))
    L = rng.normal(size=(5, 3))
    mask = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
    probs = label_scores(Tensor(rep), Tensor(L), mask).data
    L_pad = np.hstack([L, np.zeros((5, 3))])
    scores = rep @ L_pad.T
    idx = [0, 1, 3]
    exp = np.exp(scores[:, idx] - scores[:, idx].max(axis=1, keepdims=True))
    expected = exp / exp.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs[:, idx], expected, rtol=1e-12)
    assert np.all(probs[:, [2, 4]] == 0.0)


def test_label_scores_never_leak_mass_across_mask():
    rng = np.random.default_rng(8)
    for _ in range(200):
        rep = Tensor(rng.normal(size=(3, 5)) * rng.uniform(0.1, 10))
        L = Tensor(rng.normal(size=(6, 5)))
        mask = np.zeros(6)
        on = rng.choice(6, size=rng.integers(1, 6), replace=False)
        mask[on] = 1.0
        probs = label_scores(rep, L, mask).data
        assert np.all(probs[:, mask == 0.0] == 0.0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-12)


def test_joint_predict_one_hot_ranking_selects_single_pair():
    rng = np.random.default_rng(9)
    B, D = 3, 4
    pair_a = Tensor(rng.normal(size=(B, D)))
    pair_b = Tensor(rng.normal(size=(B, D)))
    L = Tensor(rng.normal(size=(4, 2)))
    mask = np.array([1.0, 1.0, 1.0, 0.0])
    one = Tensor(np.ones((B, 1)))
    zero = Tensor(np.zeros((B, 1)))
    joint = joint_predict([pair_a, pair_b], [one, zero], L, mask)
    alone = label_scores(pair_a, L, mask)
    np.testing.assert_allclose(joint.data, alone.data, rtol=1e-12)


def test_joint_predict_matches_brute_force_oracle():
    rng = np.random.default_rng(10)
    B, D, k, n = 4, 5, 3, 6
    pairs = [rng.normal(size=(B, D)) for _ in range(k)]
    weights = [rng.uniform(size=(B, 1)) for _ in range(k)]
    L = rng.normal(size=(n, 2))
    mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    probs = joint_predict(
        [Tensor(p) for p in pairs], [Tensor(w) for w in weights], Tensor(L), mask
    ).data

    L_pad = np.hstack([L, np.zeros((n, D - 2))])
    total = sum(w * (p @ L_pad.T) for p, w in zip(pairs, weights))
    idx = mask == 1.0
    exp = np.exp(total[:, idx] - total[:, idx].max(axis=1, keepdims=True))
    expected = np.zeros_like(total)
    expected[:, idx] = exp / exp.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs, expected, rtol=1e-10)


def test_stl_predict_zero_weights_uniform():
    h = Tensor(np.random.default_rng(0).normal(size=(2, 4)))
    W = Tensor(np.zeros((3, 4)))
    b = Tensor(np.zeros(3))
    probs = stl_predict(h, W, b)
    np.testing.assert_allclose(probs.data, 1.0 / 3.0)


def test_stl_predict_equals_lel_when_full_width():
    # with an all-ones mask and label rows as wide as the representation,
    # the two scoring paths coincide
    rng = np.random.default_rng(11)
    h = Tensor(rng.normal(size=(3, 4)))
    W = Tensor(rng.normal(size=(5, 4)))
    stl = stl_predict(h, W, Tensor(np.zeros(5)))
    lel = label_scores(h, W, np.ones(5))
    np.testing.assert_allclose(stl.data, lel.data, rtol=1e-12)


# --- metadata encoder ---------------------------------------------------------------


def _meta_encoder(n_slots=6, **kw):
    cfg = _cfg(**kw)
    graph = ag.Graph(dtype=np.float64)
    rng = np.random.default_rng(12)
    return MetadataEncoder(graph, "meta", n_slots, cfg, rng), graph


def test_metadata_encoder_output_dim_and_inactive_zero():
    enc, _ = _meta_encoder(cnn_filters=32)
    slot_ids = np.array([[0, 2, 6, 6], [6, 6, 6, 6]])
    slot_mask = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    out = enc(slot_ids, slot_mask)
    assert out.shape == (2, 32)
    assert np.all(out.data[1] == 0.0)
    assert np.any(out.data[0] != 0.0)


def test_metadata_encoder_duplication_invariant():
    enc, _ = _meta_encoder()
    once = enc(np.array([[1, 3, 6, 6]]), np.array([[1.0, 1.0, 0.0, 0.0]]))
    twice = enc(np.array([[1, 3, 3, 1]]), np.array([[1.0, 1.0, 1.0, 1.0]]))
    np.testing.assert_allclose(once.data, twice.data, rtol=1e-12)


def test_metadata_encoder_order_invariant():
    enc, _ = _meta_encoder()
    a = enc(np.array([[1, 4, 2]]), np.ones((1, 3)))
    b = enc(np.array([[2, 1, 4]]), np.ones((1, 3)))
    np.testing.assert_allclose(a.data, b.data, rtol=1e-12)


def test_metadata_encoder_pad_row_stays_zero_after_updates():
    enc, graph = _meta_encoder(n_slots=4)
    opt = ag.RMSProp(graph.params, lr=0.01)
    for _ in range(5):
        graph.zero_grad()
        out = enc(np.array([[0, 2, 4]]), np.array([[1.0, 1.0, 0.0]]))
        loss = ag.mean(ag.mul(out, out))
        loss.backward()
        opt.step()
    assert np.all(enc.table.data[4] == 0.0)


def test_metadata_encoder_gradient_matches_finite_differences():
    enc, graph = _meta_encoder(n_slots=5, cnn_filters=3, cnn_kernel=4)
    slot_ids = np.array([[0, 2, 5], [1, 5, 5]])
    slot_mask = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])

    def loss_fn():
        out = enc(slot_ids, slot_mask)
        return ag.mean(ag.mul(out, out))

    err = ag.finite_difference_check(loss_fn, graph.params, samples_per_param=4)
    assert err < 1e-6


# --- full model forward -----------------------------------------------------------


def _full_batch(task, cfg, B=3, with_evidence=True, rng=None, empty_instance=None,
                vocab=30):
    rng = rng or np.random.default_rng(20)
    T = cfg.token_cap
    ids = rng.integers(1, vocab, size=(B, T))
    labels = rng.integers(0, task.n_labels, size=B)
    kw = {}
    if with_evidence:
        k = 4
        evid = rng.integers(1, vocab, size=(B, k, T))
        avail = np.ones((B, k))
        avail[:, 2:] = 0.0
        if empty_instance is not None:
            avail[empty_instance] = 0.0
            evid[empty_instance] = 0
        evid[avail == 0.0] = 0
        kw["evid_ids"] = evid.transpose(1, 0, 2).reshape(k * B, T)
        kw["evid_avail"] = avail.T.reshape(k * B, 1)
    return _batch(task, ids, labels, **kw)


@pytest.mark.parametrize("variant", ["claim_only", "claim_only_embavg",
                                     "crawled_avg", "crawled_ranked"])
def test_forward_probabilities_valid(variant):
    tasks = _tasks((3, 4))
    cfg = _cfg(variant=variant)
    model = VeracityModel(cfg, tasks, vocab_size=30, head_mode="lel")
    batch = _full_batch(tasks[0], cfg, with_evidence=variant.startswith("crawled"))
    result = model.forward(batch)
    assert result.probs.shape == (3, 7)
    np.testing.assert_allclose(result.probs.data.sum(axis=1), 1.0, rtol=1e-10)
    assert np.all(result.probs.data[:, 3:] == 0.0)


def test_forward_ranking_weights_zero_for_missing_pages():
    tasks = _tasks((3,))
    cfg = _cfg(variant="crawled_ranked")
    model = VeracityModel(cfg, tasks, vocab_size=30, head_mode="lel")
    batch = _full_batch(tasks[0], cfg)
    result = model.forward(batch)
    assert result.ranking.shape == (3, 4)
    assert np.all(result.ranking[:, 2:] == 0.0)
    assert np.all(result.ranking[:, :2] > 0.0)


def test_forward_claim_only_fallback_for_evidence_free_instance():
    tasks = _tasks((3,))
    cfg = _cfg(variant="crawled_ranked")
    model = VeracityModel(cfg, tasks, vocab_size=30, head_mode="lel")
    batch = _full_batch(tasks[0], cfg, empty_instance=1)
    result = model.forward(batch)
    assert result.fallback.tolist() == [False, True, False]
    np.testing.assert_allclose(result.probs.data.sum(axis=1), 1.0, rtol=1e-10)
    # the pseudo pair gets a forced unit weight at the first page slot
    assert result.ranking[1, 0] == 1.0


def test_forward_per_task_and_single_heads():
    tasks = _tasks((3, 2))
    cfg = _cfg()
    mtl = VeracityModel(cfg, tasks, vocab_size=30, head_mode="per_task")
    batch = _full_batch(tasks[1], cfg, with_evidence=False)
    result = mtl.forward(batch)
    assert result.probs.shape == (3, 2)
    np.testing.assert_allclose(result.probs.data.sum(axis=1), 1.0, rtol=1e-10)

    stl = VeracityModel(cfg, [tasks[0]], vocab_size=30, head_mode="single")
    batch0 = _full_batch(tasks[0], cfg, with_evidence=False)
    assert stl.forward(batch0).probs.shape == (3, 3)


def test_single_head_requires_one_task():
    with pytest.raises(ConfigError, match="single"):
        VeracityModel(_cfg(), _tasks((2, 3)), vocab_size=10, head_mode="single")


def test_predicted_labels_are_task_local():
    tasks = _tasks((3, 4))
    cfg = _cfg()
    model = VeracityModel(cfg, tasks, vocab_size=30, head_mode="lel")
    batch = _full_batch(tasks[1], cfg, with_evidence=False)
    labels = model.predicted_labels(batch)
    assert len(labels) == 3
    assert all(lbl in tasks[1].labels for lbl in labels)


def test_metadata_feeds_every_variant():
    tasks = _tasks((3,))
    for variant in ("claim_only", "crawled_avg", "crawled_ranked"):
        cfg = _cfg(variant=variant, use_metadata=True)
        model = VeracityModel(cfg, tasks, vocab_size=30, metadata_size=9,
                              head_mode="lel")
        batch = _full_batch(tasks[0], cfg,
                            with_evidence=variant.startswith("crawled"))
        batch.meta_slots = np.array([[0, 4, 9], [9, 9, 9], [2, 9, 9]])
        batch.meta_mask = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0],
                                    [1.0, 0.0, 0.0]])
        result = model.forward(batch)
        np.testing.assert_allclose(result.probs.data.sum(axis=1), 1.0, rtol=1e-10)


def test_label_embedding_sharing_gradients_stay_in_task():
    tasks = _tasks((3, 4))
    cfg = _cfg()
    model = VeracityModel(cfg, tasks, vocab_size=30, head_mode="lel")
    batch = _full_batch(tasks[0], cfg, with_evidence=False)
    model.graph.zero_grad()
    loss, _ = model.loss(batch, train=False)
    loss.backward()
    g = model.label_emb.grad
    assert np.any(g[:3] != 0.0)
    assert np.all(g[3:] == 0.0)


def test_full_model_gradient_check_ranked():
    tasks = _tasks((2, 3))
    cfg = _cfg(variant="crawled_ranked", word_emb=4, hidden=3, layers=1,
               label_emb=3, token_cap=3)
    model = VeracityModel(cfg, tasks, vocab_size=12, head_mode="lel")
    rng = np.random.default_rng(30)
    batch = _full_batch(tasks[1], cfg, B=2, rng=rng, vocab=12)

    def loss_fn():
        loss, _ = model.loss(batch, train=False)
        return loss

    err = ag.finite_difference_check(loss_fn, model.graph.params,
                                     samples_per_param=2)
    assert err < 1e-5


# --- persistence ---------------------------------------------------------------------


def test_model_save_load_roundtrip(tmp_path):
    tasks = _tasks((3, 2))
    cfg = _cfg(variant="crawled_ranked")
    model = VeracityModel(cfg, tasks, vocab_size=30, head_mode="lel")
    batch = _full_batch(tasks[0], cfg)
    before = model.forward(batch).probs.data.copy()

    path = tmp_path / "model.ckpt"
    model.save(path, vocab_hash="abc123")
    loaded = VeracityModel.load(path, expected_vocab_hash="abc123")
    after = loaded.forward(batch).probs.data
    np.testing.assert_array_equal(before, after)


def test_model_load_rejects_wrong_vocab_hash(tmp_path):
    tasks = _tasks((2,))
    model = VeracityModel(_cfg(), tasks, vocab_size=10, head_mode="lel")
    path = tmp_path / "model.ckpt"
    model.save(path, vocab_hash="abc123")
    with pytest.raises(ConfigError, match="vocabulary"):
        VeracityModel.load(path, expected_vocab_hash="different")


def test_model_rejects_unknown_head_mode():
    with pytest.raises(ConfigError, match="head mode"):
        VeracityModel(_cfg(), _tasks((2,)), vocab_size=10, head_mode="fancy")
