import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesfc.connectivity import ConnectivityMatrix
from bayesfc.errors import DimensionMismatch
from bayesfc.gcn import (
    N_CLASSES,
    GcnParams,
    GraphSample,
    TrainConfig,
    backward,
    backward_batch,
    class_motifs,
    forward,
    forward_batch,
    init_params,
    kfold_evaluate,
    loss,
    normalize_adjacency,
    softmax,
    stratified_folds,
    synth_motif_dataset,
    train,
)
from gradcheck import numeric_grads, rel_err


def graph(w, features=None, label=0):
    w = np.asarray(w, float)
    names = tuple(f"n{i}" for i in range(len(w)))
    return GraphSample(ConnectivityMatrix(names, w), features, label)


def random_params(in_dim, hidden, n_blocks, seed, batch_norm=False, dropout=0.0):
    p = init_params(in_dim, hidden, n_blocks, seed, dropout, batch_norm)
    rng = np.random.default_rng(seed + 1000)
    for k in p.tensors:
        p.tensors[k] = p.tensors[k] + 0.3 * rng.standard_normal(p.tensors[k].shape)
    return p


def loop_forward(a_hat, x, params):
    """Straight-line forward pass in plain Python loops (BN bypassed, eval mode)."""
    t = {k: v.tolist() for k, v in params.tensors.items()}
    a = a_hat.tolist()
    n = len(a)

    def mm(p, q):
        return [[sum(p[i][k] * q[k][j] for k in range(len(q))) for j in range(len(q[0]))] for i in range(len(p))]

    def relu(m):
        return [[max(v, 0.0) for v in row] for row in m]

    def add(p, q):
        return [[u + v for u, v in zip(r1, r2)] for r1, r2 in zip(p, q)]

    h = relu(mm(mm(a, x.tolist()), t["w0"]))
    h = relu(mm(mm(a, h), t["w1"]))
    for b in range(params.n_blocks):
        y = relu(mm(mm(a, h), t[f"b{b}_wa"]))
        z = mm(mm(a, y), t[f"b{b}_wb"])
        short = mm(h, t[f"b{b}_wp"]) if f"b{b}_wp" in t else h
        h = relu(add(z, short))
    readout = [sum(h[i][j] for i in range(n)) / n for j in range(len(h[0]))]
    logits = [sum(readout[k] * t["fc_w"][k][c] for k in range(len(readout))) + t["fc_b"][c] for c in range(6)]
    mx = max(logits)
    e = [math.exp(v - mx) for v in logits]
    return [v / sum(e) for v in e]


# -- normalize_adjacency -----------------------------------------------------


def test_normalize_adjacency_examples():
    np.testing.assert_allclose(normalize_adjacency(np.zeros((1, 1))), [[1.0]])
    np.testing.assert_allclose(normalize_adjacency(np.array([[0, 1], [1, 0.0]])), [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(normalize_adjacency(np.ones((4, 4)) - np.eye(4)), np.full((4, 4), 0.25))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_normalize_adjacency_symmetric_spectral_radius(n, seed):
    rng = np.random.default_rng(seed)
    w = np.triu(rng.exponential(size=(n, n)) * (rng.random((n, n)) < 0.6), 1)
    a = normalize_adjacency(w + w.T)
    np.testing.assert_array_equal(a, a.T)
    v = np.ones(n)
    lam = 0.0
    for _ in range(500):
        u = a @ v
        lam = np.linalg.norm(u) / np.linalg.norm(v)
        v = u / np.linalg.norm(u)
    assert lam <= 1 + 1e-9


# -- forward -----------------------------------------------------------------


def test_zero_head_gives_uniform():
    s = graph(np.array([[0, 1, 0], [1, 0, 2], [0, 2, 0.0]]))
    p = init_params(3, 4, 1, 0)
    p.tensors["fc_w"][:] = 0
    p.tensors["fc_b"][:] = 0
    probs, _ = forward(s, p)
    np.testing.assert_allclose(probs, np.full(6, 1 / 6), atol=1e-15)


def test_hand_evaluated_tiny_instance():
    # A_hat = [[.5,.5],[.5,.5]], X = [[1],[1]], every weight 0.5:
    # A X = [[1],[1]] -> H1 = 0.5, H2 = relu(A H1 w1) = 0.5, block: Y = 0.5, Z = 0.5,
    # Z + H2 Wp = 1.0 -> readout [1, 1] -> logits 1*0.5 + 1*0.5 + 0.5 = 1.5 for every class
    s = graph([[0, 1], [1, 0]], features=[[1.0], [1.0]])
    p = init_params(1, 2, 1, 0, dropout_rate=0.0, batch_norm=False)
    for k in p.tensors:
        p.tensors[k][...] = 0.5
    probs, cache = forward(s, p, "eval")
    np.testing.assert_allclose(cache["readout"], [[1.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(probs, np.full(6, 1 / 6), atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_forward_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    n, d = 4, 3
    w = np.triu(rng.random((n, n)), 1)
    s = graph(w + w.T, features=rng.normal(size=(n, d)))
    p = random_params(d, 3, 2, seed)
    probs, _ = forward(s, p, "eval")
    np.testing.assert_allclose(probs, loop_forward(s.a_hat, s.features, p), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_probs_valid_and_shift_invariant(seed):
    ds = synth_motif_dataset(1, 6, seed)
    p = random_params(6, 4, 1, seed % 1000, batch_norm=True)
    a, x = np.stack([s.a_hat for s in ds]), np.stack([s.features for s in ds])
    probs, _ = forward_batch(a, x, p)
    assert np.all(probs > 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    logits = np.random.default_rng(seed).normal(size=(3, 6)) * 10
    np.testing.assert_allclose(softmax(logits), softmax(logits + 123.4), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 6
    w = np.triu(rng.exponential(size=(n, n)), 1)
    s = graph(w + w.T)
    perm = rng.permutation(n)
    sp = graph(s.adjacency.weights[np.ix_(perm, perm)], s.features[perm][:, perm])
    p = random_params(n, 5, 2, seed % 997, batch_norm=True)
    # permuting feature columns too needs the matching row permutation of w0
    p2 = p.copy()
    p2.tensors["w0"] = p.tensors["w0"][perm]
    np.testing.assert_allclose(forward(s, p)[0], forward(sp, p2)[0], atol=1e-10)
    np.testing.assert_allclose(forward(s, p)[1]["readout"], forward(sp, p2)[1]["readout"], atol=1e-10)


def test_eval_deterministic_and_dropout_seeded():
    s = synth_motif_dataset(1, 6, 0)[0]
    p = random_params(6, 8, 1, 0, dropout=0.5)
    assert forward(s, p, "eval", 1)[0].tobytes() == forward(s, p, "eval", 2)[0].tobytes()
    assert forward(s, p, "train", 1)[0].tobytes() == forward(s, p, "train", 1)[0].tobytes()
    assert forward(s, p, "train", 1)[0].tobytes() != forward(s, p, "train", 2)[0].tobytes()


def test_dimension_mismatch():
    s = synth_motif_dataset(1, 6, 0)[0]
    with pytest.raises(DimensionMismatch):
        forward(s, init_params(7, 4, 1, 0))
    with pytest.raises(DimensionMismatch):
        graph(np.zeros((3, 3)), features=np.zeros((2, 3)))


# -- loss / backward ---------------------------------------------------------


def test_loss_examples():
    assert loss(np.full(6, 1 / 6), 3) == pytest.approx(math.log(6))
    assert loss(np.eye(6)[2], 2) == 0.0
    assert loss(np.array([0.5, 0.5, 0, 0, 0, 0]), 0) == pytest.approx(math.log(2))
    assert loss(np.eye(6)[0], 1) == pytest.approx(-math.log(1e-15))


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check_plain(seed):
    ds = synth_motif_dataset(1, 6, seed)
    a, x = np.stack([s.a_hat for s in ds]), np.stack([s.features for s in ds])
    y = np.array([s.label for s in ds])
    p = random_params(6, 4, 2, seed)
    _, cache = forward_batch(a, x, p)
    g = backward_batch(cache, p, y)
    fd = numeric_grads(a, x, y, p, False)
    for k in p.tensors:
        assert rel_err(g[k], fd[k]) <= 1e-4, k


@pytest.mark.parametrize("train_mode", [True, False])
def test_gradient_check_batch_norm(train_mode):
    ds = synth_motif_dataset(1, 6, 5)
    a, x = np.stack([s.a_hat for s in ds]), np.stack([s.features for s in ds])
    y = np.array([s.label for s in ds])
    p = random_params(6, 4, 2, 5, batch_norm=True)
    for k in p.running:
        p.running[k] = p.running[k] + 0.1 * np.arange(4)
    _, cache = forward_batch(a, x, p, train_mode)
    g = backward_batch(cache, p, y)
    fd = numeric_grads(a, x, y, p, train_mode)
    for k in p.tensors:
        assert rel_err(g[k], fd[k]) <= 1e-4, k


def test_logit_gradient_identity():
    s = synth_motif_dataset(1, 6, 3)[4]
    p = random_params(6, 4, 1, 3)
    probs, cache = forward(s, p)
    g = backward(s, p)
    np.testing.assert_allclose(g["fc_b"], probs - np.eye(6)[s.label], atol=1e-14)
    np.testing.assert_allclose(g["fc_w"], np.outer(cache["readout"][0], probs - np.eye(6)[s.label]), atol=1e-14)


def test_fc_gradient_rows_vanish_for_dead_readout():
    s = synth_motif_dataset(1, 6, 3)[0]
    p = random_params(6, 4, 0, 3)
    p.tensors["w1"][:, 1] = -50.0  # inputs to layer 2 are non-negative, so feature 1 dies
    _, cache = forward(s, p)
    assert cache["readout"][0, 1] == 0.0
    g = backward(s, p)
    assert np.all(g["fc_w"][1] == 0.0)


# -- training ----------------------------------------------------------------


def test_train_memorizes_small_dataset():
    ds = synth_motif_dataset(2, 8, 11)
    cfg = TrainConfig(learning_rate=1e-2, epochs=500, batch_size=16, dropout_rate=0.0, seed=1)
    res = train(ds, cfg)
    assert len(ds) == 12
    assert min(res.loss_trace) < 0.05


def test_train_deterministic():
    ds = synth_motif_dataset(4, 8, 2)
    cfg = TrainConfig(epochs=15, seed=4)
    a, b = train(ds, cfg), train(ds, cfg)
    assert a.loss_trace == b.loss_trace
    assert all(np.array_equal(a.params.tensors[k], b.params.tensors[k]) for k in a.params.tensors)


def test_train_ignores_dataset_order():
    ds = synth_motif_dataset(3, 8, 6)
    cfg = TrainConfig(epochs=8, seed=2, batch_size=5)
    perm = np.random.default_rng(0).permutation(len(ds))
    a, b = train(ds, cfg), train([ds[i] for i in perm], cfg)
    assert a.loss_trace == b.loss_trace
    assert a.val_trace == b.val_trace


def test_train_returns_best_validation_params():
    ds = synth_motif_dataset(5, 8, 3)
    res = train(ds, TrainConfig(epochs=30, seed=0, learning_rate=1e-2))
    assert res.best_epoch == int(np.argmin(res.val_trace))


def test_params_json_roundtrip():
    p = random_params(5, 3, 2, 0, batch_norm=True)
    q = GcnParams.from_json(p.to_json())
    assert all(np.array_equal(p.tensors[k], q.tensors[k]) for k in p.tensors)
    assert q.n_blocks == 2 and q.batch_norm


def test_graph_sample_json_roundtrip():
    s = synth_motif_dataset(1, 6, 0)[3]
    t = GraphSample.from_json(s.to_json())
    np.testing.assert_array_equal(t.a_hat, s.a_hat)
    assert t.label == 3


# -- k-fold ------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(12, 80), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_folds_partition(n, k, seed):
    labels = np.random.default_rng(seed).integers(0, 6, size=n)
    folds, _ = stratified_folds(labels, k, seed)
    allidx = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(allidx, np.arange(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1


def test_stratified_fold_class_balance():
    labels = np.repeat(np.arange(6), 10)
    folds, stratified = stratified_folds(labels, 10, 0)
    assert stratified
    for f in folds:
        assert sorted(labels[f].tolist()) == list(range(6))


def test_kfold_leave_one_out_and_fallback():
    ds = synth_motif_dataset(2, 6, 1)
    with pytest.warns(UserWarning):
        res = kfold_evaluate(ds, TrainConfig(folds=len(ds), epochs=3, hidden_dim=4))
    assert not res.stratified
    assert res.confusion.total == len(ds)
    assert len(res.fold_confusions) == len(ds)


def test_motifs_distinct():
    motifs = [frozenset(frozenset(e) for e in m) for m in class_motifs(10)]
    assert len(set(motifs)) == N_CLASSES
