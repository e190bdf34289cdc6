import math

import numpy as np
import pytest

from gfsl.eval import auc_roc
from gfsl.models import (
    DimensionError,
    EncoderParams,
    HeadParams,
    OptimizerState,
    PrototypeSet,
    TrainingError,
    adapt_head,
    batch_loss_and_grad,
    batch_train_epoch,
    batches,
    bce_loss,
    bce_with_logits,
    compute_prototypes,
    encode,
    encoder_backward,
    encoder_forward,
    episode_loss_and_grad,
    head_backward,
    head_logits,
    head_predict,
    init_encoder,
    init_head,
    load_checkpoint,
    protonet_episode_loss,
    protonet_loss_and_grad,
    protonet_predict_episode,
    protonet_scores,
    protonet_train_step,
    prototypes_from_embeddings,
    save_checkpoint,
    sigmoid,
)

from oracles import central_diff, rel_error


def identity_encoder(d):
    return EncoderParams([np.eye(d)], [np.zeros(d)])


def test_encoder_trivial_cases(rng):
    zero = EncoderParams([np.zeros((3, 4)), np.zeros((4, 2))], [np.full(4, 0.5), np.array([1.0, -2.0])])
    assert np.array_equal(encode(zero, rng.normal(size=3)), [1.0, -2.0])
    x = rng.normal(size=(5, 6))
    assert np.array_equal(encode(identity_encoder(6), x), x)
    with pytest.raises(DimensionError):
        encode(identity_encoder(6), np.zeros(5))


def test_encoder_matches_straight_line_oracle(rng):
    enc = init_encoder(7, (5, 4), 3, seed=1)
    x = rng.normal(size=(9, 7))
    h1 = np.tanh(x @ enc.weights[0] + enc.biases[0])
    h2 = np.tanh(h1 @ enc.weights[1] + enc.biases[1])
    want = h2 @ enc.weights[2] + enc.biases[2]
    assert np.max(np.abs(encode(enc, x) - want)) < 1e-12
    assert np.array_equal(encode(enc, x), encode(enc, x))


def test_default_encoder_shape():
    enc = init_encoder(10)
    assert enc.out_dim == 128 and [w.shape[1] for w in enc.weights] == [64, 64, 128]


def test_prototype_means():
    e = np.array([[0.0, 0.0], [2.0, 4.0], [6.0, 0.0]])
    y = np.array([[1, 0], [1, 1], [0, 0]])
    p = prototypes_from_embeddings(e, y)
    assert np.array_equal(p.z[0], [1.0, 2.0])
    assert np.array_equal(p.z[1], [2.0, 4.0])
    with pytest.raises(ValueError):
        prototypes_from_embeddings(e, np.array([[1, 0], [1, 0], [0, 0]]))


def test_prototypes_direct_sum_oracle(rng):
    emb = rng.normal(size=(10, 4))
    y = rng.integers(0, 2, size=(10, 3))
    y[0] = 1
    p = prototypes_from_embeddings(emb, y)
    for c in range(3):
        members = [emb[i] for i in range(10) if y[i, c]]
        z = sum(members) / len(members)
        mu = sum(math.sqrt(sum((emb[i][d] - z[d]) ** 2 for d in range(4))) for i in range(10)) / 10
        assert np.max(np.abs(p.z[c] - z)) < 1e-12
        assert abs(p.mu[c] - mu) < 1e-12
        assert p.mu[c] >= 0


def test_protonet_score_cases():
    enc = identity_encoder(2)
    protos = PrototypeSet(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([1.3, 5.0]))
    p = protonet_scores(enc, protos, np.array([0.0, 0.0]))
    assert p[0] == pytest.approx(0.7858, abs=5e-5)
    assert p[0] == pytest.approx(1 / (1 + math.exp(-1.3)), abs=1e-15)
    assert p[1] == pytest.approx(0.5, abs=1e-15)


def test_protonet_one_dimensional_hand_case():
    # embeddings on a line: train 0 (class a), 2 (class a), 10 (not finding)
    enc = identity_encoder(1)
    x_trn = np.array([[0.0], [2.0], [10.0]])
    y_trn = np.array([[1], [1], [0]])
    protos = compute_prototypes(enc, x_trn, y_trn)
    assert protos.z[0, 0] == 1.0
    assert protos.mu[0] == pytest.approx((1 + 1 + 9) / 3, abs=1e-15)
    p = protonet_scores(enc, protos, np.array([[4.0], [1.0]]))
    assert p[0, 0] == pytest.approx(1 / (1 + math.exp(-(11 / 3 - 3))), abs=1e-12)
    assert p[1, 0] == pytest.approx(1 / (1 + math.exp(-11 / 3)), abs=1e-12)


def test_protonet_decreasing_in_distance():
    enc = identity_encoder(2)
    protos = PrototypeSet(np.zeros((1, 2)), np.array([2.0]))
    xs = np.array([[r, 0.0] for r in np.linspace(0, 5, 20)])
    p = protonet_scores(enc, protos, xs)[:, 0]
    assert np.all(np.diff(p) < 0)


def test_prototype_regions_overlap():
    # two nearby prototypes: a point between them is positive for both
    enc = identity_encoder(2)
    x_trn = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 10.0]])
    y_trn = np.array([[1, 0], [0, 1], [0, 0]])
    p = protonet_predict_episode(enc, x_trn, y_trn, np.array([[0.5, 0.0]]))
    assert p[0, 0] > 0.5 and p[0, 1] > 0.5


def test_translation_invariance(rng):
    emb_trn = rng.normal(size=(8, 5))
    y_trn = rng.integers(0, 2, size=(8, 3))
    y_trn[0] = 1
    emb_tst = rng.normal(size=(6, 5))
    shift = rng.normal(size=5) * 10
    enc = identity_encoder(5)
    a = protonet_predict_episode(enc, emb_trn, y_trn, emb_tst)
    b = protonet_predict_episode(enc, emb_trn + shift, y_trn, emb_tst + shift)
    assert np.max(np.abs(a - b)) < 1e-10


def test_bce_trivial_cases():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _ = bce_loss(y, y)
    assert loss < 1e-10
    loss, g = bce_loss(np.full((2, 2), 0.5), y)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    assert np.allclose(g, (0.5 - y) / 4)
    assert bce_with_logits(np.zeros((2, 2)), y)[0] == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(DimensionError):
        bce_loss(np.zeros(3), np.zeros(2))
    assert np.isfinite(bce_with_logits(np.array([800.0, -800.0]), np.array([0.0, 1.0]))[0])


def test_bce_gradient_finite_difference(rng):
    for _ in range(20):
        s = rng.normal(size=(4, 3))
        y = rng.integers(0, 2, size=(4, 3)).astype(float)
        _, g = bce_with_logits(s, y)
        num = central_diff(lambda: bce_with_logits(s, y)[0], [s])
        assert rel_error([g], num) < 1e-6
        _, g2 = bce_loss(sigmoid(s), y)
        num2 = central_diff(lambda: bce_loss(sigmoid(s), y)[0], [s])
        assert rel_error([g2], num2) < 1e-6


def test_encoder_and_head_gradients(rng):
    for draw in range(10):
        enc = init_encoder(4, (5,), 3, seed=draw)
        enc = EncoderParams([w + 0.1 * rng.normal(size=w.shape) for w in enc.weights],
                            [b + 0.1 * rng.normal(size=b.shape) for b in enc.biases])
        head = init_head(2, 3, seed=draw)
        x = rng.normal(size=(6, 4))
        y = rng.integers(0, 2, size=(6, 2))
        loss, g_enc, g_head = batch_loss_and_grad(enc, head, x, y)
        f = lambda: batch_loss_and_grad(enc, head, x, y)[0]  # noqa: E731
        num = central_diff(f, enc.arrays() + head.arrays())
        assert rel_error(g_enc.arrays() + g_head.arrays(), num) < 1e-4


def test_protonet_gradients_small_episode(rng):
    # 2 classes, 6 examples, 2-layer encoder, all encoder parameters
    for draw in range(5):
        enc = init_encoder(3, (4,), 3, seed=draw)
        x_trn = rng.normal(size=(6, 3))
        y_trn = np.array([[1, 0], [1, 0], [0, 1], [0, 1], [1, 1], [0, 0]])
        x_tst = rng.normal(size=(5, 3))
        y_tst = rng.integers(0, 2, size=(5, 2))
        loss, grads = protonet_loss_and_grad(enc, x_trn, y_trn, x_tst, y_tst)
        assert loss == pytest.approx(protonet_episode_loss(enc, x_trn, y_trn, x_tst, y_tst), abs=1e-12)
        arrays = enc.arrays()
        num = central_diff(lambda: protonet_episode_loss(enc, x_trn, y_trn, x_tst, y_tst), arrays)
        assert rel_error(grads.arrays(), num) < 1e-4


def test_protonet_embedding_gradients(rng):
    # through prototypes and mean-distance offsets, w.r.t. raw embeddings
    for _ in range(10):
        e_trn = rng.normal(size=(7, 4))
        e_tst = rng.normal(size=(5, 4))
        y_trn = rng.integers(0, 2, size=(7, 3))
        y_trn[0] = 1
        y_tst = rng.integers(0, 2, size=(5, 3))
        _, d_trn, d_tst = episode_loss_and_grad(e_trn, y_trn, e_tst, y_tst)
        num = central_diff(lambda: episode_loss_and_grad(e_trn, y_trn, e_tst, y_tst)[0], [e_trn, e_tst])
        assert rel_error([d_trn, d_tst], num) < 1e-4


def test_head_trivial_cases(rng):
    enc = identity_encoder(2)
    assert np.all(head_predict(enc, init_head(3, 2), rng.normal(size=(4, 2))) == 0.5)
    head = HeadParams(np.array([[1.0, -2.0]]), np.array([0.5]))
    p = head_predict(enc, head, np.array([[3.0, 1.0]]))
    assert p[0, 0] == pytest.approx(1 / (1 + math.exp(-1.5)), abs=1e-15)
    bumped = HeadParams(np.array([[1.0, -2.0], [0.0, 0.0]]), np.array([0.5, 0.0]))
    more = HeadParams(bumped.weight, np.array([0.9, 0.0]))
    a, b = head_predict(enc, bumped, np.array([[3.0, 1.0]])), head_predict(enc, more, np.array([[3.0, 1.0]]))
    assert b[0, 0] > a[0, 0] and b[0, 1] == a[0, 1]
    with pytest.raises(DimensionError):
        head_logits(head, np.zeros((1, 3)))


def test_lr_zero_keeps_parameters(rng):
    enc = init_encoder(3, (4,), 3, seed=0)
    x = rng.normal(size=(6, 3))
    y = np.array([[1, 0], [0, 1]] * 3)
    for opt in (OptimizerState("sgd", lr=0.0), OptimizerState("adamw", lr=0.0)):
        new, _ = protonet_train_step(enc, x, y, x, y, opt)
        assert all(np.array_equal(a, b) for a, b in zip(new.arrays(), enc.arrays()))


def test_protonet_step_decreases_loss(rng):
    enc = init_encoder(4, (8,), 4, seed=3)
    x_trn, x_tst = rng.normal(size=(8, 4)), rng.normal(size=(6, 4))
    y_trn = np.array([[1, 0], [0, 1]] * 4)
    y_tst = rng.integers(0, 2, size=(6, 2))
    before = protonet_episode_loss(enc, x_trn, y_trn, x_tst, y_tst)
    new, loss = protonet_train_step(enc, x_trn, y_trn, x_tst, y_tst, OptimizerState("sgd", lr=1e-3))
    assert loss == pytest.approx(before)
    assert protonet_episode_loss(new, x_trn, y_trn, x_tst, y_tst) < before


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_step_aborts():
    enc = EncoderParams([np.full((2, 2), np.nan)], [np.zeros(2)])
    y = np.array([[1], [0]])
    with pytest.raises(TrainingError):
        protonet_train_step(enc, np.ones((2, 2)), y, np.ones((2, 2)), y, OptimizerState())


def test_adamw_matches_hand_step():
    p, g = np.array([1.0, -2.0]), np.array([0.5, 0.25])
    opt = OptimizerState("adamw", lr=0.1, weight_decay=0.01)
    (out,) = opt.apply([p], [g])
    # first step: m_hat = g, v_hat = g^2, so the Adam term is lr * sign(g)
    want = p * (1 - 0.1 * 0.01) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(out, want, atol=1e-15)
    assert opt.step == 1


def test_batch_partition():
    assert [len(b) for b in batches(130, 64)] == [64, 64, 2]
    got = np.sort(np.concatenate(batches(130, 64, np.random.default_rng(0))))
    assert np.array_equal(got, np.arange(130))


def test_batch_epoch_fixed_point():
    # zero inputs and targets matching the zero-head's output: no gradient
    enc = EncoderParams([np.zeros((3, 2))], [np.zeros(2)])
    head = init_head(2, 2)
    x, y = np.zeros((10, 3)), np.full((10, 2), 0.5)
    new_enc, new_head, _ = batch_train_epoch(enc, head, x, y, OptimizerState("sgd", lr=0.1), 4, 0)
    assert np.allclose(new_enc.weights[0], 0) and np.allclose(new_head.weight, 0)


def _separable(rng, n=200, d=6, c=3):
    centres = np.eye(c, d) * 4
    y = (rng.random((n, c)) < 0.35).astype(float)
    x = y @ centres + rng.normal(size=(n, d)) * 0.5
    return x, y


def test_batch_loss_decreases(rng):
    x, y = _separable(rng)
    enc = init_encoder(6, (16,), 8, seed=0)
    head = init_head(3, 8, seed=1)
    opt = OptimizerState("adamw", lr=1e-2)
    frozen = lambda e, h: batch_loss_and_grad(e, h, x[:64], y[:64])[0]  # noqa: E731
    losses = [frozen(enc, head)]
    for epoch in range(10):
        enc, head, _ = batch_train_epoch(enc, head, x, y, opt, 64, epoch)
        losses.append(frozen(enc, head))
    assert losses[-1] < 0.5 * losses[0]
    assert all(b < a + 0.02 for a, b in zip(losses, losses[1:]))


def test_batch_epoch_checks_head_width(rng):
    x, y = _separable(rng)
    with pytest.raises(ValueError):
        batch_train_epoch(init_encoder(6, (4,), 4), init_head(2, 4), x, y, OptimizerState())


def test_adapt_head_isolation_and_identity(rng):
    enc = init_encoder(6, (8,), 5, seed=2)
    snapshot = [a.copy() for a in enc.arrays()]
    x, y = _separable(rng, n=30)
    head = adapt_head(enc, x, y, 100, 0.5, 0.05, rng=1)
    assert all(np.array_equal(a, b) for a, b in zip(snapshot, enc.arrays()))
    assert head.weight.shape == (3, 5)
    zero = adapt_head(enc, x, y, 0, 0.5, 0.05, rng=1)
    assert np.array_equal(zero.weight, np.zeros((3, 5))) and np.array_equal(zero.bias, np.zeros(3))
    a = adapt_head(enc, x, y, 20, 0.5, 0.05, rng=5)
    b = adapt_head(enc, x, y, 20, 0.5, 0.05, rng=5)
    assert np.array_equal(a.weight, b.weight)
    for bad in (0.0, 1.5):
        with pytest.raises(ValueError):
            adapt_head(enc, x, y, 1, bad)


def test_adapt_head_separable_fixture(rng):
    x, y = _separable(rng, n=60)
    head = adapt_head(identity_encoder(6), x, y, 100, 0.5, 0.05, rng=0)
    p = sigmoid(head_logits(head, x))
    assert auc_roc(p.ravel(), y.ravel()) > 0.99


def test_adapt_subset_size():
    sizes = []

    class Spy(np.random.Generator):
        def choice(self, n, m, replace=True):
            sizes.append(m)
            return super().choice(n, m, replace=replace)

    enc = identity_encoder(2)
    adapt_head(enc, np.ones((5, 2)), np.ones((5, 1)), 3, 0.5, 0.05, rng=Spy(np.random.PCG64(0)))
    adapt_head(enc, np.ones((3, 2)), np.ones((3, 1)), 1, 0.1, 0.05, rng=Spy(np.random.PCG64(0)))
    assert sizes == [3, 3, 3, 1]


def test_checkpoint_round_trip(tmp_path):
    enc = init_encoder(5, (4,), 3, seed=9)
    head = init_head(2, 3, seed=4)
    opt = OptimizerState("adamw", lr=1e-3)
    opt.apply(enc.arrays(), [np.ones_like(a) for a in enc.arrays()])
    save_checkpoint(tmp_path / "c.json", "batchbased", enc, head, opt, {"lr": 1e-3}, {"k": 1})
    ck = load_checkpoint(tmp_path / "c.json")
    assert ck["method"] == "batchbased" and ck["extra"] == {"k": 1}
    for a, b in zip(enc.arrays() + head.arrays() + opt.m + opt.v,
                    ck["encoder"].arrays() + ck["head"].arrays() + ck["optimizer"].m + ck["optimizer"].v):
        assert a.tobytes() == b.tobytes()
    assert ck["optimizer"].step == 1
    save_checkpoint(tmp_path / "d.json", "batchbased", ck["encoder"], ck["head"], ck["optimizer"], {"lr": 1e-3},
                    {"k": 1})
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()


def test_checkpoint_rejects_tampering(tmp_path):
    save_checkpoint(tmp_path / "c.json", "protonet-ml", init_encoder(2, (2,), 2), config={"a": 1})
    text = (tmp_path / "c.json").read_text().replace('"a": 1', '"a": 2')
    (tmp_path / "c.json").write_text(text)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.json")


def test_encoder_backward_shapes(rng):
    enc = init_encoder(3, (4, 5), 2)
    out, cache = encoder_forward(enc, rng.normal(size=(7, 3)))
    g = encoder_backward(enc, cache, np.ones_like(out))
    assert [w.shape for w in g.weights] == [w.shape for w in enc.weights]
    hg, d_emb = head_backward(init_head(3, 2), out, np.ones((7, 3)))
    assert hg.weight.shape == (3, 2) and d_emb.shape == out.shape
