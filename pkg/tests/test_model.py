import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gecco import tensor as T
from gecco.model import (
    ConfigError,
    GeccoModel,
    ModelConfig,
    adjacency,
    attention_mixing_matrix,
    batchnorm,
    cxr_config,
    forward,
    mstar_config,
    predict,
    vectorize,
)

SMALL = ModelConfig(image_h=6, image_w=5, d_out=9, batch_size=7, num_classes=4)


def batch(cfg, b, seed=0):
    return np.random.default_rng(seed).random((b, cfg.input_dim), dtype=np.float32)


def test_vectorize_is_row_major():
    imgs = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    v = vectorize(imgs)
    assert v.shape == (2, 12)
    np.testing.assert_array_equal(v[1], imgs[1].ravel())
    assert v[0, 4] == imgs[0, 1, 0]


def test_vectorize_rejects_bad_batches():
    with pytest.raises(T.ShapeError):
        vectorize(np.ones((3, 4)))
    with pytest.raises(T.ShapeError):
        vectorize([np.ones((2, 2)), np.ones((3, 3))])


@pytest.mark.parametrize("kw", [
    dict(image_h=0), dict(d_out=1), dict(num_classes=1), dict(batch_size=0),
    dict(dropout_rate=1.0), dict(dropout_rate=-0.1), dict(gcn_layers=-1),
    dict(adjacency_mode="knn"), dict(bn_inference="magic"),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_profiles():
    assert mstar_config().input_dim == 128 * 128 and mstar_config().d_out == 86
    assert cxr_config().num_classes == 2 and cxr_config().image_h == 224
    assert ModelConfig().pooled_dim == 43


def test_forward_shapes_and_probabilities():
    for att in (True, False):
        cfg = SMALL.replace(use_attention=att)
        m = GeccoModel.init(cfg, 1).eval()
        tr = forward(m, batch(cfg, 7))
        assert tr.probabilities.shape == (7, 4)
        np.testing.assert_allclose(tr.probabilities.sum(axis=1), 1, atol=1e-6)
        assert tr.x4.shape == (7, 4) and tr.x6.shape == (7, 4)
        assert tr.x5 is None if not att else tr.x5.shape == (7, 4)


def test_all_ones_aggregate_is_column_sum():
    m = GeccoModel.init(SMALL, 2).eval()
    tr = forward(m, batch(SMALL, 7, seed=3))
    agg = tr.gcn_aggregates[0]
    expected = T.column_sums(tr.x3)
    for row in agg:
        np.testing.assert_allclose(row, expected[0], rtol=1e-6)


def test_row_normalized_adjacency():
    a = adjacency(4, "row-normalized")
    np.testing.assert_allclose(a.sum(axis=1), 1.0)
    cfg = SMALL.replace(adjacency_mode="row-normalized")
    tr = forward(GeccoModel.init(cfg, 0).eval(), batch(cfg, 7))
    np.testing.assert_allclose(tr.gcn_aggregates[0][0], tr.x3.mean(axis=0), rtol=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.booleans())
def test_graph_path_is_permutation_equivariant(seed, b, att):
    cfg = SMALL.replace(batch_size=b, use_attention=att)
    # float64: batch norm scales summation-order rounding in dead features by up to 1/sqrt(eps)
    m = GeccoModel.init(cfg, seed % 1000).copy(np.float64).eval()
    x = batch(cfg, b, seed).astype(np.float64)
    perm = np.random.default_rng(seed).permutation(b)
    a, p = forward(m, x), forward(m, x[perm])
    for name in ("x4", "x6", "logits"):
        np.testing.assert_allclose(getattr(p, name), getattr(a, name)[perm], rtol=1e-9, atol=1e-11)
    if att:
        np.testing.assert_allclose(p.x5, a.x5[perm], rtol=1e-9, atol=1e-11)


def test_gcn_layers_zero_equals_graph_off():
    x = batch(SMALL, 7)
    a = GeccoModel.init(SMALL.replace(gcn_layers=0), 5).eval()
    b = GeccoModel.init(SMALL.replace(use_gcn=False), 5).eval()
    np.testing.assert_array_equal(forward(a, x).probabilities, forward(b, x).probabilities)
    assert not forward(a, x).graph_active


def test_batch_of_one_bypasses_graph():
    m = GeccoModel.init(SMALL, 4).eval()
    off = GeccoModel.init(SMALL.replace(use_gcn=False), 4).eval()
    off.w1, off.b1, off.w_cls, off.b_cls = m.w1, m.b1, m.w_cls, m.b_cls
    x = batch(SMALL, 1)
    tr = forward(m, x)
    assert not tr.graph_active and tr.adjacency is None and tr.attention is None
    np.testing.assert_array_equal(tr.probabilities, forward(off, x).probabilities)


def test_dropout_eval_identity_and_seeded_train():
    cfg = SMALL.replace(dropout_rate=0.5)
    m = GeccoModel.init(cfg, 0)
    x = batch(cfg, 7)
    ev = forward(m.eval(), x)
    assert ev.dropout_mask is None
    np.testing.assert_array_equal(ev.x2_dropped, ev.x2)
    m.train()
    a = forward(m, x, rng=11, update_running=False)
    b = forward(m, x, rng=11, update_running=False)
    np.testing.assert_array_equal(a.x3, b.x3)
    with pytest.raises(ConfigError):
        forward(m, x)  # train-mode dropout without a seed


def test_dropout_expectation_matches_eval():
    cfg = SMALL.replace(dropout_rate=0.5)
    m = GeccoModel.init(cfg, 0)
    x = batch(cfg, 7)
    ref = forward(m.eval(), x).x3
    m.train()
    acc = np.zeros_like(ref, dtype=np.float64)
    n = 1000
    for seed in range(n):
        acc += forward(m, x, rng=seed, update_running=False).x3
    mean = acc / n
    assert abs(mean.sum() - ref.sum()) / ref.sum() < 0.02
    # per-element: within 5 standard errors (p = 0.5 gives std = value)
    assert np.all(np.abs(mean - ref) <= 5 * ref / np.sqrt(n) + 1e-6)


def test_batchnorm_modes():
    rng = np.random.default_rng(0)
    x = rng.normal(3, 2, (16, 5)).astype(np.float32)
    g, b = np.ones((1, 5), np.float32), np.zeros((1, 5), np.float32)
    rm, rv = np.zeros((1, 5), np.float32), np.ones((1, 5), np.float32)
    out, _ = batchnorm(x, g, b, rm, rv, "train")
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=0), 1, atol=1e-3)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0, keepdims=True), rtol=1e-5)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0, ddof=1, keepdims=True), rtol=1e-5)
    before = rm.copy()
    batchnorm(x, g, b, rm, rv, "batch")
    np.testing.assert_array_equal(rm, before)
    ev, _ = batchnorm(x, g, b, rm, rv, "eval")
    np.testing.assert_allclose(ev, (x - rm) / np.sqrt(rv + 1e-5), rtol=1e-5)
    with pytest.raises(ConfigError):
        batchnorm(x[:1], g, b, rm, rv, "train")


def test_running_inference_uses_running_stats():
    cfg = SMALL.replace(bn_inference="running")
    m = GeccoModel.init(cfg, 0).eval()
    m.set_tensor("bn_running_mean", np.full((1, 9), 0.5))
    tr = forward(m, batch(cfg, 7))
    assert tr.bn_cache.mode == "eval"
    np.testing.assert_array_equal(tr.bn_cache.mean, m.bn_running_mean)


def test_eval_forward_does_not_touch_running_stats():
    m = GeccoModel.init(SMALL, 0).eval()
    before = {k: v.copy() for k, v in m.buffers().items()}
    forward(m, batch(SMALL, 7))
    for k, v in m.buffers().items():
        np.testing.assert_array_equal(v, before[k])


def test_attention_columns_and_identical_rows():
    rng = np.random.default_rng(0)
    x4 = rng.normal(size=(10, 6)).astype(np.float32)
    mix = attention_mixing_matrix(x4)
    np.testing.assert_allclose(mix.sum(axis=0), 1, atol=1e-6)
    same = np.tile(x4[:1], (10, 1))
    np.testing.assert_allclose(attention_mixing_matrix(same), np.full((10, 10), 0.1), atol=1e-6)


def test_gcn_residual_switch():
    x = batch(SMALL, 7)
    plain = GeccoModel.init(SMALL.replace(gcn_residual=False), 0).eval()
    tr = forward(plain, x)
    np.testing.assert_array_equal(tr.x4_conv, tr.gcn_sigmoids[0])
    res = GeccoModel.init(SMALL, 0).eval()
    tr = forward(res, x)
    np.testing.assert_allclose(tr.x4_conv, tr.gcn_sigmoids[0] + tr.x3, rtol=1e-6)


def test_input_width_checked():
    with pytest.raises(T.ShapeError):
        forward(GeccoModel.init(SMALL, 0).eval(), np.ones((3, 7), np.float32))


def test_predict_restores_mode():
    m = GeccoModel.init(SMALL, 0).train()
    p = predict(m, batch(SMALL, 7))
    assert p.shape == (7,) and m.mode == "train"


def test_set_tensor_keeps_dtype_and_shape():
    m = GeccoModel.init(SMALL, 0)
    m.set_tensor("b1", np.ones((1, 9)))
    assert m.b1.dtype == np.float32
    with pytest.raises(ValueError):
        m.set_tensor("b1", np.ones((1, 8)))
    with pytest.raises(KeyError):
        m.set_tensor("nope", np.ones((1, 1)))


def scalar_forward(x, w1, b1, w2, gamma, beta, wc, bc, residual):
    """Plain-loop walkthrough of one eval pass (batch statistics, attention on)."""
    import math

    sig = lambda v: 1 / (1 + math.exp(-v))
    B, D, C = len(x), len(b1), len(bc)
    x3 = [[max(0.0, max(0.0, sum(x[b][i] * w1[i][d] for i in range(len(x[b]))) + b1[d])) for d in range(D)]
          for b in range(B)]
    agg = [[sum(x3[j][d] for j in range(B)) for d in range(D)] for _ in range(B)]
    h = [[sig(sum(agg[b][k] * w2[k][d] for k in range(D))) + (x3[b][d] if residual else 0.0) for d in range(D)]
         for b in range(B)]
    bn = [[0.0] * D for _ in range(B)]
    for d in range(D):
        mu = sum(h[b][d] for b in range(B)) / B
        var = sum((h[b][d] - mu) ** 2 for b in range(B)) / B
        for b in range(B):
            bn[b][d] = (h[b][d] - mu) / math.sqrt(var + 1e-5) * gamma[d] + beta[d]
    x4 = [[max(bn[b][2 * j], bn[b][2 * j + 1]) for j in range(D // 2)] for b in range(B)]
    s = [[sig(sum(x4[i][k] * x4[j][k] for k in range(D // 2))) for j in range(B)] for i in range(B)]
    colsum = [sum(s[i][j] for i in range(B)) for j in range(B)]
    m = [[s[i][j] / colsum[j] for j in range(B)] for i in range(B)]
    x6 = [[sum(m[i][j] * x4[j][k] for j in range(B)) + x4[i][k] for k in range(D // 2)] for i in range(B)]
    logits = [[sum(x6[b][k] * wc[k][c] for k in range(D // 2)) + bc[c] for c in range(C)] for b in range(B)]
    out = []
    for row in logits:
        e = [math.exp(v - max(row)) for v in row]
        out.append([v / sum(e) for v in e])
    return out


@pytest.mark.parametrize("residual", [True, False])
def test_forward_matches_scalar_walkthrough(residual):
    cfg = ModelConfig(image_h=2, image_w=2, d_out=4, num_classes=2, batch_size=2, gcn_residual=residual)
    rng = np.random.default_rng(7)
    m = GeccoModel.init(cfg, 0).copy(np.float64).eval()
    for name, p in m.parameters().items():
        m.set_tensor(name, rng.uniform(-0.5, 0.5, p.shape))
    x = rng.random((2, 4))
    ref = scalar_forward(x.tolist(), m.w1.tolist(), m.b1[0].tolist(), m.w2[0].tolist(), m.bn_gamma[0].tolist(),
                         m.bn_beta[0].tolist(), m.w_cls.tolist(), m.b_cls[0].tolist(), residual)
    np.testing.assert_allclose(forward(m, x).probabilities, ref, rtol=1e-12)


def test_zero_features_fixed_point():
    x4 = np.zeros((5, 3), np.float32)
    np.testing.assert_allclose(attention_mixing_matrix(x4), np.full((5, 5), 0.2), rtol=1e-6)
    np.testing.assert_array_equal(attention_mixing_matrix(x4) @ x4, 0)
