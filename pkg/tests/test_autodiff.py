import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from offline_dispatch import autodiff as ad
from offline_dispatch.errors import MaskError, ShapeError
from offline_dispatch.rng import SplitMix64
from oracles import assert_grad_close


@pytest.fixture(autouse=True)
def float64_mode():
    ad.set_default_dtype(np.float64)
    yield
    ad.set_default_dtype(np.float32)


def randn(rng, *shape):
    return rng.normal(size=shape)


def test_scalar_product_rule():
    x = ad.parameter([3.0])
    y = ad.parameter([4.0])
    z = ad.total(ad.mul(x, y))
    ad.backward(z)
    assert x.grad == pytest.approx([4.0])
    assert y.grad == pytest.approx([3.0])


def test_backward_requires_scalar():
    x = ad.parameter(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(x, x))


def test_backward_accumulates_until_zeroed():
    w = ad.parameter([2.0])
    loss = ad.total(ad.mul(w, w))
    ad.backward(loss)
    first = w.grad.copy()
    ad.backward(loss)
    assert np.allclose(w.grad, 2 * first)
    w.zero_grad()
    ad.backward(loss)
    assert np.allclose(w.grad, first)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ad.matmul(ad.tensor(np.ones(3)), ad.tensor(np.ones((3, 2))))


def test_huber_closed_form():
    x = ad.tensor([0.0, 0.5, 2.0, -2.0])
    out = ad.huber(x, 1.0)
    assert np.allclose(out.data, [0.0, 0.125, 1.5, 1.5])
    out2 = ad.huber(ad.tensor([3.0]), 2.0)
    assert np.allclose(out2.data, [2 * (3 - 1)])


def test_logsumexp_single_survivor():
    x = ad.tensor([[5.0, -123.0]])
    out = ad.logsumexp_masked(x, np.array([[True, False]]))
    assert out.data == pytest.approx([5.0])


def test_softmax_two_equal():
    x = ad.tensor([[0.3, 0.3]])
    out = ad.softmax_masked(x, np.array([[True, True]]))
    assert np.allclose(out.data, [[0.5, 0.5]])


def test_softmax_rows_sum_to_one_masked_exact_zero():
    rng = np.random.default_rng(0)
    x = ad.tensor(randn(rng, 50, 7))
    mask = rng.random((50, 7)) < 0.6
    mask[:, 0] = True
    out = ad.softmax_masked(x, mask)
    assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
    assert (out.data[~mask] == 0.0).all()


def test_log_softmax_masked_zero_at_masked():
    rng = np.random.default_rng(1)
    x = ad.tensor(randn(rng, 10, 4))
    mask = np.ones((10, 4), dtype=bool)
    mask[:, 2] = False
    out = ad.log_softmax_masked(x, mask)
    assert (out.data[:, 2] == 0.0).all()
    probs = ad.softmax_masked(x, mask)
    assert np.allclose(np.exp(out.data[mask]), probs.data[mask])


def test_all_false_mask_row_raises():
    x = ad.tensor(np.zeros((2, 3)))
    mask = np.array([[True, True, True], [False, False, False]])
    for fn in (ad.softmax_masked, ad.log_softmax_masked, ad.logsumexp_masked):
        with pytest.raises(MaskError):
            fn(x, mask)


def test_masked_entries_get_zero_gradient():
    rng = np.random.default_rng(2)
    x = ad.parameter(randn(rng, 6, 5))
    mask = rng.random((6, 5)) < 0.5
    mask[:, 0] = True
    weights = ad.tensor(randn(rng, 6, 5))
    loss = ad.mean(ad.mul(ad.softmax_masked(x, mask), weights))
    ad.backward(loss)
    assert (x.grad[~mask] == 0.0).all()
    x.zero_grad()
    loss2 = ad.mean(ad.mul(ad.log_softmax_masked(x, mask), weights))
    ad.backward(loss2)
    assert (x.grad[~mask] == 0.0).all()


def test_dropout_eval_is_identity():
    x = ad.tensor(np.arange(12.0).reshape(3, 4))
    out = ad.dropout(x, 0.4, train=False, rng=SplitMix64(0))
    assert out is x


def test_dropout_train_scaling_preserves_mean():
    x = ad.tensor(np.ones((2000, 10)))
    out = ad.dropout(x, 0.4, train=True, rng=SplitMix64(42))
    kept = out.data != 0
    assert abs(kept.mean() - 0.6) < 0.02
    assert np.allclose(out.data[kept], 1.0 / 0.6)
    assert abs(out.data.mean() - 1.0) < 0.02


def test_dropout_gradient_matches_mask():
    x = ad.parameter(np.ones((5, 5)))
    out = ad.dropout(x, 0.5, train=True, rng=SplitMix64(3))
    ad.backward(ad.total(out))
    assert np.allclose(x.grad, (out.data != 0) * 2.0)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=0, max_value=10_000),
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=1, max_value=5),
)
def test_elementwise_ops_finite_difference(seed, rows, cols):
    rng = np.random.default_rng(seed)
    x = ad.parameter(randn(rng, rows, cols))
    y = ad.parameter(randn(rng, rows, cols))

    def build():
        parts = [
            ad.mean(ad.mul(x, y)),
            ad.mean(ad.add(x, y)),
            ad.mean(ad.sub(x, y)),
            ad.mean(ad.relu(x)),
            ad.mean(ad.huber(y, 1.0)),
            ad.mean(ad.minimum(x, y)),
            ad.mean(ad.exp(ad.mul(x, ad.tensor(np.full_like(x.data, 0.1))))),
        ]
        out = parts[0]
        for p in parts[1:]:
            out = ad.add(out, p)
        return out

    assert_grad_close(build, [x, y])


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_structural_ops_finite_difference(seed):
    rng = np.random.default_rng(seed)
    n, d, segs = 6, 4, 3
    x = ad.parameter(randn(rng, n, d))
    w = ad.parameter(randn(rng, 2 * d, 3))
    b = ad.parameter(randn(rng, 3))
    seg = rng.integers(0, segs, size=n)
    gather_idx = rng.integers(0, n, size=5)

    def build():
        g = ad.gather_rows(x, gather_idx)
        s = ad.sum_segments(x, seg, segs)
        c = ad.concat([x, x], axis=1)
        a = ad.affine(c, w, b)
        r = ad.reshape(a, (n * 3,))
        return ad.add(
            ad.add(ad.mean(g), ad.mean(s)),
            ad.add(ad.mean(r), ad.mean(ad.sum_axis(a, axis=0))),
        )

    assert_grad_close(build, [x, w, b])


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_masked_ops_finite_difference(seed):
    rng = np.random.default_rng(seed)
    x = ad.parameter(randn(rng, 5, 6))
    mask = rng.random((5, 6)) < 0.5
    mask[:, rng.integers(0, 6)] = True
    weights = randn(rng, 5, 6)
    idx = np.array([int(np.flatnonzero(m)[0]) for m in mask])

    def build():
        p = ad.softmax_masked(x, mask)
        lp = ad.log_softmax_masked(x, mask)
        lse = ad.logsumexp_masked(x, mask)
        picked = ad.take_per_row(lp, idx)
        return ad.add(
            ad.add(ad.mean(ad.mul(p, ad.tensor(weights))), ad.mean(lse)),
            ad.add(ad.mean(picked), ad.mean(ad.mean_axis(p, axis=1))),
        )

    assert_grad_close(build, [x])


def test_mlp_finite_difference():
    rng = np.random.default_rng(7)
    w1 = ad.parameter(randn(rng, 4, 8))
    b1 = ad.parameter(np.zeros(8))
    w2 = ad.parameter(randn(rng, 8, 8))
    b2 = ad.parameter(np.zeros(8))
    w3 = ad.parameter(randn(rng, 8, 1))
    b3 = ad.parameter(np.zeros(1))
    x = ad.tensor(randn(rng, 10, 4))

    def build():
        h = ad.relu(ad.affine(x, w1, b1))
        h = ad.relu(ad.affine(h, w2, b2))
        return ad.mean(ad.affine(h, w3, b3))

    assert_grad_close(build, [w1, b1, w2, b2, w3, b3])


def test_adam_zero_gradient_no_change():
    p = ad.parameter(np.array([1.0, -2.0]))
    opt = ad.Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    assert np.allclose(p.data, [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    # closed form: m_hat = g, v_hat = g^2 -> update = lr * sign(g) (eps-small)
    p = ad.parameter(np.array([1.0, 1.0, 1.0]))
    opt = ad.Adam({"p": p}, lr=0.01)
    p.grad = np.array([0.5, -3.0, 1e-3])
    opt.step()
    assert np.allclose(p.data - 1.0, [-0.01, 0.01, -0.01], atol=1e-5)


def test_adam_functional_matches_class():
    g = np.array([0.3, -0.7])
    p_fn = np.array([1.0, 2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    for t in range(1, 6):
        p_fn = ad.adam_step(p_fn, g, m, v, t, lr=0.05)

    p = ad.parameter(np.array([1.0, 2.0]))
    opt = ad.Adam({"p": p}, lr=0.05)
    for _ in range(5):
        p.grad = g.copy()
        opt.step()
    assert np.allclose(p.data, p_fn)


def test_adam_deterministic():
    def run():
        p = ad.parameter(np.array([0.5]))
        opt = ad.Adam({"p": p}, lr=0.1)
        for t in range(20):
            p.grad = np.array([np.sin(t)])
            opt.step()
        return p.data.copy()

    assert np.array_equal(run(), run())
