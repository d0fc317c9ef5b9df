import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pathcast import autograd as ag
from pathcast.autograd import NumericError, Tensor


def leaf(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def test_forward_examples():
    assert ag.softmax(Tensor(np.full(5, 3.7))).data.tolist() == pytest.approx([0.2] * 5, abs=1e-15)
    assert ag.sigmoid(Tensor(0.0)).item() == 0.5
    X = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ag.matmul(Tensor(np.eye(2)), Tensor(X)).data, X)


def test_forward_errors():
    with pytest.raises(ValueError):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(NumericError):
        ag.log(Tensor(np.array([1.0, 0.0])))
    with pytest.raises(NumericError):
        ag.exp(Tensor(np.array([1e4])))


def test_backward_sum_and_l2():
    x = leaf([1.0, -2.0, 5.0])
    ag.backward(ag.sum(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]
    y = leaf([1.0, 2.0])
    ag.backward(ag.l2_norm_sq(y))
    assert y.grad.tolist() == [2.0, 4.0]


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ag.backward(ag.mul(leaf([1.0, 2.0]), 2.0))


def test_shared_subexpression_accumulates():
    x = leaf(3.0)
    ag.backward(ag.mul(x, x) + x)
    assert x.grad.item() == 7.0


def test_gradient_check_polynomial():
    x = leaf(3.0)
    rep = {}
    err, _ = ag.gradient_check(lambda: ag.mul(x, x), [("x", x)], h=1e-5, report=rep)
    assert err < 1e-8
    assert rep["worst"][2] == 6.0


def test_gradient_check_sigmoid_dot():
    r = np.random.default_rng(7)
    w, v = leaf(r.normal(size=8)), Tensor(r.normal(size=8))
    err, _ = ag.gradient_check(lambda: ag.sigmoid(ag.matmul(w, v)), [("w", w)], h=1e-5)
    assert err < 1e-6


def test_gradient_check_rejects_bad_input():
    x = leaf(1.0)
    with pytest.raises(ValueError):
        ag.gradient_check(lambda: ag.mul(x, x), [("x", x)], h=0.0)
    with pytest.raises(NumericError):
        ag.gradient_check(lambda: Tensor(np.nan), [("x", x)])


def test_gradient_check_flags_relu_kink():
    x = leaf([2e-6, 1.0])
    rep = {}
    err, _ = ag.gradient_check(lambda: ag.sum(ag.relu(x)), [("x", x)], h=1e-5, report=rep)
    assert rep["kinks"] == [("x", 0)]
    assert err > 1e-2


def test_composites_pass_gradient_check():
    r = np.random.default_rng(3)
    W = leaf(r.normal(size=(4, 3)))
    b = leaf(r.normal(size=3))
    x = Tensor(r.normal(size=(5, 4)))
    mask = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1], [1, 0, 1], [1, 1, 1]], bool)

    def f():
        h = ag.tanh(ag.matmul(x, W) + b)
        a = ag.softmax(h, axis=-1, mask=mask)
        c = ag.concat([a, ag.cos(h)], axis=-1)
        s = ag.segment_mean(c, np.array([0, 1, 0, 2, 1]), 3)
        lp = ag.log_softmax(ag.take(s, np.array([0, 2, 2])), axis=-1)
        return ag.sum(lp) + ag.mean(ag.softplus(h)) + ag.l2_norm_sq(W, b) + ag.sum(ag.log(ag.sigmoid(h)))

    err, _ = ag.gradient_check(f, [("W", W), ("b", b)], h=1e-5)
    assert err < 1e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    y = ag.softmax(Tensor(x)).data
    assert (y >= 0).all()
    assert abs(y.sum() - 1.0) <= 1e-12


def test_masked_softmax_rows():
    y = ag.softmax(Tensor(np.zeros((2, 3))), mask=np.array([[1, 0, 1], [0, 0, 0]], bool)).data
    assert y.tolist() == [[0.5, 0.0, 0.5], [0.0, 0.0, 0.0]]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_concat_splits_gradients(widths, seed):
    r = np.random.default_rng(seed)
    parts = [leaf(r.normal(size=(2, w))) for w in widths]
    G = r.normal(size=(2, sum(widths)))
    ag.backward(ag.sum(ag.mul(ag.concat(parts, axis=-1), G)))
    cols = np.cumsum([0] + widths)
    for p, lo, hi in zip(parts, cols[:-1], cols[1:]):
        assert np.array_equal(p.grad, G[:, lo:hi])


def test_take_accumulates_repeats():
    x = leaf(np.arange(6.0).reshape(3, 2))
    ag.backward(ag.sum(ag.take(x, np.array([0, 2, 0]))))
    assert x.grad.tolist() == [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]


def test_no_grad_records_nothing():
    x = leaf(2.0)
    with ag.no_grad():
        y = ag.mul(x, x)
    assert not y.requires_grad


def test_bit_identical_repeat():
    r = np.random.default_rng(0)
    A = r.normal(size=(30, 30))

    def run():
        x = leaf(A)
        loss = ag.sum(ag.log_softmax(ag.matmul(ag.tanh(x), x)))
        ag.backward(loss)
        return loss.item(), x.grad.tobytes()

    assert run() == run()
