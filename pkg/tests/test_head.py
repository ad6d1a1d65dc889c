import math

import numpy as np
import pytest

from inception_capsule import autodiff as ad
from inception_capsule.autodiff import Graph, Tensor
from inception_capsule.errors import ContractError, DimensionError, NumericError
from inception_capsule.head import cross_entropy, head_forward, softmax_probs
from oracles import matmul_loops


def test_head_zero_and_selector_weights():
    x = np.random.default_rng(0).standard_normal((3, 4))
    assert np.all(head_forward(Tensor(x), Tensor(np.zeros((2, 12)))).data == 0)
    sel = np.zeros((2, 12))
    sel[0, 5], sel[1, 11] = 1.0, 1.0
    assert head_forward(Tensor(x), Tensor(sel)).data.tolist() == [x[1, 1], x[2, 3]]


def test_head_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((3, 16)), rng.standard_normal((3, 48))
    got = head_forward(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(got, matmul_loops(w, x.reshape(48, 1))[:, 0], atol=1e-12)
    with pytest.raises(DimensionError):
        head_forward(Tensor(x), Tensor(np.zeros((3, 47))))


def test_softmax_closed_forms():
    np.testing.assert_allclose(softmax_probs(Tensor(np.full(5, 2.3))).data, 0.2, atol=1e-15)
    np.testing.assert_allclose(softmax_probs(Tensor([0.0, math.log(2), 0.0])).data, [0.25, 0.5, 0.25], atol=1e-15)
    neg = softmax_probs(Tensor([0.0, math.log(2), 0.0]), sign=-1).data
    np.testing.assert_allclose(neg, [0.4, 0.2, 0.4], atol=1e-15)


def test_softmax_argmax_sum_and_shift():
    f = np.random.default_rng(2).standard_normal((20, 6)) * 5
    p = softmax_probs(Tensor(f)).data
    assert np.array_equal(p.argmax(axis=1), f.argmax(axis=1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax_probs(Tensor(f - 40.0)).data, p, atol=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax_probs(Tensor([0.0, np.inf]))


def test_cross_entropy_values():
    assert cross_entropy(Tensor([0.0, 1.0, 0.0]), 1).value == 0.0
    assert cross_entropy(Tensor(np.full(4, 0.25)), 2).value == pytest.approx(math.log(4), abs=1e-15)
    assert cross_entropy(Tensor([1.0, 0.0]), 1).value == pytest.approx(-math.log(1e-12))
    lv = cross_entropy(Tensor([[0.5, 0.5], [0.2, 0.8]]), [0, 1])
    np.testing.assert_allclose(lv.per_sample, [math.log(2), -math.log(0.8)])
    assert lv.value == pytest.approx(lv.per_sample.mean())
    with pytest.raises(ContractError):
        cross_entropy(Tensor([0.5, 0.5]), 2)


def test_logit_gradient_is_p_minus_onehot():
    rng = np.random.default_rng(3)
    for label in range(4):
        f = rng.standard_normal(4)
        g = Graph()
        leaf = g.leaf(f)
        probs = softmax_probs(leaf)
        ad.backward(g, cross_entropy(probs, label).loss)
        onehot = np.eye(4)[label]
        np.testing.assert_allclose(leaf.grad, probs.data - onehot, rtol=0, atol=1e-10)
        err = ad.finite_difference_check(lambda t: cross_entropy(softmax_probs(t), label).loss, [f])
        assert err < 1e-4
