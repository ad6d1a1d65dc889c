import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inception_capsule import autodiff as ad
from inception_capsule.autodiff import Graph, Tensor
from inception_capsule.errors import ConfigError, ContractError, DimensionError, NumericError
from oracles import conv2d_loops, matmul_loops, max_pool_scan


def grads_of(fn, *arrays):
    g = Graph()
    leaves = [g.leaf(a) for a in arrays]
    out = fn(*leaves)
    ad.backward(g, out)
    return [t.grad for t in leaves]


# matmul ---------------------------------------------------------------------

def test_matmul_identity_and_selector():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    assert ad.matmul(Tensor([[1.0, 0.0]]), Tensor([[5.0], [7.0]])).data.tolist() == [[5.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
def test_matmul_oracle_property(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, matmul_loops(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 2\)"):
        ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


def test_linear_is_x_times_w_transposed():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((5, 4)), rng.standard_normal((3, 4))
    np.testing.assert_allclose(ad.linear(Tensor(x), Tensor(w)).data, matmul_loops(x, w.T), atol=1e-12)


# conv2d ---------------------------------------------------------------------

def test_conv_identity_kernel():
    x = np.random.default_rng(2).standard_normal((1, 5, 6))
    out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_all_ones_valid_is_nine():
    out = ad.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding="valid")
    assert out.shape == (1, 1, 1)
    assert out.data.item() == 9.0


@pytest.mark.parametrize("kshape,stride,padding", [
    ((3, 2, 3, 3), 1, "same"),
    ((2, 2, 1, 3), 1, "same"),
    ((2, 2, 3, 1), 1, "same"),
    ((4, 2, 2, 2), 2, "valid"),
    ((2, 2, 3, 3), 2, "valid"),
])
def test_conv_matches_sliding_window_oracle(kshape, stride, padding):
    rng = np.random.default_rng(3)
    x, w = rng.standard_normal((kshape[1], 7, 6)), rng.standard_normal(kshape)
    got = ad.conv2d(Tensor(x), Tensor(w), stride, padding).data
    np.testing.assert_allclose(got, conv2d_loops(x, w, stride, padding), rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 16), st.integers(3, 16), st.sampled_from([1, 3]), st.sampled_from([1, 3]),
       st.integers(1, 2), st.integers(0, 2**31))
def test_conv_oracle_property(h, w, kh, kw, stride, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((2, h, w)), rng.standard_normal((2, 2, kh, kw))
    for padding in ("same", "valid"):
        np.testing.assert_allclose(ad.conv2d(Tensor(x), Tensor(k), stride, padding).data,
                                   conv2d_loops(x, k, stride, padding), rtol=0, atol=1e-12)


def test_conv_output_size_law():
    out = ad.conv2d(Tensor(np.zeros((1, 7, 9))), Tensor(np.zeros((1, 1, 2, 2))), stride=2, padding="valid")
    assert out.shape == (1, (7 - 2) // 2 + 1, (9 - 2) // 2 + 1)


def test_conv_batched_equals_per_sample():
    rng = np.random.default_rng(4)
    x, k = rng.standard_normal((3, 2, 5, 5)), rng.standard_normal((4, 2, 3, 3))
    batched = ad.conv2d(Tensor(x), Tensor(k)).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], ad.conv2d(Tensor(x[b]), Tensor(k)).data, atol=1e-13)


def test_conv_kernel_larger_than_input():
    with pytest.raises(DimensionError):
        ad.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))), padding="valid")
    with pytest.raises(ConfigError):
        ad.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)


# pooling --------------------------------------------------------------------

def test_max_pool_small_cases():
    assert ad.max_pool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2).data.tolist() == [[[4.0]]]
    const = ad.max_pool2d(Tensor(np.full((2, 4, 4), 3.5)), 2).data
    assert np.all(const == 3.5)


@pytest.mark.parametrize("window,stride,padding", [(2, 2, 0), (3, 1, 1), (3, 2, 0), (2, 1, 0)])
def test_max_pool_matches_window_scan(window, stride, padding):
    x = np.random.default_rng(5).standard_normal((3, 8, 8))
    got = ad.max_pool2d(Tensor(x), window, stride, padding).data
    assert np.array_equal(got, max_pool_scan(x, window, stride, padding))


def test_max_pool_gradient_goes_to_first_maximum():
    x = np.array([[[1.0, 1.0], [1.0, 1.0]]])
    (g,) = grads_of(lambda t: ad.sum(ad.max_pool2d(t, 2)), x)
    assert g.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


def test_max_pool_window_too_large():
    with pytest.raises(DimensionError):
        ad.max_pool2d(Tensor(np.zeros((1, 2, 2))), 3)


# pooling, concatenation and elementwise ops -------------------------------------

def test_avg_pool_global():
    assert ad.avg_pool_global(Tensor(np.ones((1, 4, 4)))).data.tolist() == [1.0]
    assert ad.avg_pool_global(Tensor([[[1.0, 3.0], [5.0, 7.0]]])).data.tolist() == [4.0]
    (g,) = grads_of(lambda t: ad.sum(ad.avg_pool_global(t)), np.zeros((2, 3, 5)))
    assert np.allclose(g, 1.0 / 15)


def test_concat_order_and_slice_inverse():
    a = np.random.default_rng(6).standard_normal((1, 3, 3))
    b = np.random.default_rng(7).standard_normal((2, 3, 3))
    single = ad.concat_channels([Tensor(a)])
    assert np.array_equal(single.data, a)
    both = ad.concat_channels([Tensor(a), Tensor(b)])
    assert both.shape == (3, 3, 3)
    assert np.array_equal(ad.slice_channels(both, 0, 1).data, a)
    assert np.array_equal(ad.slice_channels(both, 1, 3).data, b)
    with pytest.raises(DimensionError):
        ad.concat_channels([Tensor(a), Tensor(np.zeros((1, 2, 3)))])


def test_concat_gradient_splits_exactly():
    rng = np.random.default_rng(8)
    a, b = rng.standard_normal((2, 2, 2)), rng.standard_normal((1, 2, 2))
    w = rng.standard_normal((3, 2, 2))
    ga, gb = grads_of(lambda x, y: ad.sum(ad.mul(ad.concat_channels([x, y]), Tensor(w))), a, b)
    assert np.array_equal(ga, w[:2]) and np.array_equal(gb, w[2:])
    err = ad.finite_difference_check(lambda x, y: ad.sum(ad.mul(ad.concat_channels([x, y]), Tensor(w))), [a, b])
    assert err < 1e-4


def test_elementwise_basics():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    x = np.array([1.5, -2.0])
    assert np.array_equal(ad.add(Tensor(x), Tensor(np.zeros(2))).data, x)
    assert ad.scale(Tensor([2.0, 4.0]), 0.5).data.tolist() == [1.0, 2.0]
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_softmax_rows_sum_to_one_and_shift_invariant():
    x = np.random.default_rng(9).standard_normal((4, 6)) * 10
    s = ad.softmax(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax(Tensor(x + 123.0)).data, s, atol=1e-12)


# dropout ------------------------------------------------------------------------

def test_dropout_identity_paths():
    x = Tensor(np.arange(6.0))
    assert ad.dropout(x, 0.8, training=False, rng=None) is x
    assert ad.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x
    with pytest.raises(ConfigError):
        ad.dropout(x, 1.0, training=True, rng=np.random.default_rng(0))


def test_dropout_survivor_fraction_and_scaling():
    out = ad.dropout(Tensor(np.ones(100_000)), 0.8, True, np.random.default_rng(0)).data
    alive = out != 0
    assert 0.195 <= alive.mean() <= 0.205
    np.testing.assert_allclose(out[alive], 5.0)


# backward and the finite-difference checker ----------------------------------

def test_backward_simple_rules():
    x = np.array([1.0, -2.0, 3.0])
    (g,) = grads_of(lambda t: ad.sum(t), x)
    assert g.tolist() == [1.0, 1.0, 1.0]
    (g,) = grads_of(lambda t: ad.dot(t, t), x)
    assert np.array_equal(g, 2 * x)


def test_backward_leaves_unreachable_untouched():
    g = Graph()
    a, b = g.leaf(np.ones(2)), g.leaf(np.ones(2))
    ad.backward(g, ad.sum(a))
    assert b.grad is None


def test_backward_rejects_non_scalar_and_foreign_loss():
    g = Graph()
    a = g.leaf(np.ones(3))
    with pytest.raises(ContractError):
        ad.backward(g, ad.scale(a, 2.0))
    with pytest.raises(ContractError):
        ad.backward(Graph(), ad.sum(a))


def test_mixing_graphs_is_rejected():
    with pytest.raises(ContractError):
        ad.add(Graph().leaf(np.ones(2)), Graph().leaf(np.ones(2)))


def test_tape_is_topologically_ordered():
    g = Graph()
    a = g.leaf(np.ones((2, 2)))
    ad.sum(ad.relu(ad.matmul(a, ad.swapaxes(a, 0, 1))))
    for k, node in enumerate(g.nodes):
        assert all(i is None or i < k for i in node.inputs)


def test_backward_is_bit_deterministic():
    rng = np.random.default_rng(10)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5))

    def fn(x, y):
        return ad.sum(ad.softmax(ad.matmul(x, y)))

    first, second = grads_of(fn, a, b), grads_of(fn, a, b)
    for p, q in zip(first, second):
        assert p.tobytes() == q.tobytes()


def test_tensor_data_is_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_checker_exact_on_linear_map():
    w = np.random.default_rng(11).standard_normal((3, 4))
    err = ad.finite_difference_check(lambda x: ad.sum(ad.linear(x, Tensor(w))),
                                     [np.random.default_rng(12).standard_normal((2, 4))])
    assert err < 1e-10


def test_checker_catches_a_wrong_gradient():
    def bad_square(x):
        return ad.emit("bad", (x,), x.data ** 2, lambda g: (g * x.data,))  # missing factor 2

    err = ad.finite_difference_check(lambda x: ad.sum(bad_square(x)), [np.array([1.0, 2.0])])
    assert err > 0.4


def test_checker_reports_non_finite_coordinate():
    def sqrt_op(x):
        r = np.sqrt(x.data)
        with np.errstate(divide="ignore"):
            slope = 0.5 / r
        return ad.emit("sqrt", (x,), r, lambda g: (g * slope,))

    with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="coordinate 1"):
        ad.finite_difference_check(lambda x: ad.sum(sqrt_op(x)), [np.array([1.0, 0.0])])


def test_checker_rejects_bad_eps():
    with pytest.raises(ConfigError):
        ad.finite_difference_check(lambda x: ad.sum(x), [np.ones(2)], eps=0.0)


def test_composite_against_finite_differences():
    rng = np.random.default_rng(13)
    k = rng.standard_normal((2, 1, 3, 3))
    w = Tensor(rng.standard_normal((2, 4)))

    def fn(x):
        h = ad.relu(ad.conv2d(x, Tensor(k)))
        return ad.sum(ad.mul(ad.softmax(ad.reshape(ad.max_pool2d(h, 2), (2, 4)), axis=-1), w))

    assert ad.finite_difference_check(fn, [rng.standard_normal((1, 4, 4))]) < 1e-4
