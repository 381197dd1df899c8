import numpy as np
import pytest

from src.autograd.functional import concat, conv2d, conv_transpose2d, silu
from src.autograd.gradcheck import finite_diff_check
from src.autograd.tensor import Tensor, elementwise, no_grad, parameter, reduce, stop_gradient
from src.utils.errors import ContractError, DimensionError


def _conv_reference(x, w, b, stride, padding):
    batch, channels, height, width = x.shape
    out_channels, _, k, _ = w.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    out = np.zeros((batch, out_channels, out_h, out_w))
    for n in range(batch):
        for o in range(out_channels):
            for i in range(out_h):
                for j in range(out_w):
                    patch = padded[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def test_sum_gradient_is_exact():
    x = Tensor(np.arange(6).reshape(2, 3) / 8.0)

    error = finite_diff_check(lambda t: t.sum(), x, step=2.0 ** -10)

    assert error <= 1e-12


def test_full_reduction_is_zero_dimensional():
    x = parameter([3.0, 4.0])

    loss = x.square().sum()
    loss.backward()

    assert loss.shape == ()
    assert x.mean().shape == ()
    np.testing.assert_array_equal(x.grad, [6.0, 8.0])


def test_gradient_accumulates_over_reuse():
    x = parameter([1.0, -2.0, 3.0])

    (x * x + x).sum().backward()

    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_twice_accumulates_into_leaf():
    x = parameter([0.5, 1.5])

    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()

    np.testing.assert_allclose(x.grad, [6.0, 6.0])

    x.zero_grad()
    assert x.grad is None


def test_detach_blocks_gradient():
    x = parameter([2.0, 3.0])

    (x * x.detach()).sum().backward()

    np.testing.assert_allclose(x.grad, [2.0, 3.0])


def test_backward_needs_scalar_or_seed():
    x = parameter([1.0, 2.0])
    y = x * 2.0

    with pytest.raises(ContractError):
        y.backward()

    y.backward(np.array([1.0, 0.5]))
    np.testing.assert_allclose(x.grad, [2.0, 1.0])


def test_seed_shape_mismatch_rejected():
    x = parameter([1.0, 2.0])

    with pytest.raises(DimensionError):
        (x * 2.0).backward(np.ones(3))


def test_incompatible_broadcast_rejected():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones(3))

    with pytest.raises(DimensionError):
        a + b


def test_scalar_broadcast_gradient_sums():
    a = parameter(2.0)
    b = parameter(np.arange(4.0))

    (a * b).sum().backward()

    assert float(a.grad) == pytest.approx(6.0)
    np.testing.assert_allclose(b.grad, np.full(4, 2.0))


def test_unknown_elementwise_op_rejected():
    with pytest.raises(ContractError):
        elementwise('tanh', Tensor([1.0]))

    with pytest.raises(ContractError):
        elementwise('add', Tensor([1.0]))


def test_reduction_axes_and_errors():
    x = parameter(np.arange(24.0).reshape(2, 3, 4))

    reduce('mean', x, axes=(0, 2)).sum().backward()

    np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 1.0 / 8.0))

    with pytest.raises(DimensionError):
        x.sum(axes=3)
    with pytest.raises(DimensionError):
        x.sum(axes=(1, -2))


def test_reshape_mismatch_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.ones(6)).reshape(4, 2)


def test_no_grad_builds_no_graph():
    x = parameter([1.0, 2.0])

    with no_grad():
        y = (x * x).sum()

    assert not y.requires_grad
    assert y.is_leaf


def test_stop_gradient_blocks_flow():
    x = parameter([1.0, 2.0, 3.0])

    (x * stop_gradient(x)).sum().backward()

    np.testing.assert_allclose(x.grad, x.data)


def test_interior_nodes_released_after_backward():
    x = parameter([1.0, 2.0])
    y = x.exp()
    z = y.sum()

    z.backward()

    assert y._parents == ()
    assert z._backward is None


def test_retain_graph_allows_second_backward():
    x = parameter([1.0, 2.0])
    z = (x * x).sum()

    z.backward(retain_graph=True)
    z.backward()

    np.testing.assert_allclose(x.grad, 4 * x.data)


@pytest.mark.parametrize("op", ['exp', 'square', 'sigmoid', 'silu', 'abs'])
def test_unary_gradients(op):
    x = Tensor(np.array([0.3, -1.2, 2.1, -0.4]))

    error = finite_diff_check(lambda t: elementwise(op, t).sum(), x)

    assert error <= 1e-7


def test_division_and_sqrt_gradients():
    x = Tensor(np.array([0.7, 1.3, 2.2]))
    other = Tensor(np.array([1.5, -0.5, 2.0]))

    assert finite_diff_check(lambda t: (other / t).sum(), x) <= 1e-7
    assert finite_diff_check(lambda t: t.sqrt().sum(), x) <= 1e-7


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_matches_direct_loop(stride, padding):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)

    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)

    np.testing.assert_allclose(out.data, _conv_reference(x, w, b, stride, padding), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradients(stride):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out_size = 6 if stride == 1 else 3
    weights = Tensor(rng.standard_normal((2, 3, out_size, out_size)))

    def loss_input(t):
        return (conv2d(t, Tensor(w), Tensor(b), stride=stride, padding=1) * weights).sum()

    def loss_kernel(t):
        return (conv2d(Tensor(x), t, Tensor(b), stride=stride, padding=1) * weights).sum()

    def loss_bias(t):
        return (conv2d(Tensor(x), Tensor(w), t, stride=stride, padding=1) * weights).sum()

    assert finite_diff_check(loss_input, Tensor(x)) <= 1e-6
    assert finite_diff_check(loss_kernel, Tensor(w)) <= 1e-6
    assert finite_diff_check(loss_bias, Tensor(b)) <= 1e-6


def test_conv2d_contract_errors():
    x = Tensor(np.ones((1, 2, 5, 5)))

    with pytest.raises(DimensionError):
        conv2d(x, Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ContractError):
        conv2d(x, Tensor(np.ones((1, 2, 2, 2))))
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((2, 5, 5))), Tensor(np.ones((1, 2, 3, 3))))


def test_conv_transpose2d_doubles_resolution_and_gradients():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 3, 3))
    w = rng.standard_normal((3, 2, 2, 2))
    b = rng.standard_normal(2)
    weights = Tensor(rng.standard_normal((2, 2, 6, 6)))

    out = conv_transpose2d(Tensor(x), Tensor(w), Tensor(b))
    assert out.shape == (2, 2, 6, 6)

    expected = np.einsum('bc,co->bo', x[:, :, 1, 2], w[:, :, 1, 0]) + b
    np.testing.assert_allclose(out.data[:, :, 3, 4], expected, atol=1e-12)

    assert finite_diff_check(lambda t: (conv_transpose2d(t, Tensor(w), Tensor(b)) * weights).sum(), Tensor(x)) <= 1e-6
    assert finite_diff_check(lambda t: (conv_transpose2d(Tensor(x), t, Tensor(b)) * weights).sum(), Tensor(w)) <= 1e-6


def test_conv_gradients_match_with_and_without_input_grad():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 2, 4, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    up = rng.standard_normal((3, 2, 2, 2))

    def run(x_tensor):
        kernel = parameter(w)
        upsample = parameter(up)
        h = conv2d(x_tensor, kernel, padding=1, stride=2)
        conv_transpose2d(h, upsample).square().sum().backward()
        return kernel.grad, upsample.grad

    frozen = run(Tensor(x))
    both = run(parameter(x))

    np.testing.assert_allclose(frozen[0], both[0], atol=1e-12)
    np.testing.assert_allclose(frozen[1], both[1], atol=1e-12)


def test_concat_routes_gradients_back():
    a = parameter(np.ones((1, 2, 2, 2)))
    b = parameter(np.ones((1, 3, 2, 2)))
    scale = Tensor(np.arange(20.0).reshape(1, 5, 2, 2))

    (concat([a, b], axis=1) * scale).sum().backward()

    np.testing.assert_allclose(a.grad, scale.data[:, :2])
    np.testing.assert_allclose(b.grad, scale.data[:, 2:])


def test_concat_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        concat([Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones((1, 2, 3, 2)))], axis=1)


def test_silu_matches_closed_form():
    x = np.linspace(-3, 3, 7)

    out = silu(Tensor(x))

    np.testing.assert_allclose(out.data, x / (1 + np.exp(-x)), rtol=1e-12)


def test_finite_diff_rejects_bad_input():
    x = Tensor(np.ones(3))

    with pytest.raises(ContractError):
        finite_diff_check(lambda t: t.sum(), x, step=0.0)
    with pytest.raises(ContractError):
        finite_diff_check(lambda t: t * 2.0, x)


def test_finite_diff_subset_of_coordinates():
    x = Tensor(np.random.default_rng(3).standard_normal(50))

    error = finite_diff_check(lambda t: (t * t).sum(), x, max_coords=10, seed=4)

    assert error <= 1e-8
