from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autograd.tensor import Tensor, as_tensor, make_result
from src.utils.errors import ContractError, DimensionError


def conv2d(
    input: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0
) -> Tensor:
    """Cross-correlation of a [B, Cin, H, W] batch with a [Cout, Cin, k, k] kernel.

    Computed as one matrix product over unfolded patches (im2col); the input
    gradient folds the patch gradients back with strided accumulation.
    """

    x = as_tensor(input)
    kernel = as_tensor(kernel)

    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")

    batch, channels, height, width = x.shape
    out_channels, kernel_channels, kh, kw = kernel.shape

    if channels != kernel_channels:
        raise DimensionError(f"conv2d channel mismatch: input has {channels}, kernel expects {kernel_channels}")
    if kh != kw or kh % 2 == 0:
        raise ContractError(f"conv2d needs a square kernel of odd size, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ContractError(f"invalid stride {stride} or padding {padding}")

    k = kh
    padded_h, padded_w = height + 2 * padding, width + 2 * padding
    out_h = (padded_h - k) // stride + 1
    out_w = (padded_w - k) // stride + 1

    if out_h < 1 or out_w < 1:
        raise DimensionError(f"conv2d kernel {k} does not fit input {height}x{width} with padding {padding}")

    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_channels,):
            raise DimensionError(f"conv2d bias must have shape ({out_channels},), got {bias.shape}")
        parents.append(bias)

    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data

    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * k * k)
    weight = kernel.data.reshape(out_channels, -1)

    data = (cols @ weight.T).reshape(batch, out_h, out_w, out_channels).transpose(0, 3, 1, 2)
    if bias is not None:
        data = data + bias.data.reshape(1, out_channels, 1, 1)

    def backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, out_channels)

        grad_kernel = (g_mat.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        grad_input = None

        if x.requires_grad:
            grad_cols = (g_mat @ weight).reshape(batch, out_h, out_w, channels, k, k).transpose(0, 3, 4, 5, 1, 2)
            grad_padded = np.zeros((batch, channels, padded_h, padded_w))
            for i in range(k):
                for j in range(k):
                    grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_cols[:, :, i, j]
            grad_input = grad_padded[:, :, padding:padding + height, padding:padding + width]

        grads = [grad_input, grad_kernel]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(data, parents, backward, 'conv2d')


def conv_transpose2d(
    input: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2
) -> Tensor:
    """Transposed convolution with a [Cin, Cout, s, s] kernel and stride s.

    Kernel size equals stride, so output blocks never overlap and each input
    pixel scatters into one s x s block.
    """

    x = as_tensor(input)
    kernel = as_tensor(kernel)

    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(
            f"conv_transpose2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}"
        )

    batch, channels, height, width = x.shape
    kernel_channels, out_channels, kh, kw = kernel.shape

    if channels != kernel_channels:
        raise DimensionError(
            f"conv_transpose2d channel mismatch: input has {channels}, kernel expects {kernel_channels}"
        )
    if kh != stride or kw != stride:
        raise ContractError(f"conv_transpose2d supports kernel size == stride only, got {kh}x{kw} / {stride}")

    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out_channels,):
            raise DimensionError(f"conv_transpose2d bias must have shape ({out_channels},), got {bias.shape}")
        parents.append(bias)

    # One matrix product: [B*H*W, Cin] x [Cin, Cout*s*s], then interleave the s x s blocks.
    x_mat = x.data.transpose(0, 2, 3, 1).reshape(-1, channels)
    w_mat = kernel.data.reshape(channels, -1)
    blocks = (x_mat @ w_mat).reshape(batch, height, width, out_channels, stride, stride)
    data = blocks.transpose(0, 3, 1, 4, 2, 5).reshape(batch, out_channels, height * stride, width * stride)
    if bias is not None:
        data = data + bias.data.reshape(1, out_channels, 1, 1)

    def backward(g):
        g_mat = (
            g.reshape(batch, out_channels, height, stride, width, stride)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(-1, out_channels * stride * stride)
        )
        grads = [
            (g_mat @ w_mat.T).reshape(batch, height, width, channels).transpose(0, 3, 1, 2)
            if x.requires_grad else None,
            (x_mat.T @ g_mat).reshape(kernel.shape) if kernel.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(data, parents, backward, 'conv_transpose2d')


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:

    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")

    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} is out of range for {ndim}-d tensors")
    axis = axis % ndim

    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise DimensionError(f"concat shape mismatch: {tensors[0].shape} vs {t.shape} along axis {axis}")

    data = np.concatenate([t.data for t in tensors], axis=axis)
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, boundaries, axis=axis)

    return make_result(data, tensors, backward, 'concat')


def silu(x: Tensor) -> Tensor:

    return as_tensor(x).silu()
