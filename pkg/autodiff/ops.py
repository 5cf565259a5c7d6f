"""
Differentiable operators: exactly the set the forecaster's network uses.

    conv2d      2-D cross-correlation with padding / stride (+ bias)
    maxpool2d   window maximum; gradient goes to the first maximal cell
    affine      x @ W + b over the trailing axis
    relu        max(0, x); gradient 0 at x == 0
    concat      join along one axis
    reshape     same values, new shape
    propagate   Â @ X over the station axis (Â is a constant)
    embedding   row lookup in a table
    sum         scalar sum of all entries
    l1_loss     mean |pred - target|

=== A NOTE ON CONVOLUTION ORIENTATION ===

Textbook convolution flips the kernel; deep-learning "convolution" does not.
We compute cross-correlation:

    out[o, y, x] = b[o] + sum_{c,i,j} in[c, y*s + i, x*s + j] * K[o, c, i, j]

The learned kernels simply come out flipped relative to the textbook form.

conv2d and maxpool2d take [C,H,W] or a batch [N,C,H,W]; the batch form lets
all stations of a mini-batch share one call.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from autodiff.tensor import Tensor, as_tensor, current_tape
from utils.errors import ShapeError


def _emit(op, inputs, out_data, backward_fn):
    """Creates the output Tensor and records it if a tape is listening."""
    out = Tensor(out_data)
    tape = current_tape()
    if tape is not None and any(t.tracks_grad for t in inputs):
        out._on_tape = True
        tape.record(op, inputs, out, backward_fn)
    return out


def _as_batch(x, op):
    """[C,H,W] -> ([1,C,H,W], True); [N,C,H,W] -> (same, False)."""
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{op} expects [C,H,W] or [N,C,H,W], got shape {x.shape}")


# ===========================================================================
# CONVOLUTION & POOLING
# ===========================================================================

def conv2d(input, kernels, bias=None, padding=0, stride=1):
    """
    Cross-correlates `input` with `kernels` [Cout,Cin,Kh,Kw] and adds `bias`.

    Output spatial size is floor((H + 2*padding - Kh) / stride) + 1 (same for W).
    """
    input, kernels = as_tensor(input), as_tensor(kernels)
    x, squeeze = _as_batch(input.data, "conv2d")
    k = kernels.data
    if k.ndim != 4:
        raise ShapeError(f"conv2d kernels must be [Cout,Cin,Kh,Kw], got {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input shape {input.shape} vs kernels shape {k.shape}"
        )
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, c, h, w = x.shape
    cout, _, kh, kw = k.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    parts = [input, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match Cout={cout}")
        parts.append(bias)

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: [N, C, H', W', Kh, Kw]
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, k, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward_fn(grad):
        g = grad[None] if squeeze else grad
        grad_k = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(g, k[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                grad_xp[:, :,
                        i:i + stride * (h_out - 1) + 1:stride,
                        j:j + stride * (w_out - 1) + 1:stride] += contrib
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w]
        if squeeze:
            grad_x = grad_x[0]
        grads = [grad_x, grad_k]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _emit("conv2d", parts, out[0] if squeeze else out, backward_fn)


def maxpool2d(input, window, stride=None):
    """
    Window maximum with floor semantics: H'' = floor((H - window) / stride) + 1.

    Ties send the gradient to the first maximal cell in row-major order.
    """
    input = as_tensor(input)
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ShapeError(f"maxpool2d needs window >= 1 and stride >= 1, got {window}, {stride}")
    x, squeeze = _as_batch(input.data, "maxpool2d")
    n, c, h, w = x.shape
    if h < window or w < window:
        raise ShapeError(f"maxpool2d window {window} larger than input {h}x{w}")

    windows = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, h_out, w_out, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    rows = np.arange(h_out)[None, None, :, None] * stride + arg // window
    cols = np.arange(w_out)[None, None, None, :] * stride + arg % window
    nn = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]

    def backward_fn(grad):
        g = grad[None] if squeeze else grad
        grad_x = np.zeros_like(x)
        np.add.at(grad_x, (nn, cc, rows, cols), g)
        return [grad_x[0] if squeeze else grad_x]

    return _emit("maxpool2d", [input], out[0] if squeeze else out, backward_fn)


# ===========================================================================
# DENSE LAYERS & ELEMENTWISE
# ===========================================================================

def affine(input, weight, bias=None):
    """input [..., Din] @ weight [Din, Dout] (+ bias [Dout])."""
    input, weight = as_tensor(input), as_tensor(weight)
    if weight.ndim != 2 or input.ndim < 1 or input.shape[-1] != weight.shape[0]:
        raise ShapeError(f"affine: input shape {input.shape} does not fit weight shape {weight.shape}")
    parts = [input, weight]
    out = input.data @ weight.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"affine: bias shape {bias.shape} does not fit weight shape {weight.shape}")
        parts.append(bias)
        out = out + bias.data

    def backward_fn(grad):
        flat_x = input.data.reshape(-1, weight.shape[0])
        flat_g = grad.reshape(-1, weight.shape[1])
        grads = [grad @ weight.data.T, flat_x.T @ flat_g]
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    return _emit("affine", parts, out, backward_fn)


def relu(input):
    input = as_tensor(input)
    mask = input.data > 0
    return _emit("relu", [input], np.where(mask, input.data, 0.0), lambda grad: [grad * mask])


def concat(parts, axis=-1):
    """Joins tensors along `axis`; all other dimensions must agree."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one part")
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(
            a != b for d, (a, b) in enumerate(zip(p.shape, parts[0].shape)) if d != axis
        ):
            raise ShapeError(
                f"concat on axis {axis}: shapes {[q.shape for q in parts]} disagree off-axis"
            )
    out = np.concatenate([p.data for p in parts], axis=axis)
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward_fn(grad):
        return np.split(grad, splits, axis=axis)

    return _emit("concat", parts, out, backward_fn)


def reshape(input, shape):
    input = as_tensor(input)
    shape = tuple(shape)
    try:
        out = input.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {input.shape} as {shape}") from e
    return _emit("reshape", [input], out, lambda grad: [grad.reshape(input.shape)])


def propagate(adjacency, input):
    """
    Message passing step Â @ X.

    adjacency is a constant [S,S] array; input is [..., S, D].
    """
    adj = adjacency.data if isinstance(adjacency, Tensor) else np.asarray(adjacency, dtype=np.float64)
    input = as_tensor(input)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or input.ndim < 2 or input.shape[-2] != adj.shape[1]:
        raise ShapeError(
            f"propagate: adjacency shape {adj.shape} does not fit input shape {input.shape}"
        )
    return _emit("propagate", [input], adj @ input.data, lambda grad: [adj.T @ grad])


def embedding(table, indices):
    """Gathers rows of `table` [R,E]; output shape is indices.shape + (E,)."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if not np.issubdtype(idx.dtype, np.integer) or (idx.size and (idx.min() < 0 or idx.max() >= table.shape[0])):
        raise ShapeError(f"embedding indices must be integers in [0, {table.shape[0]})")

    def backward_fn(grad):
        grad_t = np.zeros_like(table.data)
        np.add.at(grad_t, idx, grad)
        return [grad_t]

    return _emit("embedding", [table], table.data[idx], backward_fn)


def sum(input):
    input = as_tensor(input)
    return _emit("sum", [input], np.array(input.data.sum()), lambda grad: [np.full(input.shape, float(grad))])


def l1_loss(pred, target):
    """Mean absolute difference; gradient sign(pred - target) / N."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: pred shape {pred.shape} vs target shape {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward_fn(grad):
        g = np.sign(diff) * (float(grad) / n)
        return [g, -g]

    return _emit("l1_loss", [pred, target], np.array(np.abs(diff).mean()), backward_fn)
