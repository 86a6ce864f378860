"""Differentiable operators over (N, C, H, W) float32 tensors.

Every operator is a pure function: inputs in, fresh output Tensor out, with
an optional ``tape`` to record the backward closure on. No operator mutates
its inputs (batchnorm's running-stat updates in train mode are the one
documented exception).

Convolutions run as im2col + GEMM. Internally they convert to NHWC so the
column gather copies contiguous channel runs instead of strided scalars,
which is several times faster on CPU; the public layout stays NCHW. Padding
is always "same" for stride 1: pad = (kernel_size - 1) * dilation // 2.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tape, Tensor

__all__ = [
    "conv2d",
    "conv2d_transpose",
    "maxpool2d",
    "upsample2x",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "concat",
    "subtract",
    "mse_loss",
]

_f32 = np.float32


def _require_nchw(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{op} expects a rank-4 (N, C, H, W) tensor, got rank {x.data.ndim}")


def _to_nhwc(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(0, 2, 3, 1))


def _to_nchw(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(0, 3, 1, 2))


def _window_cols(xn: np.ndarray, k: int, dilation: int) -> np.ndarray:
    """im2col on an NHWC array -> (N*H*W, k*k*C), taps-major, channels contiguous."""
    n, h, w, c = xn.shape
    span = (k - 1) * dilation + 1
    pad = (span - 1) // 2
    xp = np.pad(xn, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (span, span), axis=(1, 2))
    if dilation > 1:
        win = win[..., ::dilation, ::dilation]
    # win: (N, H, W, C, k, k) -> rows ordered (ki, kj, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, k * k * c)


def _check_conv_inputs(x: Tensor, weights: Tensor, bias: Tensor, dilation: int, op: str) -> tuple:
    _require_nchw(x, op)
    if weights.data.ndim != 4:
        raise ShapeError(f"{op} weights must be rank 4, got rank {weights.data.ndim}")
    if weights.data.shape[2] != weights.data.shape[3]:
        raise ShapeError(f"{op} kernels must be square, got {weights.data.shape[2:]}")
    if weights.data.shape[2] % 2 != 1:
        raise ShapeError(f"{op} kernel size must be odd, got {weights.data.shape[2]}")
    if dilation < 1:
        raise ShapeError(f"{op} dilation must be >= 1, got {dilation}")
    k = weights.data.shape[2]
    if bias.data.ndim != 1:
        raise ShapeError(f"{op} bias must be rank 1, got rank {bias.data.ndim}")
    return x.data.shape, k


def _conv_nhwc(xn: np.ndarray, w_flat: np.ndarray, bias: np.ndarray | None,
               k: int, dilation: int) -> np.ndarray:
    """Correlate an NHWC array with flattened (k*k*Cin, Cout) weights."""
    n, h, w, _ = xn.shape
    out = _window_cols(xn, k, dilation) @ w_flat
    if bias is not None:
        out += bias
    return out.reshape(n, h, w, w_flat.shape[1])


def conv2d(x: Tensor, weights: Tensor, bias: Tensor, dilation: int = 1,
           tape: Tape | None = None) -> Tensor:
    """'Same' stride-1 2D correlation. weights: (Cout, Cin, k, k); bias: (Cout,)."""
    (n, cin, h, wd), k = _check_conv_inputs(x, weights, bias, dilation, "conv2d")
    cout, w_cin = weights.data.shape[0], weights.data.shape[1]
    if w_cin != cin:
        raise ShapeError(f"conv2d weights expect {w_cin} input channels, tensor has {cin}")
    if bias.data.shape[0] != cout:
        raise ShapeError(f"conv2d bias length {bias.data.shape[0]} != {cout} filters")

    xn = _to_nhwc(x.data)
    w_flat = weights.data.transpose(2, 3, 1, 0).reshape(k * k * cin, cout)
    yn = _conv_nhwc(xn, w_flat, bias.data, k, dilation)
    out = Tensor(_to_nchw(yn))

    if tape is not None:
        need_x = tape.needs_grad(x)
        need_w = tape.needs_grad(weights)
        need_b = tape.needs_grad(bias)

        def backward_fn(g: np.ndarray) -> tuple:
            gn = _to_nhwc(g)
            g2 = gn.reshape(n * h * wd, cout)
            gw = gb = gx = None
            if need_w:
                cols = _window_cols(xn, k, dilation)
                gw = (cols.T @ g2).reshape(k, k, cin, cout).transpose(3, 2, 0, 1).copy()
            if need_b:
                gb = g2.sum(axis=0)
            if need_x:
                # Input grad of a same-padded stride-1 correlation is another
                # such correlation with spatially flipped, channel-swapped kernels.
                wf = np.flip(weights.data, (2, 3)).transpose(2, 3, 0, 1).reshape(k * k * cout, cin)
                gx = _to_nchw(_conv_nhwc(gn, wf, None, k, dilation))
            return gx, gw, gb

        tape.record("conv2d", (x, weights, bias), out, backward_fn)
    return out


def conv2d_transpose(x: Tensor, weights: Tensor, bias: Tensor, tape: Tape | None = None) -> Tensor:
    """'Same' stride-1 transposed convolution, the exact adjoint of conv2d.

    weights: (Cin, Cout, k, k) with Cin matching the input tensor, so a
    decoder can reuse the layout of the encoder conv it mirrors.
    """
    (n, cin, h, wd), k = _check_conv_inputs(x, weights, bias, 1, "conv2d_transpose")
    w_cin, cout = weights.data.shape[0], weights.data.shape[1]
    if w_cin != cin:
        raise ShapeError(f"conv2d_transpose weights expect {w_cin} input channels, tensor has {cin}")
    if bias.data.shape[0] != cout:
        raise ShapeError(f"conv2d_transpose bias length {bias.data.shape[0]} != {cout} filters")

    xn = _to_nhwc(x.data)
    # Equivalent forward correlation kernel: flip taps, swap channel roles.
    w_flat = np.flip(weights.data, (2, 3)).transpose(2, 3, 0, 1).reshape(k * k * cin, cout)
    yn = _conv_nhwc(xn, w_flat, bias.data, k, 1)
    out = Tensor(_to_nchw(yn))

    if tape is not None:
        need_x = tape.needs_grad(x)
        need_w = tape.needs_grad(weights)
        need_b = tape.needs_grad(bias)

        def backward_fn(g: np.ndarray) -> tuple:
            gn = _to_nhwc(g)
            g2 = gn.reshape(n * h * wd, cout)
            gw = gb = gx = None
            if need_w:
                cols = _window_cols(xn, k, 1)
                # Grad w.r.t. the equivalent correlation kernel, mapped back
                # through the same flip/transpose that built w_flat.
                gwf = (cols.T @ g2).reshape(k, k, cin, cout)
                gw = np.flip(gwf.transpose(2, 3, 0, 1), (2, 3)).copy()
            if need_b:
                gb = g2.sum(axis=0)
            if need_x:
                wf = weights.data.transpose(2, 3, 1, 0).reshape(k * k * cout, cin)
                gx = _to_nchw(_conv_nhwc(gn, wf, None, k, 1))
            return gx, gw, gb

        tape.record("conv2d_transpose", (x, weights, bias), out, backward_fn)
    return out


def maxpool2d(x: Tensor, tape: Tape | None = None) -> Tensor:
    """2x2 max pooling with stride 2. Requires even H and W."""
    _require_nchw(x, "maxpool2d")
    n, c, h, w = x.data.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ShapeError(f"maxpool2d needs even spatial dims, got ({h}, {w})")
    h2, w2 = h // 2, w // 2
    # Window layout (a00, a01, a10, a11); argmax takes the first maximum,
    # i.e. row-major order within the window.
    windows = (
        x.data.reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0])

    if tape is not None:

        def backward_fn(g: np.ndarray) -> tuple:
            gw = np.zeros((n, c, h2, w2, 4), dtype=_f32)
            np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
            gx = gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
            return (gx,)

        tape.record("maxpool2d", (x,), out, backward_fn)
    return out


def upsample2x(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Nearest-neighbor 2x upsampling: every pixel becomes a 2x2 block."""
    _require_nchw(x, "upsample2x")
    n, c, h, w = x.data.shape
    out = Tensor(x.data.repeat(2, axis=2).repeat(2, axis=3))

    if tape is not None:

        def backward_fn(g: np.ndarray) -> tuple:
            return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

        tape.record("upsample2x", (x,), out, backward_fn)
    return out


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
                running_var: Tensor, mode: str, momentum: float = 0.99,
                eps: float = 1e-3, tape: Tape | None = None) -> Tensor:
    """Per-channel batch normalization over the (N, H, W) axes.

    Train mode normalizes by batch statistics and updates the running
    buffers in place: running = momentum * running + (1 - momentum) * batch
    (biased batch variance). Eval mode uses the running buffers only.
    """
    _require_nchw(x, "batchnorm2d")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm2d mode must be 'train' or 'eval', got {mode!r}")
    n, c, h, w = x.data.shape
    for name, t in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.data.shape != (c,):
            raise ShapeError(f"batchnorm2d {name} must have shape ({c},), got {t.data.shape}")
    m = n * h * w
    if mode == "train" and m < 2:
        raise ShapeError("batchnorm2d train mode needs at least 2 values per channel")

    ch = (1, c, 1, 1)
    if mode == "train":
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data = (momentum * running_mean.data + (1.0 - momentum) * mu).astype(_f32)
        running_var.data = (momentum * running_var.data + (1.0 - momentum) * var).astype(_f32)
    else:
        mu = running_mean.data
        var = running_var.data
    inv_std = 1.0 / np.sqrt(var + _f32(eps))
    xhat = (x.data - mu.reshape(ch)) * inv_std.reshape(ch)
    out = Tensor(gamma.data.reshape(ch) * xhat + beta.data.reshape(ch))

    if tape is not None:
        need_x = tape.needs_grad(x)
        train = mode == "train"

        def backward_fn(g: np.ndarray) -> tuple:
            gg = (g * xhat).sum(axis=(0, 2, 3))
            gb = g.sum(axis=(0, 2, 3))
            gx = None
            if need_x:
                gxhat = g * gamma.data.reshape(ch)
                if train:
                    # Batch statistics depend on x, so their grads fold in.
                    s1 = gxhat.sum(axis=(0, 2, 3)).reshape(ch)
                    s2 = (gxhat * xhat).sum(axis=(0, 2, 3)).reshape(ch)
                    gx = (inv_std.reshape(ch) / m) * (m * gxhat - s1 - xhat * s2)
                    gx = gx.astype(_f32)
                else:
                    gx = gxhat * inv_std.reshape(ch)
            return gx, gg, gb, None, None

        tape.record("batchnorm2d", (x, gamma, beta, running_mean, running_var), out, backward_fn)
    return out


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if tape is not None:

        def backward_fn(g: np.ndarray) -> tuple:
            return (g * (x.data > 0.0),)  # zero subgradient at exactly 0

        tape.record("relu", (x,), out, backward_fn)
    return out


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Numerically stable logistic: never exponentiates a positive argument."""
    d = x.data
    pos = d >= 0
    s = np.empty_like(d)
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    out = Tensor(s)

    if tape is not None:

        def backward_fn(g: np.ndarray) -> tuple:
            return (g * s * (1.0 - s),)

        tape.record("sigmoid", (x,), out, backward_fn)
    return out


def concat(tensors: list[Tensor], tape: Tape | None = None) -> Tensor:
    """Concatenate along the channel axis. All other dims must match."""
    if len(tensors) < 2:
        raise ShapeError("concat needs at least two tensors")
    first = tensors[0].data.shape
    for t in tensors:
        _require_nchw(t, "concat")
        s = t.data.shape
        if (s[0], s[2], s[3]) != (first[0], first[2], first[3]):
            raise ShapeError(f"concat operands disagree outside the channel axis: {first} vs {s}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))

    if tape is not None:
        sizes = [t.data.shape[1] for t in tensors]
        bounds = np.cumsum(sizes)[:-1]

        def backward_fn(g: np.ndarray) -> tuple:
            return tuple(np.ascontiguousarray(piece) for piece in np.split(g, bounds, axis=1))

        tape.record("concat", tuple(tensors), out, backward_fn)
    return out


def subtract(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise a - b (the residual step of noise-predicting models)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"subtract operands must match: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data)

    if tape is not None:

        def backward_fn(g: np.ndarray) -> tuple:
            return g, -g

        tape.record("subtract", (a, b), out, backward_fn)
    return out


def mse_loss(pred: Tensor, target: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean squared error, reduced over all elements (float64 accumulator)."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse_loss shapes must match: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    value = np.mean(np.square(diff, dtype=np.float64))
    out = Tensor(np.asarray(value, dtype=_f32))

    if tape is not None:
        scale = _f32(2.0 / diff.size)
        need_t = tape.needs_grad(target)

        def backward_fn(g: np.ndarray) -> tuple:
            gp = (g * scale) * diff
            return gp, (-gp if need_t else None)

        tape.record("mse_loss", (pred, target), out, backward_fn)
    return out
