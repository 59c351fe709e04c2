"""Structured differentiable ops: convolutions, normalization, dropout, losses.

These build on :mod:`wiskel.nn.tensor` primitives but implement their own
vector-Jacobian closures where a fused numpy kernel is much cheaper than a
composition of elementwise ops.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateBatchError, DimensionError
from .tensor import as_tensor, _make, mean_, sub

__all__ = [
    "conv2d",
    "conv_transpose1d",
    "batch_norm",
    "layer_norm",
    "dropout",
    "mse_loss",
    "softmax_cross_entropy",
]


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v), int(v))


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2D cross-correlation. ``x``: (B, C_in, H, W); ``weight``: (C_out, C_in, kh, kw).

    Output spatial size per axis is ``(size + 2*pad - kernel) // stride + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects input (B, C, H, W), got shape {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(
            f"conv2d expects weight (C_out, C_in, kh, kw), got shape {weight.shape}"
        )
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    batch, cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    hout = (h + 2 * ph - kh) // sh + 1
    wout = (w + 2 * pw - kw) // sw + 1
    if hout <= 0 or wout <= 0:
        raise DimensionError(
            f"conv2d output would be empty for input {x.shape} with "
            f"kernel ({kh}, {kw}), stride ({sh}, {sw}), padding ({ph}, {pw})"
        )

    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # im2col with the contraction axis leading: one large GEMM per conv, and
    # every copy below moves contiguous (hout, wout) blocks.
    cols = np.empty((cin, kh, kw, batch, hout, wout), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            tap = padded[:, :, i : i + sh * hout : sh, j : j + sw * wout : sw]
            cols[:, i, j] = tap.transpose(1, 0, 2, 3)
    cols_flat = cols.reshape(cin * kh * kw, batch * hout * wout)
    w_flat = weight.data.reshape(cout, cin * kh * kw)
    out_data = (w_flat @ cols_flat).reshape(cout, batch, hout, wout)
    out_data = np.ascontiguousarray(out_data.transpose(1, 0, 2, 3))
    if bias is not None:
        bias = as_tensor(bias)
        out_data += bias.data.reshape(1, cout, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g_flat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, -1)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g_flat.sum(axis=1))
        if weight.requires_grad:
            weight.accumulate_grad((g_flat @ cols_flat.T).reshape(weight.data.shape))
        if x.requires_grad:
            gcols = (w_flat.T @ g_flat).reshape(cin, kh, kw, batch, hout, wout)
            gpad = np.zeros_like(padded)
            target = gpad.transpose(1, 0, 2, 3)
            for i in range(kh):
                for j in range(kw):
                    target[:, :, i : i + sh * hout : sh, j : j + sw * wout : sw] += gcols[
                        :, i, j
                    ]
            if ph or pw:
                gpad = gpad[:, :, ph : ph + h, pw : pw + w]
            x.accumulate_grad(gpad)

    return _make(out_data, parents, vjp)


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """1D transposed convolution. ``x``: (B, C_in, L); ``weight``: (C_in, C_out, k).

    Output length is ``(L - 1) * stride - 2 * padding + kernel + output_padding``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3:
        raise DimensionError(
            f"conv_transpose1d expects input (B, C, L), got shape {x.shape}"
        )
    if weight.ndim != 3:
        raise DimensionError(
            f"conv_transpose1d expects weight (C_in, C_out, k), got shape {weight.shape}"
        )
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"conv_transpose1d channel mismatch: input has {x.shape[1]}, "
            f"weight expects {weight.shape[0]}"
        )
    s, p, op = int(stride), int(padding), int(output_padding)
    if op >= s:
        raise DimensionError(
            f"conv_transpose1d output_padding ({op}) must be smaller than stride ({s})"
        )
    batch, cin, lin = x.shape
    _, cout, k = weight.shape
    lout = (lin - 1) * s - 2 * p + k + op
    if lout <= 0:
        raise DimensionError(
            f"conv_transpose1d output would be empty for input {x.shape} with "
            f"kernel {k}, stride {s}, padding {p}, output_padding {op}"
        )

    span = (lin - 1) * s + 1
    full = np.zeros((batch, cout, (lin - 1) * s + k + op), dtype=np.float64)
    for kk in range(k):
        # (B, C_in, L) x (C_in, C_out) -> (B, C_out, L), scattered at stride s.
        contrib = np.einsum("bil,io->bol", x.data, weight.data[:, :, kk], optimize=True)
        full[:, :, kk : kk + span : s] += contrib
    out_data = full[:, :, p : p + lout]
    if bias is not None:
        bias = as_tensor(bias)
        out_data = out_data + bias.data.reshape(1, cout, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2)))
        gfull = np.zeros((batch, cout, (lin - 1) * s + k + op), dtype=np.float64)
        gfull[:, :, p : p + lout] = g
        for kk in range(k):
            gslice = gfull[:, :, kk : kk + span : s]
            if x.requires_grad:
                gx = np.einsum("bol,io->bil", gslice, weight.data[:, :, kk], optimize=True)
                x.accumulate_grad(gx)
            if weight.requires_grad:
                gw = np.einsum("bil,bol->io", x.data, gslice, optimize=True)
                if weight.grad is None:
                    weight.zero_grad()
                weight.grad[:, :, kk] += gw

    return _make(out_data, parents, vjp)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean,
    running_var,
    training,
    momentum=0.1,
    eps=1e-5,
):
    """Normalize over every axis except channel axis 1.

    In training mode the batch statistics are used and the running buffers are
    updated in place (running variance uses the unbiased estimator). In eval
    mode the running buffers are used. A training batch that reduces over a
    single element per channel has no usable variance and raises
    :class:`DegenerateBatchError`.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2:
        raise DimensionError(f"batch_norm expects ndim >= 2, got shape {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(
            f"batch_norm parameter shape mismatch: input has {channels} channels, "
            f"gamma {gamma.shape}, beta {beta.shape}"
        )
    axes = (0,) + tuple(range(2, x.ndim))
    count = int(np.prod([x.shape[ax] for ax in axes]))
    shape = (1, channels) + (1,) * (x.ndim - 2)

    if training:
        if count <= 1:
            raise DegenerateBatchError(
                f"batch_norm in training mode reduces over {count} element(s) per "
                f"channel for input shape {x.shape}; need at least 2"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out_data = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def vjp(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if training:
                mean_dxhat = dxhat.mean(axis=axes).reshape(shape)
                mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes).reshape(shape)
                gx = inv_std.reshape(shape) * (
                    dxhat - mean_dxhat - xhat * mean_dxhat_xhat
                )
            else:
                gx = dxhat * inv_std.reshape(shape)
            x.accumulate_grad(gx)

    return _make(out_data, (x, gamma, beta), vjp)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis; ``gamma``/``beta`` have that axis's length."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimensionError(
            f"layer_norm parameter shape mismatch: last axis is {dim}, "
            f"gamma {gamma.shape}, beta {beta.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out_data = gamma.data * xhat + beta.data

    def vjp(g):
        reduce_axes = tuple(range(x.ndim - 1))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=reduce_axes))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat))

    return _make(out_data, (x, gamma, beta), vjp)


def dropout(x, p, rng, training):
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise DimensionError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    out_data = x.data * mask

    def vjp(g):
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return _make(out_data, (x,), vjp)


def mse_loss(pred, target):
    """Mean squared error over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(
            f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}"
        )
    diff = sub(pred, target)
    return mean_(diff * diff)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy between ``logits`` (B, K) and integer ``labels`` (B,)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(
            f"softmax_cross_entropy expects logits (B, K), got shape {logits.shape}"
        )
    if labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"softmax_cross_entropy expects labels ({logits.shape[0]},), "
            f"got shape {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DimensionError(
            f"softmax_cross_entropy labels must lie in [0, {logits.shape[1]}), "
            f"got range [{labels.min()}, {labels.max()}]"
        )
    batch = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = -log_probs[np.arange(batch), labels].mean()

    def vjp(g):
        if logits.requires_grad:
            probs = np.exp(log_probs)
            probs[np.arange(batch), labels] -= 1.0
            logits.accumulate_grad(g * probs / batch)

    return _make(np.float64(out_data), (logits,), vjp)
