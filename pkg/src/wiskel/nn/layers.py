"""Layer objects: thin wrappers that register parameters in a ParamStore.

A layer is constructed with a store and a dotted name prefix; its parameters
live in the store under that prefix and the layer keeps references. Layers hold
no other state, so checkpointing and parameter audits work purely on the store.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .functional import batch_norm, conv2d, conv_transpose1d, dropout, layer_norm
from .tensor import matmul, relu, reshape, softmax, transpose

__all__ = [
    "Linear",
    "Conv2d",
    "ConvTranspose1d",
    "BatchNorm",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "TransformerEncoderLayer",
    "sinusoidal_positional_encoding",
]


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v), int(v))


class Linear:
    """Affine map over the last axis; weight stored as (in_features, out_features)."""

    def __init__(self, store, prefix, in_features, out_features, bias=True):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.weight = store.param_uniform(
            f"{prefix}.weight", (self.in_features, self.out_features), fan_in=in_features
        )
        self.bias = (
            store.param_uniform(f"{prefix}.bias", (self.out_features,), fan_in=in_features)
            if bias
            else None
        )

    def __call__(self, x):
        if x.shape[-1] != self.in_features:
            raise DimensionError(
                f"linear expects last axis {self.in_features}, got {x.shape[-1]} "
                f"(input shape {x.shape})"
            )
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d:
    def __init__(self, store, prefix, in_channels, out_channels, kernel, stride=1, padding=0):
        kh, kw = _pair(kernel)
        fan_in = in_channels * kh * kw
        self.weight = store.param_uniform(
            f"{prefix}.weight", (out_channels, in_channels, kh, kw), fan_in=fan_in
        )
        self.bias = store.param_uniform(f"{prefix}.bias", (out_channels,), fan_in=fan_in)
        self.stride = _pair(stride)
        self.padding = _pair(padding)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose1d:
    def __init__(
        self,
        store,
        prefix,
        in_channels,
        out_channels,
        kernel,
        stride=1,
        padding=0,
        output_padding=0,
    ):
        fan_in = in_channels * kernel
        self.weight = store.param_uniform(
            f"{prefix}.weight", (in_channels, out_channels, kernel), fan_in=fan_in
        )
        self.bias = store.param_uniform(f"{prefix}.bias", (out_channels,), fan_in=fan_in)
        self.stride = int(stride)
        self.padding = int(padding)
        self.output_padding = int(output_padding)

    def __call__(self, x):
        return conv_transpose1d(
            x, self.weight, self.bias, self.stride, self.padding, self.output_padding
        )


class BatchNorm:
    """Batch normalization over channel axis 1, any rank >= 2."""

    def __init__(self, store, prefix, channels, momentum=0.1, eps=1e-5):
        self.gamma = store.param_constant(f"{prefix}.gamma", (channels,), 1.0)
        self.beta = store.param_constant(f"{prefix}.beta", (channels,), 0.0)
        self.running_mean = store.buffer(f"{prefix}.running_mean", np.zeros(channels))
        self.running_var = store.buffer(f"{prefix}.running_var", np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training=False):
        return batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training,
            self.momentum,
            self.eps,
        )


class LayerNorm:
    def __init__(self, store, prefix, dim, eps=1e-5):
        self.gamma = store.param_constant(f"{prefix}.gamma", (dim,), 1.0)
        self.beta = store.param_constant(f"{prefix}.beta", (dim,), 0.0)
        self.eps = eps

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadSelfAttention:
    """Scaled dot-product self-attention over (B, S, D) with an output projection."""

    def __init__(self, store, prefix, d_model, heads):
        if d_model % heads != 0:
            raise DimensionError(
                f"model width {d_model} is not divisible by {heads} heads"
            )
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.q = Linear(store, f"{prefix}.q", d_model, d_model)
        self.k = Linear(store, f"{prefix}.k", d_model, d_model)
        self.v = Linear(store, f"{prefix}.v", d_model, d_model)
        self.out = Linear(store, f"{prefix}.out", d_model, d_model)

    def __call__(self, x, training=False, rng=None, dropout_p=0.0, return_attention=False):
        batch, seq, dim = x.shape
        if dim != self.d_model:
            raise DimensionError(
                f"attention expects width {self.d_model}, got {dim} (input shape {x.shape})"
            )

        def split_heads(t):
            t = reshape(t, (batch, seq, self.heads, self.d_head))
            return transpose(t, (0, 2, 1, 3))

        q = split_heads(self.q(x))
        k = split_heads(self.k(x))
        v = split_heads(self.v(x))
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        attn = softmax(scores, axis=-1)
        if dropout_p > 0.0:
            attn = dropout(attn, dropout_p, rng, training)
        ctx = transpose(matmul(attn, v), (0, 2, 1, 3))
        out = self.out(reshape(ctx, (batch, seq, dim)))
        if return_attention:
            return out, attn
        return out


class TransformerEncoderLayer:
    """Post-norm encoder layer: LN(x + attn(x)) then LN(x + FFN(x))."""

    def __init__(self, store, prefix, d_model, heads, ff_width, dropout_p=0.0):
        self.attn = MultiHeadSelfAttention(store, f"{prefix}.attn", d_model, heads)
        self.norm1 = LayerNorm(store, f"{prefix}.norm1", d_model)
        self.ff1 = Linear(store, f"{prefix}.ff1", d_model, ff_width)
        self.ff2 = Linear(store, f"{prefix}.ff2", ff_width, d_model)
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", d_model)
        self.dropout_p = dropout_p

    def __call__(self, x, training=False, rng=None):
        a = self.attn(x, training=training, rng=rng, dropout_p=self.dropout_p)
        a = dropout(a, self.dropout_p, rng, training)
        x = self.norm1(x + a)
        f = self.ff2(relu(self.ff1(x)))
        f = dropout(f, self.dropout_p, rng, training)
        return self.norm2(x + f)


def sinusoidal_positional_encoding(seq_len, d_model):
    """Fixed sin/cos positional table of shape (seq_len, d_model)."""
    position = np.arange(seq_len, dtype=np.float64)[:, None]
    index = np.arange(d_model, dtype=np.float64)[None, :]
    angle = position / np.power(10000.0, 2.0 * np.floor(index / 2.0) / d_model)
    table = np.where(index % 2 == 0, np.sin(angle), np.cos(angle))
    return table
