"""CSI-to-skeleton pose network: per-receiver conv encoders, a transformer over
the (joint, coordinate) sequence, and a transposed-conv decoder.

Data flow for the reference configuration (batch axis omitted):

    3 x (1, 114, 10) --conv x3--> 3 x (128, 17, 2) --concat--> (384, 17, 2)
    --reshape--> (34, 384) --transformer x2--> (34, 384)
    --deconv x2--> (64, 68) -> (32, 136) --flatten--> 4352 --fc+tanh--> (17, 2)

The reshape enumerates the 17 x 2 spatial grid row-major, so sequence position
2*j + c corresponds to joint j, coordinate c (c=0 for x, c=1 for y).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, ModelAuditError, TrainingDivergedError
from .nn import (
    Adam,
    Conv2d,
    ConvTranspose1d,
    Linear,
    ParamStore,
    Tensor,
    TransformerEncoderLayer,
    concat,
    mse_loss,
    relu,
    reshape,
    save_state,
    sinusoidal_positional_encoding,
    tanh,
    transpose,
)
from .skeleton import NUM_JOINTS, Skeleton
from .validation import validate_csi_batch, validate_pose_targets

__all__ = [
    "TedNetConfig",
    "TedNet",
    "train_pose",
    "infer_sequence",
    "CsiPoseRegressor",
]


@dataclass(frozen=True)
class TedNetConfig:
    receivers: int = 3
    subcarriers: int = 114
    window: int = 10
    encoder_channels: tuple = (64, 128, 128)
    encoder_kernels: tuple = ((4, 3), (2, 3), (2, 3))
    encoder_strides: tuple = ((2, 2), (2, 2), (2, 2))
    encoder_paddings: tuple = ((2, 1), (2, 1), (2, 1))
    d_model: int = 384
    transformer_layers: int = 2
    heads: int = 8
    ff_width: int = 1536
    decoder_channels: tuple = (64, 32)
    decoder_kernel: int = 3
    decoder_stride: int = 2
    decoder_padding: int = 1
    decoder_output_padding: int = 1
    joints: int = NUM_JOINTS
    coords: int = 2
    share_encoder_weights: bool = False
    positional_encoding: bool = True
    dropout: float = 0.0
    seed: int = 0

    def validate(self):
        if self.receivers < 1:
            raise ConfigError(f"receivers must be >= 1, got {self.receivers}")
        if len(self.encoder_channels) != len(self.encoder_kernels):
            raise ConfigError("encoder channel and kernel lists differ in length")
        concat_channels = self.receivers * self.encoder_channels[-1]
        if concat_channels != self.d_model:
            raise ConfigError(
                f"concatenated encoder channels {self.receivers} x "
                f"{self.encoder_channels[-1]} = {concat_channels} must equal "
                f"d_model {self.d_model}"
            )
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} is not divisible by {self.heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


def _conv_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _deconv_size(size, kernel, stride, padding, output_padding):
    return (size - 1) * stride - 2 * padding + kernel + output_padding


class TedNet:
    """Pose network over a ParamStore; construction runs a full shape audit."""

    def __init__(self, config=None):
        self.config = config or TedNetConfig()
        self.config.validate()
        cfg = self.config
        self.store = ParamStore(cfg.seed)
        self._forward_rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))

        n_encoders = 1 if cfg.share_encoder_weights else cfg.receivers
        self.encoders = []
        for e in range(n_encoders):
            stack = []
            in_ch = 1
            for i, out_ch in enumerate(cfg.encoder_channels):
                stack.append(
                    Conv2d(
                        self.store,
                        f"encoder{e}.conv{i + 1}",
                        in_ch,
                        out_ch,
                        cfg.encoder_kernels[i],
                        cfg.encoder_strides[i],
                        cfg.encoder_paddings[i],
                    )
                )
                in_ch = out_ch
            self.encoders.append(stack)

        h, w = cfg.subcarriers, cfg.window
        for i in range(len(cfg.encoder_channels)):
            h = _conv_size(h, cfg.encoder_kernels[i][0], cfg.encoder_strides[i][0], cfg.encoder_paddings[i][0])
            w = _conv_size(w, cfg.encoder_kernels[i][1], cfg.encoder_strides[i][1], cfg.encoder_paddings[i][1])
            if h <= 0 or w <= 0:
                raise ConfigError(
                    f"encoder conv{i + 1} collapses the input to {h} x {w}"
                )
        self.enc_h, self.enc_w = h, w
        self.seq_len = h * w

        self.transformer = [
            TransformerEncoderLayer(
                self.store,
                f"transformer.layer{i}",
                cfg.d_model,
                cfg.heads,
                cfg.ff_width,
                cfg.dropout,
            )
            for i in range(cfg.transformer_layers)
        ]
        self._pos_table = (
            sinusoidal_positional_encoding(self.seq_len, cfg.d_model)
            if cfg.positional_encoding
            else None
        )

        self.decoders = []
        in_ch = cfg.d_model
        length = self.seq_len
        for i, out_ch in enumerate(cfg.decoder_channels):
            self.decoders.append(
                ConvTranspose1d(
                    self.store,
                    f"decoder.deconv{i + 1}",
                    in_ch,
                    out_ch,
                    cfg.decoder_kernel,
                    cfg.decoder_stride,
                    cfg.decoder_padding,
                    cfg.decoder_output_padding,
                )
            )
            in_ch = out_ch
            length = _deconv_size(
                length,
                cfg.decoder_kernel,
                cfg.decoder_stride,
                cfg.decoder_padding,
                cfg.decoder_output_padding,
            )
        self.dec_len = length
        self.flatten_dim = cfg.decoder_channels[-1] * length
        self.out_dim = cfg.joints * cfg.coords
        self.fc = Linear(self.store, "head.fc", self.flatten_dim, self.out_dim)

        self.shape_audit = self._audit_shapes()

    # -- shape audit -------------------------------------------------------------
    def _expected_shapes(self):
        cfg = self.config
        rows = []
        h, w = cfg.subcarriers, cfg.window
        for i, ch in enumerate(cfg.encoder_channels):
            h = _conv_size(h, cfg.encoder_kernels[i][0], cfg.encoder_strides[i][0], cfg.encoder_paddings[i][0])
            w = _conv_size(w, cfg.encoder_kernels[i][1], cfg.encoder_strides[i][1], cfg.encoder_paddings[i][1])
            rows.append((f"encoder_conv{i + 1}", (ch, h, w)))
        rows.append(("concat", (cfg.d_model, h, w)))
        rows.append(("reshape", (self.seq_len, cfg.d_model)))
        rows.append(("transformer", (self.seq_len, cfg.d_model)))
        length = self.seq_len
        for i, ch in enumerate(cfg.decoder_channels):
            length = _deconv_size(
                length,
                cfg.decoder_kernel,
                cfg.decoder_stride,
                cfg.decoder_padding,
                cfg.decoder_output_padding,
            )
            rows.append((f"decoder_conv{i + 1}", (ch, length)))
        rows.append(("flatten", cfg.decoder_channels[-1] * length))
        rows.append(("fc", cfg.joints * cfg.coords))
        rows.append(("output", (cfg.joints, cfg.coords)))
        return rows

    def _audit_shapes(self):
        cfg = self.config
        expected = self._expected_shapes()
        dummy = np.zeros((1, cfg.receivers, 1, cfg.subcarriers, cfg.window))
        _, traced = self._forward(dummy, training=False, trace=True)
        mismatches = [
            f"{name}: expected {exp}, got {act}"
            for (name, exp), (_, act) in zip(expected, traced)
            if exp != act
        ]
        if mismatches:
            raise ModelAuditError(
                "shape audit failed: " + "; ".join(mismatches)
            )
        return traced

    # -- forward ----------------------------------------------------------------
    def _encode(self, x, note=None):
        """Per-receiver conv stacks concatenated on the channel axis."""
        cfg = self.config
        feats = []
        for r in range(cfg.receivers):
            t = Tensor(x[:, r])
            stack = self.encoders[0 if cfg.share_encoder_weights else r]
            for i, conv in enumerate(stack):
                t = relu(conv(t))
                if note is not None and r == 0:
                    note(f"encoder_conv{i + 1}", t)
            feats.append(t)
        return concat(feats, axis=1) if len(feats) > 1 else feats[0]

    def encoder_features(self, inputs):
        """Eval-mode encoder output (B, R * channels, H, W) as an ndarray.

        Channel blocks appear in receiver order, so this exposes which encoder
        processed which receiver; wiring tests compare it across models with
        permuted inputs and permuted encoder parameter groups.
        """
        cfg = self.config
        x = validate_csi_batch(inputs, cfg.receivers, cfg.subcarriers, cfg.window)
        return self._encode(x).data

    def _forward(self, x, training, trace=False):
        cfg = self.config
        batch = x.shape[0]
        rows = []

        def note(name, t, scalar=False):
            if trace:
                shape = t.shape[1:]
                rows.append((name, shape[0] if scalar else tuple(shape)))

        cat = self._encode(x, note)
        note("concat", cat)
        seq = reshape(transpose(cat, (0, 2, 3, 1)), (batch, self.seq_len, cfg.d_model))
        note("reshape", seq)
        if self._pos_table is not None:
            seq = seq + Tensor(self._pos_table)
        for layer in self.transformer:
            seq = layer(seq, training=training, rng=self._forward_rng)
        note("transformer", seq)
        dec = transpose(seq, (0, 2, 1))
        for i, deconv in enumerate(self.decoders):
            dec = relu(deconv(dec))
            note(f"decoder_conv{i + 1}", dec)
        flat = reshape(dec, (batch, self.flatten_dim))
        note("flatten", flat, scalar=True)
        out = tanh(self.fc(flat))
        note("fc", out, scalar=True)
        out = reshape(out, (batch, cfg.joints, cfg.coords))
        note("output", out)
        return out, rows

    def forward(self, inputs, training=False):
        """Differentiable forward pass. ``inputs``: (B, R, 1, S, W) array."""
        cfg = self.config
        x = validate_csi_batch(inputs, cfg.receivers, cfg.subcarriers, cfg.window)
        out, _ = self._forward(x, training)
        return out

    def predict(self, inputs):
        """Eval-mode forward returning a (B, joints, 2) ndarray in (-1, 1)."""
        return self.forward(inputs, training=False).data

    def loss(self, inputs, targets, training=True):
        pred = self.forward(inputs, training=training)
        return mse_loss(pred, Tensor(np.asarray(targets, dtype=np.float64)))


def train_pose(
    model,
    inputs,
    targets,
    *,
    epochs,
    lr=1e-3,
    batch_size=512,
    seed=0,
    val_inputs=None,
    val_targets=None,
    checkpoint_path=None,
    log=None,
    stop=None,
):
    """Minibatch Adam training on MSE; returns log rows (epoch, split, mse).

    The train row of each epoch averages that epoch's minibatch losses. The
    best epoch (lowest validation MSE when a validation set is given, lowest
    train MSE otherwise) is checkpointed to ``checkpoint_path``. A non-finite
    loss aborts with epoch, batch, and parameter norms in the raised error.
    ``stop``, when given, is called after every epoch with that epoch's log
    rows; returning True ends training early.
    """
    cfg = model.config
    x = validate_csi_batch(inputs, cfg.receivers, cfg.subcarriers, cfg.window)
    y = validate_pose_targets(targets, x.shape[0], joints=cfg.joints)
    n = x.shape[0]
    batch_size = max(1, min(batch_size, n))
    optimizer = Adam(model.store, lr=lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    best = np.inf
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            model.store.zero_grads()
            loss = model.loss(x[idx], y[idx], training=True)
            value = float(loss.data)
            if not np.isfinite(value):
                norms = {
                    name: float(np.linalg.norm(p.data))
                    for name, p in model.store.params().items()
                }
                raise TrainingDivergedError(
                    f"non-finite loss {value}", epoch=epoch, batch=b, param_norms=norms
                )
            loss.backward()
            optimizer.step()
            total += value * len(idx)
            # Drop the step's graph now: its vjp closures pin every forward
            # buffer, and carrying them through the next forward doubles
            # peak memory.
            del loss
        train_mse = total / n
        epoch_rows = [(epoch, "train", train_mse)]
        monitored = train_mse
        if val_inputs is not None:
            val_mse = float(model.loss(val_inputs, val_targets, training=False).data)
            epoch_rows.append((epoch, "val", val_mse))
            monitored = val_mse
        rows.extend(epoch_rows)
        if log is not None:
            for row in epoch_rows:
                log(row)
        if monitored < best:
            best = monitored
            if checkpoint_path is not None:
                save_state(checkpoint_path, model.store.state())
        if stop is not None and stop(epoch_rows):
            break
    return rows


def infer_sequence(model, windows):
    """Predict one skeleton per CSI window, mapped into [0,1]^2.

    Network outputs live in (-1, 1); values outside [0, 1] are clamped and
    counted. Returns ``(skeletons, out_of_range_count)`` with window frame
    indices preserved.
    """
    if not windows:
        return [], 0
    stacked = np.stack([w.tensors for w in windows])
    preds = model.predict(stacked)
    out_of_range = int(((preds < 0.0) | (preds > 1.0)).sum())
    clipped = np.clip(preds, 0.0, 1.0)
    skeletons = [
        Skeleton(clipped[i], np.ones(model.config.joints, dtype=bool), w.frame_index)
        for i, w in enumerate(windows)
    ]
    return skeletons, out_of_range


class CsiPoseRegressor(BaseEstimator, RegressorMixin):
    """sklearn-style wrapper around TedNet training and inference.

    X: (N, R, 1, S, W) or (N, R, S, W) CSI windows; y: (N, 17, 2) or (N, 34)
    normalized keypoints. ``score`` returns negative MSE rather than R^2
    because targets are per-joint coordinate grids, not independent columns.
    """

    def __init__(
        self,
        epochs=150,
        lr=1e-3,
        batch_size=32,
        seed=0,
        config=None,
    ):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.config = config

    def _config(self):
        cfg = self.config or TedNetConfig()
        if cfg.seed != self.seed:
            cfg = replace(cfg, seed=self.seed)
        return cfg

    def fit(self, X, y):
        cfg = self._config()
        X = validate_csi_batch(X, cfg.receivers, cfg.subcarriers, cfg.window)
        y = validate_pose_targets(y, X.shape[0], joints=cfg.joints)
        self.model_ = TedNet(cfg)
        self.history_ = train_pose(
            self.model_,
            X,
            y,
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.loss_curve_ = [m for _, split, m in self.history_ if split == "train"]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)

    def score(self, X, y):
        check_is_fitted(self, "model_")
        cfg = self.model_.config
        X = validate_csi_batch(X, cfg.receivers, cfg.subcarriers, cfg.window)
        y = validate_pose_targets(y, X.shape[0], joints=cfg.joints)
        return -float(np.mean((self.predict(X) - y) ** 2))
