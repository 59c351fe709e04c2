"""Directed-graph action classifier over skeleton windows.

Vertices are the 17 joints, edges the 16 directed bones of a spanning tree
rooted at the nose. Vertex and edge streams are updated jointly: each graph
block mixes a stream with aggregates gathered through learnable V x E
incidence matrices (initialized from the tree's 0/1 incidence), then a
temporal convolution (kernel 9 along time) with a residual path refines each
stream. Global average pooling over time and nodes feeds a 4-class head.

The reference configuration reproduces a fixed parameter budget exactly
(total 90,552); construction fails loudly with a per-group diff if it cannot.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConfigError, DataError, ModelAuditError, TrainingDivergedError
from .nn import (
    Adam,
    BatchNorm,
    Conv2d,
    Linear,
    ParamStore,
    Tensor,
    concat,
    dropout,
    matmul,
    mean_,
    no_grad,
    relu,
    reshape,
    save_state,
    softmax_cross_entropy,
    transpose,
)
from .skeleton import NUM_JOINTS
from .validation import validate_action_batch, validate_labels

__all__ = [
    "EDGES",
    "NUM_EDGES",
    "ACTION_NAMES",
    "DirectedSkeletonGraph",
    "build_graph",
    "edge_features",
    "make_action_windows",
    "DgnnConfig",
    "Dgnn",
    "train_action",
    "REFERENCE_PARAM_BUDGET",
    "SkeletonActionClassifier",
]

# Directed bones (source joint, target joint) of the spanning tree rooted at
# the nose: head fan-out, arms via shoulders, then pelvis -> knee -> foot.
EDGES = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (0, 5),
    (0, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
]
NUM_EDGES = len(EDGES)

ACTION_NAMES = ["stand", "walk", "squat", "fall"]


@dataclass(frozen=True)
class DirectedSkeletonGraph:
    edges: tuple  # ((source, target), ...) of joint indices
    source_incidence: np.ndarray  # (V, E) 0/1, column e marks the source of edge e
    target_incidence: np.ndarray  # (V, E) 0/1, column e marks the target of edge e

    @property
    def num_vertices(self):
        return self.source_incidence.shape[0]

    @property
    def num_edges(self):
        return self.source_incidence.shape[1]


def build_graph():
    """The fixed 17-vertex, 16-edge directed skeleton tree."""
    source = np.zeros((NUM_JOINTS, NUM_EDGES))
    target = np.zeros((NUM_JOINTS, NUM_EDGES))
    for e, (s, t) in enumerate(EDGES):
        source[s, e] = 1.0
        target[t, e] = 1.0
    return DirectedSkeletonGraph(tuple(EDGES), source, target)


def edge_features(vertex):
    """Bone vectors from vertex features: target minus source, per edge.

    ``vertex``: (..., V) with joints on the last axis; returns (..., E).
    Recomputed from vertices on every use, never stored.
    """
    vertex = np.asarray(vertex)
    src = np.array([s for s, _ in EDGES])
    tgt = np.array([t for _, t in EDGES])
    return vertex[..., tgt] - vertex[..., src]


def make_action_windows(keypoints, labels, window=30, stride=1):
    """Slice a labeled skeleton sequence into training windows.

    ``keypoints``: (N, 17, 2); ``labels``: (N,). Window m covers frames
    ``m*stride .. m*stride + window - 1`` and takes the LAST frame's label.
    Returns ``(X, y, frames)`` with X of shape (M, 2, window, 17) and
    ``frames`` the absolute index of each window's last frame.
    """
    keypoints = np.asarray(keypoints, dtype=np.float64)
    labels = np.asarray(labels)
    n = keypoints.shape[0]
    if keypoints.shape != (n, NUM_JOINTS, 2):
        raise DataError(
            f"expected (N, {NUM_JOINTS}, 2) keypoints, got {keypoints.shape}"
        )
    if labels.shape != (n,):
        raise DataError(f"expected ({n},) labels, got {labels.shape}")
    if window < 1 or stride < 1:
        raise DataError(f"window and stride must be >= 1, got {window}, {stride}")
    xs, ys, frames = [], [], []
    for start in range(0, n - window + 1, stride):
        end = start + window
        xs.append(keypoints[start:end].transpose(2, 0, 1))  # (2, T, V)
        ys.append(labels[end - 1])
        frames.append(end - 1)
    if not xs:
        return (
            np.zeros((0, 2, window, NUM_JOINTS)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    return np.stack(xs), np.asarray(ys, dtype=np.int64), np.asarray(frames)


@dataclass(frozen=True)
class DgnnConfig:
    in_channels: int = 2
    block_channels: tuple = (16, 32, 64)
    temporal_kernel: int = 9
    classes: int = 4
    dropout: float = 0.5
    temporal_edge_mode: str = "shared"
    window: int = 30
    seed: int = 0

    def validate(self):
        if self.temporal_edge_mode not in ("shared", "vertex_only"):
            raise ConfigError(
                "temporal_edge_mode must be 'shared' or 'vertex_only', got "
                f"{self.temporal_edge_mode!r}"
            )
        if self.temporal_kernel % 2 != 1:
            raise ConfigError(
                f"temporal kernel must be odd for same-padding, got {self.temporal_kernel}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")

    def is_reference_budget(self):
        return (
            self.in_channels == 2
            and tuple(self.block_channels) == (16, 32, 64)
            and self.temporal_kernel == 9
            and self.classes == 4
        )


# (group prefix, expected parameter count) for the reference configuration.
REFERENCE_PARAM_BUDGET = [
    ("data_bn_v", 68),
    ("data_bn_e", 64),
    ("block1.dgn", 832),
    ("block1.tcn", 2352),
    ("block1", 3184),
    ("block2.dgn", 3808),
    ("block2.tcn", 9312),
    ("block2.residual", 4704),
    ("block2", 17824),
    ("block3.dgn", 13216),
    ("block3.tcn", 37056),
    ("block3.residual", 18624),
    ("block3", 68896),
    ("fc", 516),
    ("total", 90552),
]


class _DgnBlock:
    """Graph update: mix each stream with incidence-weighted aggregates.

    Vertex update input is [vertex, incoming-edge aggregate (via A_target),
    outgoing-edge aggregate (via A_source)]; edge update input is [edge,
    source-vertex gather, target-vertex gather]. Both linears map 3C -> C',
    each followed by its own batch norm and ReLU. The edge update reads the
    block's ORIGINAL vertex features, not the updated ones.
    """

    def __init__(self, store, prefix, c_in, c_out, graph):
        self.linear_v = Linear(store, f"{prefix}.vertex", 3 * c_in, c_out)
        self.linear_e = Linear(store, f"{prefix}.edge", 3 * c_in, c_out)
        self.a_source = store.param_array(f"{prefix}.A_source", graph.source_incidence)
        self.a_target = store.param_array(f"{prefix}.A_target", graph.target_incidence)
        self.bn_v = BatchNorm(store, f"{prefix}.bn_v", c_out)
        self.bn_e = BatchNorm(store, f"{prefix}.bn_e", c_out)

    def _channel_linear(self, linear, t):
        # (B, 3C, T, N) -> (B, T, N, 3C) -> linear -> (B, C', T, N)
        return transpose(linear(transpose(t, (0, 2, 3, 1))), (0, 3, 1, 2))

    def __call__(self, v, e, training):
        incoming = matmul(e, transpose(self.a_target, (1, 0)))
        outgoing = matmul(e, transpose(self.a_source, (1, 0)))
        v_new = self._channel_linear(self.linear_v, concat([v, incoming, outgoing], axis=1))
        v_new = relu(self.bn_v(v_new, training))

        source_gather = matmul(v, self.a_source)
        target_gather = matmul(v, self.a_target)
        e_new = self._channel_linear(self.linear_e, concat([e, source_gather, target_gather], axis=1))
        e_new = relu(self.bn_e(e_new, training))
        return v_new, e_new


class _GraphTemporalConv:
    """One block: graph update, then temporal conv (kernel k along time) with a
    residual path. The first block adds an identity residual around the
    temporal conv (its input, the graph update's output, already has the
    block's output width). Later blocks project the block input with a conv+BN
    of the same temporal kernel when the width changes, identity otherwise.
    In 'shared' mode the same temporal weights process the vertex stream
    first, then the edge stream; 'vertex_only' leaves the edge stream as the
    graph update's output.
    """

    def __init__(self, store, prefix, c_in, c_out, graph, kernel, mode, first=False):
        self.dgn = _DgnBlock(store, f"{prefix}.dgn", c_in, c_out, graph)
        pad = kernel // 2
        self.tcn_conv = Conv2d(
            store, f"{prefix}.tcn.conv", c_out, c_out, (kernel, 1), (1, 1), (pad, 0)
        )
        self.tcn_bn = BatchNorm(store, f"{prefix}.tcn.bn", c_out)
        self.first = first
        if not first and c_in != c_out:
            self.res_conv = Conv2d(
                store, f"{prefix}.residual.conv", c_in, c_out, (kernel, 1), (1, 1), (pad, 0)
            )
            self.res_bn = BatchNorm(store, f"{prefix}.residual.bn", c_out)
        else:
            self.res_conv = None
        self.mode = mode

    def _temporal(self, mixed, block_input, training):
        out = self.tcn_bn(self.tcn_conv(mixed), training)
        if self.res_conv is not None:
            residual = self.res_bn(self.res_conv(block_input), training)
        elif self.first:
            residual = mixed
        else:
            residual = block_input
        return relu(out + residual)

    def __call__(self, v, e, training):
        v_mixed, e_mixed = self.dgn(v, e, training)
        v_out = self._temporal(v_mixed, v, training)
        if self.mode == "shared":
            e_out = self._temporal(e_mixed, e, training)
        else:
            e_out = e_mixed
        return v_out, e_out


class Dgnn:
    """Action classifier; construction audits the parameter budget."""

    def __init__(self, config=None):
        self.config = config or DgnnConfig()
        self.config.validate()
        cfg = self.config
        self.graph = build_graph()
        self.store = ParamStore(cfg.seed)
        self._forward_rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))

        v_channels = self.graph.num_vertices * cfg.in_channels
        e_channels = self.graph.num_edges * cfg.in_channels
        self.data_bn_v = BatchNorm(self.store, "data_bn_v", v_channels)
        self.data_bn_e = BatchNorm(self.store, "data_bn_e", e_channels)

        self.blocks = []
        c_in = cfg.in_channels
        for i, c_out in enumerate(cfg.block_channels):
            self.blocks.append(
                _GraphTemporalConv(
                    self.store,
                    f"block{i + 1}",
                    c_in,
                    c_out,
                    self.graph,
                    cfg.temporal_kernel,
                    cfg.temporal_edge_mode,
                    first=(i == 0),
                )
            )
            c_in = c_out
        self.fc = Linear(self.store, "fc", 2 * cfg.block_channels[-1], cfg.classes)

        if cfg.is_reference_budget():
            mismatches = [
                f"{name}: expected {expected}, got {actual}"
                for name, actual, expected, ok in self.param_audit()
                if not ok
            ]
            if mismatches:
                raise ModelAuditError(
                    "parameter budget audit failed: " + "; ".join(mismatches)
                )

    # -- parameter audit -----------------------------------------------------
    def group_param_counts(self):
        """Parameter totals per audited group prefix, plus the grand total."""
        sizes = self.store.param_sizes()
        groups = {}
        prefixes = ["data_bn_v", "data_bn_e", "fc"]
        for i in range(len(self.config.block_channels)):
            prefixes += [f"block{i + 1}.dgn", f"block{i + 1}.tcn", f"block{i + 1}.residual", f"block{i + 1}"]
        for prefix in prefixes:
            count = sum(
                size
                for name, size in sizes.items()
                if name == prefix or name.startswith(prefix + ".")
            )
            if count:
                groups[prefix] = count
        groups["total"] = self.store.num_params()
        return groups

    def param_audit(self):
        """Rows (group, actual, expected, ok); expected is None off-reference."""
        groups = self.group_param_counts()
        if self.config.is_reference_budget():
            rows = []
            for name, expected in REFERENCE_PARAM_BUDGET:
                actual = groups.get(name, 0)
                rows.append((name, actual, expected, actual == expected))
            return rows
        return [(name, count, None, True) for name, count in groups.items()]

    # -- forward ----------------------------------------------------------------
    def _data_bn(self, t, bn, training):
        # (B, C, T, N) -> (B, N*C, T): one norm channel per (node, coordinate).
        batch, c, length, nodes = t.shape
        flat = reshape(transpose(t, (0, 3, 1, 2)), (batch, nodes * c, length))
        flat = bn(flat, training)
        return transpose(reshape(flat, (batch, nodes, c, length)), (0, 2, 3, 1))

    def forward(self, inputs, training=False):
        """``inputs``: (B, 2, T, 17) or (B, T, 17, 2) arrays -> (B, classes) logits."""
        cfg = self.config
        x = validate_action_batch(inputs, joints=self.graph.num_vertices)
        e = edge_features(x)
        v = self._data_bn(Tensor(x), self.data_bn_v, training)
        e = self._data_bn(Tensor(e), self.data_bn_e, training)
        for block in self.blocks:
            v, e = block(v, e, training)
        v = relu(dropout(v, cfg.dropout, self._forward_rng, training))
        e = relu(dropout(e, cfg.dropout, self._forward_rng, training))
        pooled = concat([mean_(v, axis=(2, 3)), mean_(e, axis=(2, 3))], axis=1)
        return self.fc(pooled)

    def predict(self, inputs):
        """Eval-mode class predictions (argmax of logits)."""
        return np.argmax(self.scores(inputs), axis=1)

    def scores(self, inputs):
        """Eval-mode logits as an ndarray (B, classes)."""
        with no_grad():
            return self.forward(inputs, training=False).data

    def classify(self, window_features):
        """Scores for a single (2, T, 17) window -> (classes,) ndarray."""
        return self.scores(np.asarray(window_features)[None])[0]


def train_action(
    model,
    inputs,
    labels,
    *,
    epochs,
    lr=1e-3,
    batch_size=64,
    seed=0,
    val_inputs=None,
    val_labels=None,
    checkpoint_path=None,
    log=None,
    stop=None,
):
    """Minibatch Adam training on cross-entropy.

    Returns log rows (epoch, split, loss, accuracy); train rows average the
    epoch's minibatch statistics. The best epoch by monitored accuracy
    (validation if given, else train) is checkpointed. ``stop``, when given,
    is called after every epoch with that epoch's log rows; returning True
    ends training early.
    """
    cfg = model.config
    x = validate_action_batch(inputs, joints=model.graph.num_vertices)
    y = validate_labels(labels, x.shape[0], cfg.classes)
    n = x.shape[0]
    if n < 2:
        raise DataError("training needs at least 2 windows for batch statistics")
    batch_size = max(2, min(batch_size, n))
    optimizer = Adam(model.store, lr=lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    best = -np.inf
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        count = 0
        for b, start in enumerate(range(0, n, batch_size)):
            idx = order[start : start + batch_size]
            if len(idx) < 2:
                continue  # a singleton batch has no usable batch statistics
            model.store.zero_grads()
            logits = model.forward(x[idx], training=True)
            loss = softmax_cross_entropy(logits, y[idx])
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
            total_loss += value * len(idx)
            total_correct += int((np.argmax(logits.data, axis=1) == y[idx]).sum())
            count += len(idx)
            # Drop the step's graph now: its vjp closures pin every forward
            # buffer, and carrying them through the next forward doubles
            # peak memory.
            del logits, loss
        train_loss = total_loss / count
        train_acc = total_correct / count
        epoch_rows = [(epoch, "train", train_loss, train_acc)]
        monitored = train_acc
        if val_inputs is not None:
            val_pred = model.predict(val_inputs)
            val_y = validate_labels(val_labels, len(val_pred), cfg.classes)
            val_acc = float((val_pred == val_y).mean())
            epoch_rows.append((epoch, "val", float("nan"), val_acc))
            monitored = val_acc
        rows.extend(epoch_rows)
        if log is not None:
            for row in epoch_rows:
                log(row)
        if monitored > best:
            best = monitored
            if checkpoint_path is not None:
                save_state(checkpoint_path, model.store.state())
        if stop is not None and stop(epoch_rows):
            break
    return rows


class SkeletonActionClassifier(BaseEstimator, ClassifierMixin):
    """sklearn-style wrapper around Dgnn training and inference.

    X: (N, T, 17, 2) skeleton windows (or channel-first (N, 2, T, 17));
    y: integer class labels in [0, classes).
    """

    def __init__(
        self,
        epochs=40,
        lr=1e-3,
        batch_size=64,
        seed=0,
        config=None,
    ):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.config = config

    def _config(self, window):
        cfg = self.config or DgnnConfig()
        if cfg.seed != self.seed:
            cfg = replace(cfg, seed=self.seed)
        if window is not None and cfg.window != window:
            cfg = replace(cfg, window=window)
        return cfg

    def fit(self, X, y):
        X = validate_action_batch(X)
        cfg = self._config(X.shape[2])
        y = validate_labels(y, X.shape[0], cfg.classes)
        self.classes_ = np.unique(y)
        self.model_ = Dgnn(cfg)
        self.history_ = train_action(
            self.model_,
            X,
            y,
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(X)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        logits = self.model_.scores(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def score(self, X, y):
        check_is_fitted(self, "model_")
        X = validate_action_batch(X)
        y = validate_labels(y, X.shape[0], self.model_.config.classes)
        return float((self.predict(X) == y).mean())
