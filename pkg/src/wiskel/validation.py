"""Input validation helpers shared by models and estimators.

All helpers return float64 arrays in the canonical internal layout and raise
:class:`DimensionError` naming the offending axis, so shape bugs surface at the
API boundary instead of deep inside a forward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

__all__ = [
    "validate_csi_batch",
    "validate_pose_targets",
    "validate_action_batch",
    "validate_labels",
]


def validate_csi_batch(X, receivers, subcarriers, window, name="X"):
    """Coerce CSI windows to (N, R, 1, S, W) float64.

    Accepts (N, R, 1, S, W), (N, R, S, W), or a single sample without the
    batch axis.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 4 and X.shape == (receivers, 1, subcarriers, window):
        X = X[None]
    elif X.ndim == 3 and X.shape == (receivers, subcarriers, window):
        X = X[None, :, None]
    elif X.ndim == 4 and X.shape[1:] == (receivers, subcarriers, window):
        X = X[:, :, None]
    if X.ndim != 5 or X.shape[1:] != (receivers, 1, subcarriers, window):
        raise DimensionError(
            f"{name} must have shape (N, {receivers}, 1, {subcarriers}, {window}) "
            f"(receivers, channel, subcarriers, samples), got {X.shape}"
        )
    return X


def validate_pose_targets(y, n, joints=17, name="y"):
    """Coerce keypoint targets to (N, joints, 2) float64."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2 and y.shape == (n, joints * 2):
        y = y.reshape(n, joints, 2)
    if y.shape != (n, joints, 2):
        raise DimensionError(
            f"{name} must have shape ({n}, {joints}, 2) or ({n}, {joints * 2}), "
            f"got {y.shape}"
        )
    return y


def validate_action_batch(X, joints=17, window=None, name="X"):
    """Coerce skeleton windows to the channel-first layout (N, 2, T, V).

    Accepts (N, T, V, 2) sequences of skeleton frames or the internal
    (N, 2, T, V) layout directly. When ``window`` is given, T must equal it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise DimensionError(
            f"{name} must be 4-dimensional skeleton windows, got shape {X.shape}"
        )
    if X.shape[3] == 2 and X.shape[2] == joints:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != 2 or X.shape[3] != joints:
        raise DimensionError(
            f"{name} must have shape (N, T, {joints}, 2) or (N, 2, T, {joints}), "
            f"got {X.shape}"
        )
    if window is not None and X.shape[2] != window:
        raise DimensionError(
            f"{name} window length {X.shape[2]} does not match the configured "
            f"window {window}"
        )
    return X


def validate_labels(y, n, classes, name="y"):
    """Coerce integer class labels to (N,) int64 within [0, classes)."""
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"{name} must have shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(y, dtype=np.float64)):
            raise DimensionError(f"{name} must contain integer class labels")
        y = rounded
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise DimensionError(
            f"{name} labels must lie in [0, {classes}), got range "
            f"[{y.min()}, {y.max()}]"
        )
    return y
