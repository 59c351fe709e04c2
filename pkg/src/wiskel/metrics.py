"""Evaluation metrics: PCK keypoint accuracy, confusion matrices for the
4-class action task, and per-segment tracking error.

PCK and segment errors normalize each frame by its ground-truth cross-torso
diagonal (Shoulder L to Pelvis R, falling back to Shoulder R to Pelvis L when
a joint of the primary pair is invalid). Frames with no usable diagonal are
excluded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgnn import ACTION_NAMES
from .errors import DataError
from .skeleton import JOINT_NAMES, NUM_JOINTS

__all__ = [
    "DEFAULT_THRESHOLDS",
    "TORSO_PRIMARY",
    "TORSO_FALLBACK",
    "DEFAULT_SEGMENTS",
    "torso_diagonal",
    "PckReport",
    "pck",
    "pck_split",
    "ConfusionMatrix",
    "confusion",
    "SegmentReport",
    "segment_tracking_error",
    "format_pck_table",
    "format_pck_pair_table",
    "pck_csv",
    "format_confusion",
    "confusion_csv",
    "format_segments",
    "segments_csv",
]

DEFAULT_THRESHOLDS = (0.10, 0.20, 0.30, 0.40, 0.50)
TORSO_PRIMARY = (6, 11)  # Shoulder L, Pelvis R
TORSO_FALLBACK = (5, 12)  # Shoulder R, Pelvis L
DEFAULT_SEGMENTS = (
    ("head", (0, 1, 2, 3, 4)),
    ("torso", (5, 6)),
    ("arms", (7, 8, 9, 10)),
    ("pelvis", (11, 12)),
    ("legs", (13, 14, 15, 16)),
)


def torso_diagonal(keypoints, valid=None):
    """Cross-torso diagonal length of one skeleton, or None if unusable.

    Uses the primary pair when both joints are valid, otherwise the fallback
    pair. Returns None when neither pair is fully valid or the chosen
    diagonal has zero length.
    """
    kp = np.asarray(keypoints, dtype=np.float64)
    if kp.shape != (NUM_JOINTS, 2):
        raise DataError(f"expected keypoints of shape (17, 2), got {kp.shape}")
    if valid is None:
        valid = np.ones(NUM_JOINTS, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
    for a, b in (TORSO_PRIMARY, TORSO_FALLBACK):
        if valid[a] and valid[b]:
            length = float(np.linalg.norm(kp[a] - kp[b]))
            return length if length > 0.0 else None
    return None


@dataclass(frozen=True)
class PckReport:
    """Per-keypoint and averaged PCK percentages at several thresholds."""

    thresholds: tuple
    per_keypoint: np.ndarray  # (17, len(thresholds)) percentages
    joint_counts: np.ndarray  # (17,) frames contributing to each joint
    average: np.ndarray  # (len(thresholds),) mean over keypoints
    frames_evaluated: int
    frames_excluded: int

    def at(self, alpha):
        """Average PCK percentage at threshold ``alpha``."""
        for i, t in enumerate(self.thresholds):
            if abs(t - alpha) < 1e-12:
                return float(self.average[i])
        raise DataError(f"threshold {alpha} not in report thresholds {self.thresholds}")


def _as_pose_arrays(preds, targets, target_valid):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 3 or preds.shape[1:] != (NUM_JOINTS, 2):
        raise DataError(
            f"predictions {preds.shape} and targets {targets.shape} must both be (N, 17, 2)"
        )
    if target_valid is None:
        target_valid = np.ones(preds.shape[:2], dtype=bool)
    else:
        target_valid = np.asarray(target_valid, dtype=bool)
        if target_valid.shape != preds.shape[:2]:
            raise DataError(
                f"validity mask {target_valid.shape} must be {preds.shape[:2]}"
            )
    return preds, targets, target_valid


def pck(preds, targets, target_valid=None, thresholds=DEFAULT_THRESHOLDS):
    """PCK over a batch of frames: ``(N, 17, 2)`` predictions vs targets.

    A keypoint is correct at threshold alpha when its distance to the target
    is <= alpha times the frame's ground-truth torso diagonal (the boundary
    counts as correct). Invalid target joints are excluded from that joint's
    tally; frames without a usable diagonal are excluded entirely.
    """
    preds, targets, target_valid = _as_pose_arrays(preds, targets, target_valid)
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise DataError("at least one PCK threshold is required")
    hits = np.zeros((NUM_JOINTS, len(thresholds)), dtype=np.int64)
    counts = np.zeros(NUM_JOINTS, dtype=np.int64)
    excluded = 0
    for i in range(preds.shape[0]):
        diag = torso_diagonal(targets[i], target_valid[i])
        if diag is None:
            excluded += 1
            continue
        dist = np.linalg.norm(preds[i] - targets[i], axis=1)
        usable = target_valid[i]
        counts += usable
        for a, alpha in enumerate(thresholds):
            hits[:, a] += usable & (dist <= alpha * diag)
    evaluated = preds.shape[0] - excluded
    if evaluated == 0:
        raise DataError("no frames with a usable torso diagonal")
    with np.errstate(invalid="ignore"):
        per_keypoint = 100.0 * hits / counts[:, None]
    average = np.nanmean(per_keypoint, axis=0)
    return PckReport(thresholds, per_keypoint, counts, average, evaluated, excluded)


def pck_split(preds, targets, mask, target_valid=None, thresholds=DEFAULT_THRESHOLDS):
    """Two PCK reports: frames where ``mask`` is True, then the rest."""
    preds, targets, target_valid = _as_pose_arrays(preds, targets, target_valid)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (preds.shape[0],):
        raise DataError(f"mask shape {mask.shape} must be ({preds.shape[0]},)")
    inside = pck(preds[mask], targets[mask], target_valid[mask], thresholds)
    outside = pck(preds[~mask], targets[~mask], target_valid[~mask], thresholds)
    return inside, outside


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row = true class, column = predicted class."""

    counts: np.ndarray  # (C, C) int64

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def accuracy(self):
        return 100.0 * float(np.trace(self.counts)) / self.total

    def row_percentages(self):
        """Each row as percentages of that row's total (zero rows stay zero)."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = 100.0 * self.counts / sums
        return np.where(sums > 0, out, 0.0)

    def per_class_accuracy(self):
        """Diagonal of row percentages: recall per true class."""
        sums = self.counts.sum(axis=1)
        diag = np.diagonal(self.counts).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = 100.0 * diag / sums
        return np.where(sums > 0, out, np.nan)

    def binary_accuracy(self, positive_class):
        """Accuracy after collapsing to positive-vs-rest."""
        pred_pos = self.counts[:, positive_class].sum()
        true_pos = self.counts[positive_class, :].sum()
        agree = (
            self.counts[positive_class, positive_class]
            + self.total
            - pred_pos
            - true_pos
            + self.counts[positive_class, positive_class]
        )
        return 100.0 * float(agree) / self.total


def confusion(preds, targets, classes=4):
    """Confusion matrix from integer predictions and targets."""
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape or preds.ndim != 1:
        raise DataError(
            f"predictions {preds.shape} and targets {targets.shape} must be equal 1-D"
        )
    if preds.size == 0:
        raise DataError("cannot build a confusion matrix from zero samples")
    for name, arr in (("predictions", preds), ("targets", targets)):
        arr = arr.astype(np.int64)
        if arr.min() < 0 or arr.max() >= classes:
            raise DataError(f"{name} must lie in [0, {classes}), got range "
                            f"[{arr.min()}, {arr.max()}]")
    counts = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(counts, (targets.astype(np.int64), preds.astype(np.int64)), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class SegmentReport:
    """Torso-normalized tracking error of segment centroids."""

    segments: tuple  # ((name, joint indices), ...)
    per_segment: np.ndarray  # (len(segments),) means over frames
    per_frame: np.ndarray  # (frames, len(segments)) with NaN where unusable
    frames: int
    frames_excluded: int


def segment_tracking_error(preds, targets, target_valid=None, segments=DEFAULT_SEGMENTS):
    """Per-frame distance between predicted and true segment centroids.

    A segment's position is the mean of its keypoints; the error is the
    distance between predicted and ground-truth positions divided by the
    frame's torso diagonal. Invalid target joints are left out of both
    centroids; frames without a usable diagonal are excluded and counted.
    """
    preds, targets, target_valid = _as_pose_arrays(preds, targets, target_valid)
    if preds.shape[0] == 0:
        raise DataError("cannot compute segment errors from zero frames")
    for name, joints in segments:
        joints = np.asarray(joints, dtype=np.int64)
        if joints.size == 0 or joints.min() < 0 or joints.max() >= NUM_JOINTS:
            raise DataError(f"segment {name!r} must name joint indices in [0, 17)")
    per_frame = np.full((preds.shape[0], len(segments)), np.nan)
    excluded = 0
    for i in range(preds.shape[0]):
        diag = torso_diagonal(targets[i], target_valid[i])
        if diag is None:
            excluded += 1
            continue
        for s, (_, joints) in enumerate(segments):
            joints = np.asarray(joints, dtype=np.int64)
            usable = joints[target_valid[i][joints]]
            if usable.size == 0:
                continue
            gap = preds[i][usable].mean(axis=0) - targets[i][usable].mean(axis=0)
            per_frame[i, s] = np.linalg.norm(gap) / diag
    if excluded == preds.shape[0]:
        raise DataError("no frames with a usable torso diagonal")
    with np.errstate(invalid="ignore"):
        per_segment = np.nanmean(per_frame, axis=0)
    return SegmentReport(
        tuple(segments), per_segment, per_frame, preds.shape[0] - excluded, excluded
    )


def _fmt(value):
    return "-" if not np.isfinite(value) else f"{value:.1f}"


def format_pck_table(report, title="PCK"):
    """Text table: one row per keypoint plus an average row, one decimal."""
    header = [title.ljust(12)] + [f"@{t:.2f}".rjust(7) for t in report.thresholds]
    lines = ["".join(header)]
    for j, name in enumerate(JOINT_NAMES):
        cells = [_fmt(v).rjust(7) for v in report.per_keypoint[j]]
        lines.append(name.ljust(12) + "".join(cells))
    lines.append("average".ljust(12) + "".join(_fmt(v).rjust(7) for v in report.average))
    lines.append(
        f"frames: {report.frames_evaluated} evaluated, {report.frames_excluded} excluded"
    )
    return "\n".join(lines) + "\n"


def format_pck_pair_table(first_title, first, second_title, second):
    """Side-by-side per-keypoint table for two reports on shared thresholds."""
    if first.thresholds != second.thresholds:
        raise DataError("paired PCK reports must share thresholds")
    head = "".join(f"@{t:.2f}".center(15) for t in first.thresholds)
    sub = "".join(
        first_title[:6].rjust(7) + second_title[:7].rjust(8) for _ in first.thresholds
    )
    lines = ["keypoint".ljust(12) + head, "".ljust(12) + sub]
    for j, name in enumerate(JOINT_NAMES):
        row = name.ljust(12)
        for a in range(len(first.thresholds)):
            row += _fmt(first.per_keypoint[j, a]).rjust(7)
            row += _fmt(second.per_keypoint[j, a]).rjust(8)
        lines.append(row)
    row = "average".ljust(12)
    for a in range(len(first.thresholds)):
        row += _fmt(first.average[a]).rjust(7)
        row += _fmt(second.average[a]).rjust(8)
    lines.append(row)
    return "\n".join(lines) + "\n"


def pck_csv(report):
    """CSV rows ``keypoint,alpha,pck`` plus average rows."""
    lines = ["keypoint,alpha,pck"]
    for j, name in enumerate(JOINT_NAMES):
        for a, t in enumerate(report.thresholds):
            lines.append(f"{name},{t:.2f},{_fmt(report.per_keypoint[j, a])}")
    for a, t in enumerate(report.thresholds):
        lines.append(f"average,{t:.2f},{_fmt(report.average[a])}")
    return "\n".join(lines) + "\n"


def format_confusion(matrix, class_names=ACTION_NAMES, fall_class=3):
    """Counts, row percentages, per-class accuracy and binary fall accuracy."""
    names = list(class_names)
    if matrix.counts.shape[0] != len(names):
        raise DataError(
            f"{len(names)} class names for a {matrix.counts.shape[0]}-class matrix"
        )
    width = max(7, max(len(n) for n in names) + 1)
    lines = ["counts (rows = truth)"]
    lines.append("".ljust(10) + "".join(n.rjust(width) for n in names))
    for i, name in enumerate(names):
        lines.append(name.ljust(10) + "".join(str(c).rjust(width) for c in matrix.counts[i]))
    lines.append("")
    lines.append("row percentages")
    pct = matrix.row_percentages()
    for i, name in enumerate(names):
        lines.append(name.ljust(10) + "".join(_fmt(v).rjust(width) for v in pct[i]))
    lines.append("")
    acc = matrix.per_class_accuracy()
    for i, name in enumerate(names):
        lines.append(f"accuracy[{name}] = {_fmt(acc[i])}")
    lines.append(f"accuracy[overall] = {_fmt(matrix.accuracy)}")
    lines.append(
        f"accuracy[{names[fall_class]} vs rest] = {_fmt(matrix.binary_accuracy(fall_class))}"
    )
    return "\n".join(lines) + "\n"


def confusion_csv(matrix, class_names=ACTION_NAMES):
    """CSV with one row per true class: counts then row percentages."""
    names = list(class_names)
    lines = ["true," + ",".join(f"pred_{n}" for n in names) + ","
             + ",".join(f"pct_{n}" for n in names)]
    pct = matrix.row_percentages()
    for i, name in enumerate(names):
        counts = ",".join(str(c) for c in matrix.counts[i])
        pcts = ",".join(_fmt(v) for v in pct[i])
        lines.append(f"{name},{counts},{pcts}")
    return "\n".join(lines) + "\n"


def format_segments(report):
    """Text list of mean centroid tracking error per segment."""
    lines = ["segment tracking error (fraction of torso diagonal)"]
    for (name, _), value in zip(report.segments, report.per_segment):
        lines.append(f"{name.ljust(10)} {value:.4f}")
    lines.append(f"frames: {report.frames} evaluated, {report.frames_excluded} excluded")
    return "\n".join(lines) + "\n"


def segments_csv(report):
    lines = ["segment,mean_error"]
    for (name, _), value in zip(report.segments, report.per_segment):
        lines.append(f"{name},{value:.6f}")
    return "\n".join(lines) + "\n"
