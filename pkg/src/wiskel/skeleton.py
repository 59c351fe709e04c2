"""Skeleton keypoint handling: normalization, repair, and file formats.

A skeleton is 17 ordered 2D keypoints in normalized [0,1]^2 coordinates with a
per-keypoint validity flag. The fixed joint order is the index into every
keypoint array in this package.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError, DimensionError

__all__ = [
    "JOINT_NAMES",
    "NUM_JOINTS",
    "Skeleton",
    "RepairEvent",
    "normalize_pixels",
    "denormalize",
    "repair",
    "save_skeleton_csv",
    "load_skeleton_csv",
    "save_skeleton_binary",
    "load_skeleton_binary",
    "skeletons_to_array",
    "array_to_skeletons",
    "SkeletonRepairer",
]

JOINT_NAMES = [
    "Nose",
    "Eye R",
    "Eye L",
    "Ear R",
    "Ear L",
    "Shoulder R",
    "Shoulder L",
    "Elbow R",
    "Elbow L",
    "Hand R",
    "Hand L",
    "Pelvis R",
    "Pelvis L",
    "Knee R",
    "Knee L",
    "Foot R",
    "Foot L",
]
NUM_JOINTS = len(JOINT_NAMES)

_SKEL_MAGIC = b"CSKS"
_SKEL_VERSION = 1


@dataclass
class Skeleton:
    keypoints: np.ndarray  # (17, 2) float64, normalized
    valid: np.ndarray  # (17,) bool
    frame_index: int = 0

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.keypoints.shape != (NUM_JOINTS, 2):
            raise DimensionError(
                f"skeleton expects ({NUM_JOINTS}, 2) keypoints, got {self.keypoints.shape}"
            )
        if self.valid.shape != (NUM_JOINTS,):
            raise DimensionError(
                f"skeleton expects ({NUM_JOINTS},) validity flags, got {self.valid.shape}"
            )


@dataclass
class RepairEvent:
    frame: int
    joint: int
    reason: str  # "missing" | "displaced" | "no-history"
    repaired: bool = True


def normalize_pixels(pixel_keypoints, image_w, image_h, valid=None, frame_index=0):
    """Pixel coordinates -> unit square: x/image_w, y/image_h.

    Points landing outside [0,1]^2 are clamped and flagged invalid so the
    repair stage can treat them as missing.
    """
    if image_w <= 0 or image_h <= 0:
        raise DataError(
            f"image dimensions must be positive, got {image_w} x {image_h}"
        )
    pixels = np.asarray(pixel_keypoints, dtype=np.float64)
    if pixels.shape != (NUM_JOINTS, 2):
        raise DimensionError(
            f"expected ({NUM_JOINTS}, 2) pixel keypoints, got {pixels.shape}"
        )
    normalized = pixels / np.array([image_w, image_h], dtype=np.float64)
    in_frame = ((normalized >= 0.0) & (normalized <= 1.0)).all(axis=1)
    if valid is None:
        valid = np.ones(NUM_JOINTS, dtype=bool)
    valid = np.asarray(valid, dtype=bool) & in_frame
    return Skeleton(np.clip(normalized, 0.0, 1.0), valid, frame_index)


def denormalize(skeleton, image_w, image_h):
    """Inverse of :func:`normalize_pixels` for in-frame points."""
    if image_w <= 0 or image_h <= 0:
        raise DataError(
            f"image dimensions must be positive, got {image_w} x {image_h}"
        )
    return skeleton.keypoints * np.array([image_w, image_h], dtype=np.float64)


def repair(skeletons, tau=0.15):
    """Fill missing keypoints and replace implausible jumps by extrapolation.

    For frame t >= 2, a keypoint is repaired when it is missing or when its
    displacement from the (already repaired) previous frame exceeds ``tau``.
    The replacement extrapolates the last step: k = k[t-1] + (k[t-1] - k[t-2]),
    clamped to [0,1]^2. The first two frames pass through unrepaired; missing
    keypoints there are flagged as unrepairable in the log.

    Returns ``(repaired_list, events)``. Input skeletons are not mutated.
    """
    if tau <= 0:
        raise DataError(f"displacement threshold must be positive, got {tau}")
    repaired = []
    events = []
    for t, skel in enumerate(skeletons):
        kps = skel.keypoints.copy()
        valid = skel.valid.copy()
        if t < 2:
            for j in range(NUM_JOINTS):
                if not valid[j]:
                    events.append(RepairEvent(skel.frame_index, j, "no-history", False))
            repaired.append(Skeleton(kps, valid, skel.frame_index))
            continue
        prev1 = repaired[t - 1]
        prev2 = repaired[t - 2]
        for j in range(NUM_JOINTS):
            missing = not valid[j]
            displaced = (
                not missing
                and prev1.valid[j]
                and np.linalg.norm(kps[j] - prev1.keypoints[j]) > tau
            )
            if not (missing or displaced):
                continue
            reason = "missing" if missing else "displaced"
            if prev1.valid[j] and prev2.valid[j]:
                estimate = 2.0 * prev1.keypoints[j] - prev2.keypoints[j]
            elif prev1.valid[j]:
                estimate = prev1.keypoints[j]
            else:
                events.append(RepairEvent(skel.frame_index, j, "no-history", False))
                continue
            kps[j] = np.clip(estimate, 0.0, 1.0)
            valid[j] = True
            events.append(RepairEvent(skel.frame_index, j, reason))
        repaired.append(Skeleton(kps, valid, skel.frame_index))
    return repaired, events


# -- array conversion -----------------------------------------------------------

def skeletons_to_array(skeletons):
    """Skeleton list -> ((N,17,2) keypoints, (N,17) valid, (N,) frame indices)."""
    n = len(skeletons)
    kps = np.zeros((n, NUM_JOINTS, 2))
    valid = np.zeros((n, NUM_JOINTS), dtype=bool)
    frames = np.zeros(n, dtype=np.int64)
    for i, s in enumerate(skeletons):
        kps[i] = s.keypoints
        valid[i] = s.valid
        frames[i] = s.frame_index
    return kps, valid, frames


def array_to_skeletons(keypoints, valid=None, frames=None):
    keypoints = np.asarray(keypoints, dtype=np.float64)
    if keypoints.ndim != 3 or keypoints.shape[1:] != (NUM_JOINTS, 2):
        raise DimensionError(
            f"expected (N, {NUM_JOINTS}, 2) keypoints, got {keypoints.shape}"
        )
    n = keypoints.shape[0]
    if valid is None:
        valid = ~np.isnan(keypoints).any(axis=2)
    if frames is None:
        frames = np.arange(n)
    return [
        Skeleton(np.nan_to_num(keypoints[i]), valid[i], int(frames[i]))
        for i in range(n)
    ]


# -- file formats -------------------------------------------------------------------

def save_skeleton_csv(path, skeletons):
    """CSV rows ``frame,joint_index,x,y,valid``; invalid joints keep x=y=0."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "joint_index", "x", "y", "valid"])
        for s in skeletons:
            for j in range(NUM_JOINTS):
                writer.writerow(
                    [
                        s.frame_index,
                        j,
                        format(s.keypoints[j, 0], ".17g"),
                        format(s.keypoints[j, 1], ".17g"),
                        int(s.valid[j]),
                    ]
                )


def load_skeleton_csv(path):
    by_frame = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "joint_index", "x", "y", "valid"]:
            raise DataError(
                f"bad skeleton CSV header in {path}: expected "
                "'frame,joint_index,x,y,valid'"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(f"skeleton CSV row {lineno} in {path} has {len(row)} fields")
            frame, joint = int(row[0]), int(row[1])
            if not 0 <= joint < NUM_JOINTS:
                raise DataError(f"skeleton CSV row {lineno}: joint {joint} out of range")
            entry = by_frame.setdefault(
                frame, (np.zeros((NUM_JOINTS, 2)), np.zeros(NUM_JOINTS, dtype=bool))
            )
            entry[0][joint] = (float(row[2]), float(row[3]))
            entry[1][joint] = bool(int(row[4]))
    return [
        Skeleton(kps, valid, frame) for frame, (kps, valid) in sorted(by_frame.items())
    ]


def save_skeleton_binary(path, skeletons):
    """Binary block: magic "CSKS", version u16 LE, count u32 LE, then per frame
    frame_index u32 LE, 17 x (x f64 LE, y f64 LE, valid u8)."""
    chunks = [_SKEL_MAGIC, struct.pack("<HI", _SKEL_VERSION, len(skeletons))]
    for s in skeletons:
        chunks.append(struct.pack("<I", s.frame_index))
        for j in range(NUM_JOINTS):
            chunks.append(
                struct.pack(
                    "<ddB", s.keypoints[j, 0], s.keypoints[j, 1], int(s.valid[j])
                )
            )
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_skeleton_binary(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != _SKEL_MAGIC:
        raise DataError(f"not a skeleton binary block: {path}")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != _SKEL_VERSION:
        raise DataError(f"unsupported skeleton block version {version} in {path}")
    offset = 10
    frame_size = 4 + NUM_JOINTS * 17
    if len(blob) - offset != count * frame_size:
        raise DataError(f"skeleton block size mismatch in {path}")
    skeletons = []
    for _ in range(count):
        (frame,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        kps = np.zeros((NUM_JOINTS, 2))
        valid = np.zeros(NUM_JOINTS, dtype=bool)
        for j in range(NUM_JOINTS):
            x, y, flag = struct.unpack_from("<ddB", blob, offset)
            offset += 17
            kps[j] = (x, y)
            valid[j] = bool(flag)
        skeletons.append(Skeleton(kps, valid, frame))
    return skeletons


class SkeletonRepairer(BaseEstimator, TransformerMixin):
    """Stateless sklearn-style transformer wrapping :func:`repair`.

    Accepts (N, 17, 2) keypoint arrays where NaN marks a missing coordinate,
    or (N, 34) flattened rows. ``transform`` returns the repaired array in the
    input layout; repair events from the last transform are kept on
    ``events_`` for inspection.
    """

    def __init__(self, tau=0.15):
        self.tau = tau

    def fit(self, X, y=None):
        self._validate(X)
        return self

    def _validate(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2 and X.shape[1] == NUM_JOINTS * 2:
            return X.reshape(X.shape[0], NUM_JOINTS, 2), True
        if X.ndim == 3 and X.shape[1:] == (NUM_JOINTS, 2):
            return X, False
        raise DimensionError(
            f"expected (N, {NUM_JOINTS}, 2) or (N, {NUM_JOINTS * 2}) keypoints, "
            f"got {X.shape}"
        )

    def transform(self, X):
        arr, flat = self._validate(X)
        repaired, events = repair(array_to_skeletons(arr), tau=self.tau)
        self.events_ = events
        out, _, _ = skeletons_to_array(repaired)
        return out.reshape(arr.shape[0], -1) if flat else out
