"""Synthetic ground truth: kinematic motion scripts and a seeded skeleton-to-CSI
forward model.

The forward model is a smooth seeded random projection, NOT a propagation
simulation: it exists so the full ingest/train/eval pipeline can run and
overfit at desk scale. Metrics computed on this data validate the pipeline,
not any real-world sensing performance.

Actions: stand, walk, squat, and two fall scripts (backward out of a walk,
sideways out of a squat). Fall scripts spend the first half of their duration
in the base action and the second half falling; labels follow the 4-class
mapping (0 stand, 1 walk, 2 squat, 3 fall) with both falls sharing class 3.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .ingest import SUBCARRIERS, encode_records
from .skeleton import NUM_JOINTS, Skeleton, save_skeleton_binary, save_skeleton_csv

__all__ = [
    "ACTIONS",
    "FALL_ACTIONS",
    "BASE_POSE",
    "action_class",
    "generate_motion",
    "CsiForwardModel",
    "skeleton_to_csi",
    "SynthSpec",
    "write_session",
    "make_dataset",
]

ACTIONS = [
    "stand",
    "walk",
    "squat",
    "fall_backward_from_walk",
    "fall_sideways_from_squat",
]
FALL_ACTIONS = {
    "fall_backward_from_walk": ("walk", -1.0),
    "fall_sideways_from_squat": ("squat", 1.0),
}
START_POSITIONS = {"center": 0.5, "left": 0.35}

# Upright template: x offsets from the body center line, y in image coordinates
# (0 top). Cross-torso diagonal (Shoulder L to Pelvis R) is about 0.24.
BASE_POSE = np.array(
    [
        (0.000, 0.300),  # Nose
        (-0.020, 0.285),  # Eye R
        (0.020, 0.285),  # Eye L
        (-0.040, 0.295),  # Ear R
        (0.040, 0.295),  # Ear L
        (-0.070, 0.370),  # Shoulder R
        (0.070, 0.370),  # Shoulder L
        (-0.095, 0.455),  # Elbow R
        (0.095, 0.455),  # Elbow L
        (-0.105, 0.540),  # Hand R
        (0.105, 0.540),  # Hand L
        (-0.045, 0.580),  # Pelvis R
        (0.045, 0.580),  # Pelvis L
        (-0.050, 0.720),  # Knee R
        (0.050, 0.720),  # Knee L
        (-0.055, 0.860),  # Foot R
        (0.055, 0.860),  # Foot L
    ]
)

_UPPER_BODY = np.arange(0, 13)  # head through pelvis sink together in a squat
_ARMS = np.array([7, 8, 9, 10])
_LEGS_KNEE = np.array([13, 14])
_LEGS_FOOT = np.array([15, 16])
_RIGHT_LIMBS = np.array([7, 9, 13, 15])
_LEFT_LIMBS = np.array([8, 10, 14, 16])


def action_class(action, in_fall_phase=False):
    """4-class label for a frame of ``action``."""
    if action == "stand":
        return 0
    if action == "walk":
        return 1
    if action == "squat":
        return 2
    if action in FALL_ACTIONS:
        if in_fall_phase:
            return 3
        base, _ = FALL_ACTIONS[action]
        return action_class(base)
    raise DataError(f"unknown action {action!r} (known: {', '.join(ACTIONS)})")


def _base_pose_at(action, t, cx):
    """Template pose of a non-fall action at time ``t`` seconds."""
    pose = BASE_POSE.copy()
    pose[:, 0] += cx
    if action == "stand":
        pose[:, 0] += 0.002 * np.sin(2.0 * np.pi * 0.3 * t)
    elif action == "walk":
        pose[:, 0] += 0.10 * np.sin(2.0 * np.pi * 0.25 * t)
        swing = 0.030 * np.sin(2.0 * np.pi * 1.0 * t)
        pose[_RIGHT_LIMBS, 0] += swing
        pose[_LEFT_LIMBS, 0] -= swing
        pose[:, 1] += 0.008 * np.sin(2.0 * np.pi * 2.0 * t)
        lift = 0.012 * np.sin(2.0 * np.pi * 1.0 * t)
        pose[15, 1] -= max(0.0, lift)
        pose[16, 1] -= max(0.0, -lift)
    elif action == "squat":
        depth = 0.5 * (1.0 - np.cos(2.0 * np.pi * 0.25 * t))
        pose[_UPPER_BODY, 1] += 0.12 * depth
        pose[_LEGS_KNEE, 1] += 0.05 * depth
        pose[13, 0] -= 0.030 * depth
        pose[14, 0] += 0.030 * depth
        pose[_ARMS, 1] -= 0.05 * depth  # arms raise forward for balance
        pose[0:7, 0] += 0.010 * depth
    else:
        raise DataError(f"unknown base action {action!r}")
    return pose


def _rotate_about(pose, pivot, angle):
    offsets = pose - pivot
    c, s = np.cos(angle), np.sin(angle)
    rotated = np.empty_like(offsets)
    rotated[:, 0] = offsets[:, 0] * c - offsets[:, 1] * s
    rotated[:, 1] = offsets[:, 0] * s + offsets[:, 1] * c
    return pivot + rotated


def generate_motion(action, duration_s=30.0, start="center", seed=0, fps=30):
    """Deterministic labeled motion: ``(keypoints (N,17,2), labels (N,))``.

    Fall scripts run their base action for the first half of the duration and
    fall during the second half (rotation about the pelvis midpoint with a
    simultaneous drop), settling flat before the end.
    """
    if start not in START_POSITIONS:
        raise DataError(
            f"unknown start position {start!r} (known: {', '.join(START_POSITIONS)})"
        )
    if duration_s <= 0:
        raise DataError(f"duration must be positive, got {duration_s}")
    cx = START_POSITIONS[start]
    n = int(round(duration_s * fps))
    rng = np.random.Generator(np.random.PCG64(seed))
    # Smooth per-joint wander: low-frequency seeded harmonics, ~1e-3 amplitude.
    amp = rng.uniform(0.0005, 0.0015, (NUM_JOINTS, 2))
    freq = rng.uniform(0.2, 0.8, (NUM_JOINTS, 2))
    phase = rng.uniform(0.0, 2.0 * np.pi, (NUM_JOINTS, 2))

    is_fall = action in FALL_ACTIONS
    base_action = FALL_ACTIONS[action][0] if is_fall else action
    direction = FALL_ACTIONS[action][1] if is_fall else 0.0
    t_fall = duration_s / 2.0
    fall_span = duration_s - t_fall
    frozen = None

    keypoints = np.empty((n, NUM_JOINTS, 2))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        t = i / fps
        if not is_fall or t < t_fall:
            pose = _base_pose_at(base_action, t, cx)
            labels[i] = action_class(base_action)
        else:
            if frozen is None:
                frozen = _base_pose_at(base_action, t_fall, cx)
            progress = (t - t_fall) / fall_span
            ease = min(1.0, (progress / 0.8) ** 2)
            pivot = frozen[[11, 12]].mean(axis=0)
            pose = _rotate_about(frozen, pivot, direction * (np.pi / 2.0) * ease)
            pose[:, 1] += 0.22 * ease
            labels[i] = 3
        pose = pose + amp * np.sin(2.0 * np.pi * freq * t + phase)
        keypoints[i] = np.clip(pose, 0.01, 0.99)
    return keypoints, labels


class CsiForwardModel:
    """Seeded smooth map from skeleton state to per-receiver CSI amplitudes.

    Per frame the input feature is [keypoints centered on 0.5 (34 values),
    inter-frame velocity x 10 (34 values)]. Each receiver applies a fixed
    random projection followed by a tanh squash into the 8-bit amplitude
    range; sub-frame samples interpolate the feature vector so a 30 Hz
    skeleton stream yields a smooth 300 Hz record stream.
    """

    FEATURES = NUM_JOINTS * 2 * 2

    def __init__(self, seed=7, receivers=3, noise_sigma=0.5, samples_per_frame=10):
        if receivers < 1:
            raise DataError(f"receivers must be >= 1, got {receivers}")
        self.seed = int(seed)
        self.receivers = int(receivers)
        self.noise_sigma = float(noise_sigma)
        self.samples_per_frame = int(samples_per_frame)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        gain = 8.0
        self.weights = rng.normal(
            0.0, gain / np.sqrt(self.FEATURES), (self.receivers, SUBCARRIERS, self.FEATURES)
        )
        self.biases = rng.uniform(-0.5, 0.5, (self.receivers, SUBCARRIERS))

    def features(self, keypoints):
        """(N, 17, 2) -> (N, 68) [centered coordinates, scaled velocities]."""
        kp = np.asarray(keypoints, dtype=np.float64)
        flat = kp.reshape(kp.shape[0], -1) - 0.5
        velocity = np.zeros_like(flat)
        if flat.shape[0] > 1:
            velocity[1:] = flat[1:] - flat[:-1]
        return np.concatenate([flat, 10.0 * velocity], axis=1)

    def amplitudes(self, keypoints):
        """(N, 17, 2) skeletons -> (receivers, N*samples_per_frame, 114) uint8.

        Sub-sample j of frame t interpolates the feature vector at fraction
        (j+1)/samples_per_frame between frames t-1 and t, so the last
        sub-sample lands exactly on frame t. Noise is regenerated from the
        model seed on every call, keeping repeated calls bit-identical.
        """
        phi = self.features(keypoints)
        n, spf = phi.shape[0], self.samples_per_frame
        prev = np.vstack([phi[:1], phi[:-1]])
        fractions = (np.arange(spf, dtype=np.float64) + 1.0) / spf
        # (N, spf, F) interpolated features, flattened to (N*spf, F)
        sub = prev[:, None, :] + fractions[None, :, None] * (phi - prev)[:, None, :]
        sub = sub.reshape(n * spf, self.FEATURES)
        z = np.einsum("rsf,tf->rts", self.weights, sub) + self.biases[:, None, :]
        amp = 127.5 + 100.0 * np.tanh(z)
        if self.noise_sigma > 0.0:
            noise_rng = np.random.Generator(np.random.PCG64(self.seed + 1))
            amp = amp + self.noise_sigma * noise_rng.standard_normal(amp.shape)
        return np.clip(np.rint(amp), 0.0, 255.0).astype(np.uint8)


def skeleton_to_csi(keypoints, model, start_seq=0):
    """Expand a 30 Hz skeleton sequence into per-receiver record streams.

    Returns a list of ``(seqs, amplitudes)`` pairs, one per receiver, with
    ``seq = start_seq + frame * samples_per_frame + sub_sample``.
    """
    amps = model.amplitudes(keypoints)
    total = amps.shape[1]
    seqs = np.arange(start_seq, start_seq + total, dtype=np.uint64)
    return [(seqs.copy(), amps[r]) for r in range(model.receivers)]


@dataclass(frozen=True)
class SynthSpec:
    actions: tuple = tuple(ACTIONS)
    duration_s: float = 30.0
    fall_repetitions: int = 5
    subjects: int = 1
    start: str = "center"
    noise_sigma: float = 0.5
    seed: int = 0
    csi_seed: int = 7
    fps: int = 30
    samples_per_frame: int = 10
    receivers: int = 3
    train_fraction: float = 0.8


def _manifest_lines(**fields):
    return "".join(f"{key} = {fields[key]}\n" for key in sorted(fields))


def write_session(directory, keypoints, labels, model, manifest_fields):
    """Write one session container: session.csis, skeleton.csv, skeleton.bin,
    labels.csv, manifest. Record streams are interleaved receiver-major per
    sample, matching a round-robin gather from the receivers."""
    os.makedirs(directory, exist_ok=False)
    streams = skeleton_to_csi(keypoints, model)
    total = streams[0][0].shape[0]
    receivers = len(streams)
    receiver_ids = np.tile(np.arange(receivers, dtype=np.uint64), total)
    seqs = np.repeat(streams[0][0], receivers)
    amplitudes = np.stack([s[1] for s in streams], axis=1).reshape(-1, SUBCARRIERS)
    blob = encode_records(receiver_ids, seqs, amplitudes)
    with open(os.path.join(directory, "session.csis"), "wb") as fh:
        fh.write(blob)

    skeletons = [
        Skeleton(keypoints[i], np.ones(NUM_JOINTS, dtype=bool), i)
        for i in range(keypoints.shape[0])
    ]
    save_skeleton_csv(os.path.join(directory, "skeleton.csv"), skeletons)
    save_skeleton_binary(os.path.join(directory, "skeleton.bin"), skeletons)
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as fh:
        fh.write("frame,class_id\n")
        for i, label in enumerate(labels):
            fh.write(f"{i},{int(label)}\n")
    fields = dict(manifest_fields)
    fields["frames"] = keypoints.shape[0]
    fields["records"] = total * receivers
    with open(os.path.join(directory, "manifest"), "w") as fh:
        fh.write(_manifest_lines(**fields))


def make_dataset(out_dir, spec=None):
    """Generate the train/test session tree under ``out_dir``.

    Non-fall actions produce one continuous motion per subject, split by
    duration into the leading train fraction and trailing test fraction; each
    split is written as a self-contained session with sequence numbers from 0.
    Fall actions produce ``fall_repetitions`` independent recordings; the last
    repetition is the test one.

    Returns a list of (relative_path, split, action, frames) rows.
    """
    spec = spec or SynthSpec()
    out_dir = str(out_dir)
    for sub in ("train", "test"):
        path = os.path.join(out_dir, sub)
        if os.path.exists(path):
            raise DataError(f"output path already exists: {path}")
    model = CsiForwardModel(
        seed=spec.csi_seed,
        receivers=spec.receivers,
        noise_sigma=spec.noise_sigma,
        samples_per_frame=spec.samples_per_frame,
    )
    sessions = []

    def emit(split, name, keypoints, labels, action, seed):
        rel = os.path.join(split, name)
        write_session(
            os.path.join(out_dir, rel),
            keypoints,
            labels,
            model,
            {
                "action": action,
                "split": split,
                "seed": seed,
                "start": spec.start,
                "duration_s": round(keypoints.shape[0] / spec.fps, 6),
                "fps": spec.fps,
                "receivers": spec.receivers,
                "noise_sigma": spec.noise_sigma,
            },
        )
        sessions.append((rel, split, action, keypoints.shape[0]))

    for subject in range(spec.subjects):
        for a, action in enumerate(spec.actions):
            if action in FALL_ACTIONS:
                # Falls are short events: 10 s (hold-then-fall), or less when the
                # whole dataset is scaled down.
                fall_duration = min(10.0, spec.duration_s)
                for rep in range(1, spec.fall_repetitions + 1):
                    seed = spec.seed + 1009 * subject + 101 * a + rep
                    keypoints, labels = generate_motion(
                        action, fall_duration, spec.start, seed, spec.fps
                    )
                    split = "test" if rep == spec.fall_repetitions else "train"
                    emit(split, f"{action}_sub{subject}_rep{rep}", keypoints, labels, action, seed)
            else:
                seed = spec.seed + 1009 * subject + 101 * a
                keypoints, labels = generate_motion(
                    action, spec.duration_s, spec.start, seed, spec.fps
                )
                cut = int(round(keypoints.shape[0] * spec.train_fraction))
                if cut == 0 or cut == keypoints.shape[0]:
                    raise DataError(
                        f"duration {spec.duration_s}s is too short for a "
                        f"{spec.train_fraction:.0%} split"
                    )
                emit("train", f"{action}_sub{subject}", keypoints[:cut], labels[:cut], action, seed)
                emit("test", f"{action}_sub{subject}", keypoints[cut:], labels[cut:], action, seed)

    index = "".join(
        f"{rel},{split},{action},{frames}\n" for rel, split, action, frames in sessions
    )
    with open(os.path.join(out_dir, "sessions.csv"), "w") as fh:
        fh.write("session,split,action,frames\n" + index)
    return sessions
