"""Command line interface.

Subcommands cover the full pipeline: ``synth`` writes a labeled dataset,
``ingest`` aligns raw record streams into window tensors, ``train-pose`` /
``train-action`` fit the two models, ``eval-pose`` / ``eval-action`` score
them, ``infer`` runs CSI through pose estimation, repair and action
classification, and ``audit-params`` prints the parameter budget table.

Exit codes: 0 success, 2 configuration or usage errors, 3 data and checkpoint
errors, 4 model audit mismatches. Output files contain no timestamps, so a
rerun with the same inputs and seeds is byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import Config
from .dgnn import (
    ACTION_NAMES,
    Dgnn,
    DgnnConfig,
    make_action_windows,
    train_action,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateBatchError,
    DimensionError,
    ModelAuditError,
    RecordFormatError,
    StreamCorruptionError,
    TrainingDivergedError,
)
from .ingest import ingest_session, windows_to_array
from .metrics import (
    confusion,
    confusion_csv,
    format_confusion,
    format_pck_pair_table,
    format_pck_table,
    format_segments,
    pck,
    pck_csv,
    pck_split,
    segment_tracking_error,
    segments_csv,
)
from .nn.checkpoint import load_state as load_checkpoint
from .skeleton import Skeleton, load_skeleton_csv, repair, save_skeleton_csv
from .synth import SynthSpec, make_dataset
from .tednet import TedNet, TedNetConfig, infer_sequence, train_pose

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_AUDIT = 4

_DATA_ERRORS = (
    DataError,
    RecordFormatError,
    StreamCorruptionError,
    CheckpointError,
    DimensionError,
    DegenerateBatchError,
    TrainingDivergedError,
    OSError,
)


# -- shared plumbing ----------------------------------------------------------
def _build_config(args):
    cfg = Config()
    if getattr(args, "config", None):
        cfg.load_file(args.config)
    cfg.apply_overrides(getattr(args, "set", []) or [])
    seed_key = getattr(args, "_seed_key", None)
    if seed_key and getattr(args, "seed", None) is not None:
        cfg.set(seed_key, str(args.seed))
    epochs_key = getattr(args, "_epochs_key", None)
    if epochs_key and getattr(args, "epochs", None) is not None:
        cfg.set(epochs_key, str(args.epochs))
    return cfg


def _ensure_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _echo_config(cfg, out_dir):
    _write(os.path.join(out_dir, "config.echo"), cfg.echo())


def _session_dirs(root, split):
    base = os.path.join(root, split)
    if not os.path.isdir(base):
        raise DataError(f"no {split!r} split directory under {root}")
    found = sorted(
        name
        for name in os.listdir(base)
        if os.path.isfile(os.path.join(base, name, "session.csis"))
    )
    if not found:
        raise DataError(f"no sessions with a session.csis under {base}")
    return [os.path.join(base, name) for name in found]


def _load_labels(session_dir):
    path = os.path.join(session_dir, "labels.csv")
    labels = {}
    with open(path, "r") as fh:
        header = fh.readline().strip()
        if header != "frame,class_id":
            raise DataError(f"{path}: expected header 'frame,class_id', got {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            frame, _, cls = line.partition(",")
            labels[int(frame)] = int(cls)
    return labels


def _ingest_dir(session_dir, cfg):
    return ingest_session(
        os.path.join(session_dir, "session.csis"),
        w=cfg["ingest.window"],
        hop=cfg["ingest.hop"],
        wrap_window=cfg["ingest.wrap_window"],
    )


def _window_frames(windows, cfg):
    # A window's skeleton frame: samples_per_frame record seqs map to frame f,
    # so the window ending at seq s belongs to frame s // samples_per_frame.
    spf = cfg["ingest.window"]
    return [int(wd.seqs[-1]) // spf for wd in windows]


def _pose_dataset(root, split, cfg):
    """All CSI windows of a split with their ground-truth skeleton targets."""
    xs, ys = [], []
    for session_dir in _session_dirs(root, split):
        windows, _ = _ingest_dir(session_dir, cfg)
        skeletons = load_skeleton_csv(os.path.join(session_dir, "skeleton.csv"))
        by_frame = {s.frame_index: s for s in skeletons}
        for wd, frame in zip(windows, _window_frames(windows, cfg)):
            target = by_frame.get(frame)
            if target is None:
                continue
            xs.append(wd.tensors)
            ys.append(target.keypoints)
    if not xs:
        raise DataError(f"no usable training windows under {root}/{split}")
    return np.stack(xs), np.stack(ys)


def _pose_config(cfg, receivers):
    return TedNetConfig(
        receivers=receivers,
        window=cfg["ingest.window"],
        share_encoder_weights=cfg["pose.share_encoder_weights"],
        positional_encoding=cfg["pose.positional_encoding"],
        ff_width=cfg["pose.ff_width"],
        dropout=cfg["pose.dropout"],
        seed=cfg["pose.seed"],
    )


def _action_config(cfg):
    return DgnnConfig(
        dropout=cfg["action.dropout"],
        temporal_edge_mode=cfg["action.temporal_edge_mode"],
        window=cfg["action.window"],
        seed=cfg["action.seed"],
    )


def _load_pose_model(cfg, ckpt_path, receivers):
    model = TedNet(_pose_config(cfg, receivers))
    model.store.load_state(load_checkpoint(ckpt_path))
    return model


def _load_action_model(cfg, ckpt_path):
    model = Dgnn(_action_config(cfg))
    model.store.load_state(load_checkpoint(ckpt_path))
    return model


def _predict_batched(fn, inputs, batch=256):
    parts = [fn(inputs[i : i + batch]) for i in range(0, inputs.shape[0], batch)]
    return np.concatenate(parts)


def _predicted_skeleton_sequence(session_dir, cfg, pose_model):
    """CSI of one session -> (keypoints (N,17,2), frames) via the pose model."""
    windows, _ = _ingest_dir(session_dir, cfg)
    if not windows:
        raise DataError(f"no complete windows in {session_dir}")
    stacked = windows_to_array(windows)
    preds = _predict_batched(pose_model.predict, stacked)
    return np.clip(preds, 0.0, 1.0), _window_frames(windows, cfg)


def _action_sequence(session_dir, cfg, source, pose_model):
    """A session's skeleton frame sequence plus aligned labels."""
    labels_by_frame = _load_labels(session_dir)
    if source == "rgb":
        skeletons = load_skeleton_csv(os.path.join(session_dir, "skeleton.csv"))
        skeletons.sort(key=lambda s: s.frame_index)
        keypoints = np.stack([s.keypoints for s in skeletons])
        frames = [s.frame_index for s in skeletons]
    else:
        keypoints, frames = _predicted_skeleton_sequence(session_dir, cfg, pose_model)
    try:
        labels = np.array([labels_by_frame[f] for f in frames], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{session_dir}: no label for frame {exc.args[0]}") from None
    return keypoints, labels


def _action_dataset(root, split, cfg, source, pose_model):
    xs, ys = [], []
    for session_dir in _session_dirs(root, split):
        keypoints, labels = _action_sequence(session_dir, cfg, source, pose_model)
        X, y, _ = make_action_windows(
            keypoints, labels, window=cfg["action.window"], stride=1
        )
        if X.shape[0]:
            xs.append(X)
            ys.append(y)
    if not xs:
        raise DataError(
            f"no action windows under {root}/{split}; sessions shorter than "
            f"action.window={cfg['action.window']} frames produce none"
        )
    return np.concatenate(xs), np.concatenate(ys)


# -- subcommands ----------------------------------------------------------------
def cmd_synth(args):
    cfg = _build_config(args)
    spec = SynthSpec(
        duration_s=cfg["synth.duration_s"],
        fall_repetitions=cfg["synth.fall_repetitions"],
        subjects=cfg["synth.subjects"],
        start=cfg["synth.start"],
        noise_sigma=cfg["synth.noise_sigma"],
        seed=cfg["synth.seed"],
        csi_seed=cfg["synth.csi_seed"],
        receivers=cfg["synth.receivers"],
    )
    sessions = make_dataset(args.out, spec)
    _echo_config(cfg, args.out)
    for rel, split, action, frames in sessions:
        print(f"{rel}: {action}, {frames} frames [{split}]")
    total = sum(frames for _, _, _, frames in sessions)
    print(f"wrote {len(sessions)} sessions, {total} frames, to {args.out}")
    return EXIT_OK


def cmd_ingest(args):
    cfg = _build_config(args)
    windows, stats = ingest_session(
        args.input,
        w=cfg["ingest.window"],
        hop=cfg["ingest.hop"],
        wrap_window=cfg["ingest.wrap_window"],
    )
    print(stats.summary())
    print(f"windows={len(windows)}")
    if args.out:
        out = _ensure_out(args.out)
        np.save(os.path.join(out, "windows.npy"), windows_to_array(windows))
        lines = ["window,frame,first_seq,last_seq"]
        for wd, frame in zip(windows, _window_frames(windows, cfg)):
            lines.append(f"{wd.frame_index},{frame},{int(wd.seqs[0])},{int(wd.seqs[-1])}")
        _write(os.path.join(out, "windows.csv"), "\n".join(lines) + "\n")
        _write(os.path.join(out, "sync_stats.txt"), stats.summary() + "\n")
        _echo_config(cfg, out)
    return EXIT_OK


def cmd_train_pose(args):
    cfg = _build_config(args)
    out = _ensure_out(args.out)
    x_train, y_train = _pose_dataset(args.data, "train", cfg)
    x_val = y_val = None
    if os.path.isdir(os.path.join(args.data, "test")):
        x_val, y_val = _pose_dataset(args.data, "test", cfg)
    model = TedNet(_pose_config(cfg, x_train.shape[1]))
    ckpt = os.path.join(out, "pose.ckpt")
    rows = train_pose(
        model,
        x_train,
        y_train,
        epochs=cfg["pose.epochs"],
        lr=cfg["pose.lr"],
        batch_size=cfg["pose.batch_size"],
        seed=cfg["pose.seed"],
        val_inputs=x_val,
        val_targets=y_val,
        checkpoint_path=ckpt,
    )
    lines = ["epoch,split,mse"] + [f"{e},{s},{m:.17g}" for e, s, m in rows]
    _write(os.path.join(out, "train_log.csv"), "\n".join(lines) + "\n")
    _echo_config(cfg, out)
    print(f"trained on {x_train.shape[0]} windows for {cfg['pose.epochs']} epochs")
    print(f"final {rows[-1][1]} mse {rows[-1][2]:.6g}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_train_action(args):
    cfg = _build_config(args)
    if args.skeleton_source:
        cfg.set("action.skeleton_source", args.skeleton_source)
    source = cfg["action.skeleton_source"]
    out = _ensure_out(args.out)
    pose_model = None
    if source == "csi":
        if not args.pose_ckpt:
            raise ConfigError("--pose-ckpt is required with skeleton source 'csi'")
        pose_model = _load_pose_model(cfg, args.pose_ckpt, cfg["synth.receivers"])
    x_train, y_train = _action_dataset(args.data, "train", cfg, source, pose_model)
    x_val = y_val = None
    if os.path.isdir(os.path.join(args.data, "test")):
        x_val, y_val = _action_dataset(args.data, "test", cfg, source, pose_model)
    model = Dgnn(_action_config(cfg))
    ckpt = os.path.join(out, "action.ckpt")
    rows = train_action(
        model,
        x_train,
        y_train,
        epochs=cfg["action.epochs"],
        lr=cfg["action.lr"],
        batch_size=cfg["action.batch_size"],
        seed=cfg["action.seed"],
        val_inputs=x_val,
        val_labels=y_val,
        checkpoint_path=ckpt,
    )
    lines = ["epoch,split,loss,accuracy"]
    for e, s, loss, acc in rows:
        loss_text = "" if np.isnan(loss) else f"{loss:.17g}"
        lines.append(f"{e},{s},{loss_text},{acc:.17g}")
    _write(os.path.join(out, "train_log.csv"), "\n".join(lines) + "\n")
    _echo_config(cfg, out)
    print(
        f"trained on {x_train.shape[0]} windows ({source} skeletons) "
        f"for {cfg['action.epochs']} epochs"
    )
    print(f"final {rows[-1][1]} accuracy {100.0 * rows[-1][3]:.1f}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def cmd_eval_pose(args):
    cfg = _build_config(args)
    out = _ensure_out(args.out)
    pose_model = None
    preds, gts, valids, falls = [], [], [], []
    for session_dir in _session_dirs(args.data, args.split):
        windows, _ = _ingest_dir(session_dir, cfg)
        if not windows:
            continue
        if pose_model is None:
            receivers = windows[0].tensors.shape[0]
            pose_model = _load_pose_model(cfg, args.ckpt, receivers)
        skeletons = load_skeleton_csv(os.path.join(session_dir, "skeleton.csv"))
        by_frame = {s.frame_index: s for s in skeletons}
        labels = _load_labels(session_dir)
        kept, frames = [], []
        for wd, frame in zip(windows, _window_frames(windows, cfg)):
            if frame in by_frame:
                kept.append(wd.tensors)
                frames.append(frame)
        if not kept:
            continue
        p = _predict_batched(pose_model.predict, np.stack(kept))
        preds.append(np.clip(p, 0.0, 1.0))
        gts.append(np.stack([by_frame[f].keypoints for f in frames]))
        valids.append(np.stack([by_frame[f].valid for f in frames]))
        falls.extend(labels.get(f, 0) == 3 for f in frames)
    if not preds:
        raise DataError(f"no evaluable windows under {args.data}/{args.split}")
    preds = np.concatenate(preds)
    gts = np.concatenate(gts)
    valids = np.concatenate(valids)
    report = pck(preds, gts, valids)
    _write(os.path.join(out, "pck_report.txt"), format_pck_table(report))
    _write(os.path.join(out, "pck_report.csv"), pck_csv(report))
    seg = segment_tracking_error(preds, gts, valids)
    _write(os.path.join(out, "segments.txt"), format_segments(seg))
    _write(os.path.join(out, "segments.csv"), segments_csv(seg))
    if args.split_fall:
        fall_mask = np.array(falls, dtype=bool)
        if fall_mask.any() and (~fall_mask).any():
            fall_rep, rest_rep = pck_split(preds, gts, fall_mask, valids)
            _write(
                os.path.join(out, "pck_fall.txt"),
                format_pck_pair_table("fall", fall_rep, "other", rest_rep),
            )
            _write(os.path.join(out, "pck_fall.csv"), pck_csv(fall_rep))
            _write(os.path.join(out, "pck_other.csv"), pck_csv(rest_rep))
        else:
            _write(
                os.path.join(out, "pck_fall.txt"),
                "split skipped: frames are all-fall or all-non-fall\n",
            )
    _echo_config(cfg, out)
    for alpha, value in zip(report.thresholds, report.average):
        print(f"pck@{alpha:.2f} = {value:.1f}")
    print(f"frames: {report.frames_evaluated} evaluated, {report.frames_excluded} excluded")
    return EXIT_OK


def cmd_eval_action(args):
    cfg = _build_config(args)
    if args.skeleton_source:
        cfg.set("action.skeleton_source", args.skeleton_source)
    source = cfg["action.skeleton_source"]
    out = _ensure_out(args.out)
    pose_model = None
    if source == "csi":
        if not args.pose_ckpt:
            raise ConfigError("--pose-ckpt is required with skeleton source 'csi'")
        pose_model = _load_pose_model(cfg, args.pose_ckpt, cfg["synth.receivers"])
    model = _load_action_model(cfg, args.ckpt)
    x_test, y_test = _action_dataset(args.data, args.split, cfg, source, pose_model)
    preds = _predict_batched(model.predict, x_test)
    matrix = confusion(preds, y_test, classes=model.config.classes)
    _write(os.path.join(out, "confusion.txt"), format_confusion(matrix))
    _write(os.path.join(out, "confusion.csv"), confusion_csv(matrix))
    _echo_config(cfg, out)
    acc = matrix.per_class_accuracy()
    for name, value in zip(ACTION_NAMES, acc):
        print(f"accuracy[{name}] = {value:.1f}")
    print(f"accuracy[overall] = {matrix.accuracy:.1f}")
    print(f"accuracy[fall vs rest] = {matrix.binary_accuracy(3):.1f}")
    return EXIT_OK


def cmd_infer(args):
    cfg = _build_config(args)
    out = _ensure_out(args.out)
    windows, stats = ingest_session(
        args.input,
        w=cfg["ingest.window"],
        hop=cfg["ingest.hop"],
        wrap_window=cfg["ingest.wrap_window"],
    )
    if not windows:
        raise DataError(f"no complete windows in {args.input}")
    receivers = windows[0].tensors.shape[0]
    pose_model = _load_pose_model(cfg, args.pose_ckpt, receivers)
    skeletons, out_of_range = infer_sequence(pose_model, windows)
    frames = _window_frames(windows, cfg)
    skeletons = [
        Skeleton(s.keypoints, s.valid, frame) for s, frame in zip(skeletons, frames)
    ]
    repaired, events = repair(skeletons, tau=cfg["repair.tau"])
    save_skeleton_csv(os.path.join(out, "skeleton.csv"), repaired)

    action_model = _load_action_model(cfg, args.action_ckpt)
    keypoints = np.stack([s.keypoints for s in repaired])
    span = cfg["action.window"]
    lines = ["frame,pred_class," + ",".join(f"score{c}" for c in range(action_model.config.classes))]
    count = 0
    if keypoints.shape[0] >= span:
        x, _, ends = make_action_windows(
            keypoints, np.zeros(keypoints.shape[0], dtype=np.int64), window=span, stride=1
        )
        scores = _predict_batched(action_model.scores, x)
        classes = np.argmax(scores, axis=1)
        for i, end in enumerate(ends):
            values = ",".join(f"{v:.17g}" for v in scores[i])
            lines.append(f"{frames[end]},{int(classes[i])},{values}")
        count = len(ends)
    _write(os.path.join(out, "actions.csv"), "\n".join(lines) + "\n")
    _echo_config(cfg, out)
    print(stats.summary())
    print(
        f"{len(repaired)} skeletons ({out_of_range} clamped coordinates, "
        f"{len(events)} repair events), {count} action predictions"
    )
    return EXIT_OK


def cmd_audit_params(args):
    cfg = _build_config(args)
    if args.model == "dgnn":
        model = Dgnn(_action_config(cfg))
        rows = model.param_audit()
        mismatch = False
        for name, actual, expected, ok in rows:
            status = "OK" if ok else "MISMATCH"
            mismatch = mismatch or not ok
            label = "Total" if name == "total" else name
            if expected is None:
                print(f"{label} {actual}")
            else:
                print(f"{label} {actual} (expected {expected}) {status}")
        return EXIT_AUDIT if mismatch else EXIT_OK
    model = TedNet(_pose_config(cfg, cfg["synth.receivers"]))
    for name, shape in model._audit_shapes():
        text = "x".join(str(v) for v in shape) if isinstance(shape, tuple) else str(shape)
        print(f"{name} {text} OK")
    print(f"Total {model.store.num_params()} parameters OK")
    return EXIT_OK


# -- parser ----------------------------------------------------------------
class _ConfigKeysAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        print(Config().describe(), end="")
        parser.exit(EXIT_OK)


def _add_common(sp, seed_key=None, epochs_key=None):
    sp.add_argument("--config", help="path to a 'section.key = value' config file")
    sp.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    if seed_key:
        sp.add_argument("--seed", type=int, help=f"shorthand for --set {seed_key}=N")
        sp.set_defaults(_seed_key=seed_key)
    if epochs_key:
        sp.add_argument("--epochs", type=int, help=f"shorthand for --set {epochs_key}=N")
        sp.set_defaults(_epochs_key=epochs_key)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="wiskel",
        description="WiFi CSI skeleton sensing: synthesize, ingest, train, evaluate.",
    )
    parser.add_argument(
        "--config-keys",
        nargs=0,
        action=_ConfigKeysAction,
        help="list every config key with its type, default and rationale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    _add_common(sp, seed_key="synth.seed")
    sp.add_argument("--out", required=True, help="dataset root to create")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="align one session's record stream into windows")
    _add_common(sp)
    sp.add_argument("--input", required=True, help="session.csis binary or .csv debug file")
    sp.add_argument("--out", help="directory for windows.npy/windows.csv/sync_stats.txt")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train-pose", help="train the CSI-to-skeleton model")
    _add_common(sp, seed_key="pose.seed", epochs_key="pose.epochs")
    sp.add_argument("--data", required=True, help="dataset root with train/ (and test/)")
    sp.add_argument("--out", required=True, help="directory for pose.ckpt and logs")
    sp.set_defaults(func=cmd_train_pose)

    sp = sub.add_parser("train-action", help="train the skeleton action classifier")
    _add_common(sp, seed_key="action.seed", epochs_key="action.epochs")
    sp.add_argument("--data", required=True, help="dataset root with train/ (and test/)")
    sp.add_argument("--out", required=True, help="directory for action.ckpt and logs")
    sp.add_argument(
        "--skeleton-source",
        choices=("rgb", "csi"),
        help="train on ground-truth skeletons (rgb) or pose-model output (csi)",
    )
    sp.add_argument("--pose-ckpt", help="pose checkpoint (required for --skeleton-source csi)")
    sp.set_defaults(func=cmd_train_action)

    sp = sub.add_parser("eval-pose", help="PCK and segment error of a pose checkpoint")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True, help="pose checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument(
        "--split-fall",
        action="store_true",
        help="additionally report PCK separately for fall and non-fall frames",
    )
    sp.set_defaults(func=cmd_eval_pose)

    sp = sub.add_parser("eval-action", help="confusion matrix of an action checkpoint")
    _add_common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt", required=True, help="action checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument(
        "--skeleton-source",
        choices=("rgb", "csi"),
        help="evaluate windows cut from ground truth (rgb) or pose output (csi)",
    )
    sp.add_argument("--pose-ckpt", help="pose checkpoint (required for --skeleton-source csi)")
    sp.set_defaults(func=cmd_eval_action)

    sp = sub.add_parser("infer", help="CSI stream -> skeletons -> frame actions")
    _add_common(sp)
    sp.add_argument("--input", required=True, help="session.csis binary or .csv debug file")
    sp.add_argument("--pose-ckpt", required=True)
    sp.add_argument("--action-ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("audit-params", help="print the model parameter budget table")
    _add_common(sp)
    sp.add_argument("--model", choices=("dgnn", "tednet"), default="dgnn")
    sp.set_defaults(func=cmd_audit_params)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelAuditError as exc:
        print(f"audit error: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
