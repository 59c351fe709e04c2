"""WiFi CSI skeleton sensing: stream alignment, pose estimation, action
classification, and the metrics to evaluate them.

The three sklearn-style entry points are :class:`CsiPoseRegressor`,
:class:`SkeletonActionClassifier` and :class:`SkeletonRepairer`; the
underlying models and the file-format helpers are importable from their
submodules (``wiskel.ingest``, ``wiskel.tednet``, ``wiskel.dgnn``,
``wiskel.skeleton``, ``wiskel.metrics``, ``wiskel.synth``).
"""

from .dgnn import (
    ACTION_NAMES,
    Dgnn,
    DgnnConfig,
    SkeletonActionClassifier,
    make_action_windows,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateBatchError,
    DimensionError,
    MissingGradientError,
    ModelAuditError,
    RecordFormatError,
    StreamCorruptionError,
    TrainingDivergedError,
    WiskelError,
)
from .ingest import ingest_session, synchronize, window
from .metrics import confusion, pck, segment_tracking_error, torso_diagonal
from .skeleton import JOINT_NAMES, Skeleton, SkeletonRepairer, repair
from .tednet import CsiPoseRegressor, TedNet, TedNetConfig, infer_sequence

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ACTION_NAMES",
    "JOINT_NAMES",
    "CsiPoseRegressor",
    "SkeletonActionClassifier",
    "SkeletonRepairer",
    "TedNet",
    "TedNetConfig",
    "Dgnn",
    "DgnnConfig",
    "Skeleton",
    "repair",
    "ingest_session",
    "synchronize",
    "window",
    "make_action_windows",
    "infer_sequence",
    "pck",
    "confusion",
    "segment_tracking_error",
    "torso_diagonal",
    "WiskelError",
    "DimensionError",
    "ConfigError",
    "DataError",
    "RecordFormatError",
    "StreamCorruptionError",
    "CheckpointError",
    "DegenerateBatchError",
    "MissingGradientError",
    "ModelAuditError",
    "TrainingDivergedError",
]
