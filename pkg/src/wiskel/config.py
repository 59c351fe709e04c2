"""Flat key-value configuration with a typed registry.

Config files are plain text, one ``section.key = value`` per line, with ``#``
comments and blank lines ignored. Every key must exist in the registry; the
registry carries the type, default and a short rationale so ``--help-config``
and the echoed effective config stay self-describing. Echo output contains no
timestamps, keeping repeated runs byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["ConfigKey", "REGISTRY", "Config", "parse_value", "format_value"]


@dataclass(frozen=True)
class ConfigKey:
    name: str
    type: str  # int | float | bool | str
    default: object
    help: str
    choices: tuple = ()


REGISTRY = [
    ConfigKey("synth.duration_s", "float", 30.0,
              "seconds of continuous motion per non-fall action; the leading "
              "80% of frames form the train split and the rest the test split"),
    ConfigKey("synth.fall_repetitions", "int", 5,
              "independent fall recordings per subject; the last one is held "
              "out for testing"),
    ConfigKey("synth.subjects", "int", 1,
              "number of synthetic subjects; each is a distinct motion seed"),
    ConfigKey("synth.start", "str", "center",
              "body start position across the sensed area", ("center", "left")),
    ConfigKey("synth.noise_sigma", "float", 0.5,
              "additive amplitude noise before 8-bit quantization"),
    ConfigKey("synth.seed", "int", 0, "base seed for motion generation"),
    ConfigKey("synth.csi_seed", "int", 7,
              "seed of the fixed skeleton-to-amplitude projection shared by "
              "every session"),
    ConfigKey("synth.receivers", "int", 3, "number of simulated receivers"),
    ConfigKey("ingest.window", "int", 10,
              "aligned samples per window; 10 turns a 300 Hz stream into a "
              "30 Hz tensor stream"),
    ConfigKey("ingest.hop", "int", 10,
              "samples between window starts; equal to ingest.window means "
              "non-overlapping windows"),
    ConfigKey("ingest.wrap_window", "int", 2147483648,
              "a sequence decrease larger than this is treated as 32-bit "
              "wraparound instead of corruption"),
    ConfigKey("repair.tau", "float", 0.15,
              "normalized displacement between consecutive frames beyond "
              "which a keypoint is replaced by its linear extrapolation"),
    ConfigKey("pose.share_encoder_weights", "bool", False,
              "share one convolutional encoder across receivers instead of "
              "one per receiver"),
    ConfigKey("pose.positional_encoding", "bool", True,
              "add fixed sinusoidal positions to the 34-token sequence before "
              "the transformer"),
    ConfigKey("pose.ff_width", "int", 1536,
              "transformer feed-forward width; 4x the 384 model width"),
    ConfigKey("pose.dropout", "float", 0.0,
              "dropout inside attention and feed-forward sublayers"),
    ConfigKey("pose.epochs", "int", 300, "pose training epochs"),
    ConfigKey("pose.lr", "float", 0.001, "Adam learning rate for pose training"),
    ConfigKey("pose.batch_size", "int", 32, "pose training minibatch size"),
    ConfigKey("pose.seed", "int", 0,
              "seed for pose parameter initialization and batch shuffling"),
    ConfigKey("action.window", "int", 30,
              "skeleton frames per classification window; 1 s at 30 Hz"),
    ConfigKey("action.dropout", "float", 0.5,
              "dropout on the pooled vertex and edge features before the "
              "classifier head"),
    ConfigKey("action.temporal_edge_mode", "str", "shared",
              "run the temporal convolutions on both vertex and edge streams "
              "with shared weights, or on the vertex stream only",
              ("shared", "vertex_only")),
    ConfigKey("action.epochs", "int", 40, "action training epochs"),
    ConfigKey("action.lr", "float", 0.001, "Adam learning rate for action training"),
    ConfigKey("action.batch_size", "int", 64, "action training minibatch size"),
    ConfigKey("action.seed", "int", 0,
              "seed for action parameter initialization and batch shuffling"),
    ConfigKey("action.skeleton_source", "str", "rgb",
              "classify windows cut from ground-truth skeletons (rgb) or from "
              "skeletons predicted out of CSI (csi)", ("rgb", "csi")),
]

_BY_NAME = {key.name: key for key in REGISTRY}
_BOOL_WORDS = {"true": True, "1": True, "yes": True,
               "false": False, "0": False, "no": False}


def parse_value(key, text):
    """Convert ``text`` to the registered type of ``key``."""
    text = text.strip()
    try:
        if key.type == "int":
            value = int(text)
        elif key.type == "float":
            value = float(text)
        elif key.type == "bool":
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(text)
            value = _BOOL_WORDS[text.lower()]
        elif key.type == "str":
            value = text
        else:
            raise ConfigError(f"registry bug: unknown type {key.type!r}")
    except ValueError:
        raise ConfigError(
            f"{key.name}: cannot parse {text!r} as {key.type}"
        ) from None
    if key.choices and value not in key.choices:
        raise ConfigError(
            f"{key.name}: {value!r} not one of {', '.join(map(str, key.choices))}"
        )
    return value


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Config:
    """Registry-backed configuration: defaults, file loading, overrides."""

    def __init__(self):
        self._values = {key.name: key.default for key in REGISTRY}

    def __getitem__(self, name):
        if name not in self._values:
            raise ConfigError(f"unknown config key {name!r}")
        return self._values[name]

    def set(self, name, text):
        """Set one key from its text form; unknown keys are an error."""
        key = _BY_NAME.get(name)
        if key is None:
            raise ConfigError(f"unknown config key {name!r}")
        self._values[name] = parse_value(key, text)

    def load_file(self, path):
        """Apply a ``section.key = value`` file on top of current values."""
        try:
            with open(path, "r") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        for number, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
            name, _, text = line.partition("=")
            try:
                self.set(name.strip(), text)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{number}: {exc}") from None

    def apply_overrides(self, pairs):
        """Apply ``key=value`` strings from the command line."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} must look like key=value")
            name, _, text = pair.partition("=")
            self.set(name.strip(), text)

    def echo(self):
        """Effective configuration, one sorted ``key = value`` line each."""
        return "".join(
            f"{name} = {format_value(self._values[name])}\n"
            for name in sorted(self._values)
        )

    def describe(self):
        """Help text: every key with type, default and rationale."""
        lines = []
        for key in sorted(REGISTRY, key=lambda k: k.name):
            choice = f" (one of: {', '.join(map(str, key.choices))})" if key.choices else ""
            lines.append(f"{key.name} ({key.type}, default {format_value(key.default)}){choice}")
            lines.append(f"    {key.help}")
        return "\n".join(lines) + "\n"
