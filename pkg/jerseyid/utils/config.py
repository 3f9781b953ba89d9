# The MIT License (MIT)
# Copyright © 2024 jerseyid developers

# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the “Software”), to deal in the Software without restriction, including without limitation
# the rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software.

# THE SOFTWARE IS PROVIDED “AS IS”, WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT LIMITED TO
# THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION
# OF CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER
# DEALINGS IN THE SOFTWARE.

import json
import os
import sys
import typing
from enum import Enum

from loguru import logger
from pydantic import BaseModel, ValidationError, field_validator, model_validator

from jerseyid import ConfigError
from jerseyid.constants import METRICS_EVERY


class SamplingMode(str, Enum):
    APPROX_LABELS = "approx_labels"
    UNIFORM = "uniform"


class MaskMode(str, Enum):
    SHIFTS = "shifts"
    ROSTER = "roster"
    NONE = "none"


class ModelArch(str, Enum):
    TRANSFORMER = "transformer"
    TEMPORAL_CNN = "temporal_cnn"


class SynthConfig(BaseModel):
    num_classes: int = 21
    frame_height: int = 32
    frame_width: int = 32
    channels: int = 1
    min_length: int = 24
    max_length: int = 64
    visibility_min: float = 0.15
    visibility_max: float = 0.5
    occlusion_probability: float = 0.35
    turned_probability: float = 0.35
    rotation_jitter_deg: float = 8.0
    contrast: float = 0.3
    noise_std: float = 0.02
    noise_clip: float = 0.05
    null_fraction: float = 0.5
    referee_fraction: float = 0.05
    roster_size: int = 12
    game_length_s: float = 3600.0
    shift_length_s: float = 45.0
    fps: float = 30.0
    clock_noise_fraction: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0 < self.visibility_min <= self.visibility_max <= 1:
            raise ValueError("visibility fraction range must lie in (0, 1]")
        if not 1 <= self.min_length <= self.max_length:
            raise ValueError("tracklet length range must satisfy 1 <= min <= max")
        if not 4 * self.noise_clip < self.contrast <= 0.45:
            raise ValueError("contrast must exceed 4 * noise_clip and stay <= 0.45")
        if self.occlusion_probability + self.turned_probability > 1:
            raise ValueError("occlusion and turned probabilities sum past 1")
        if self.roster_size < 6 or self.roster_size > self.num_classes - 1:
            raise ValueError("roster_size must be in [6, num_classes - 1]")
        if not 0 < self.game_length_s <= 3600:
            raise ValueError("game_length_s must be in (0, 3600]")
        for name in ("null_fraction", "referee_fraction", "clock_noise_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        return self

    @property
    def frame_shape(self) -> typing.Tuple[int, int, int]:
        return (self.frame_height, self.frame_width, self.channels)


class AugmentConfig(BaseModel):
    max_rotation_deg: float = 10.0
    crop_padding: int = 2
    crop_size: typing.Optional[int] = None  # None keeps the frame size
    brightness: float = 0.1
    contrast: float = 0.1

    @classmethod
    def zero(cls) -> "AugmentConfig":
        return cls(max_rotation_deg=0.0, crop_padding=0, brightness=0.0, contrast=0.0)


class ModelConfig(BaseModel):
    arch: ModelArch = ModelArch.TRANSFORMER
    width: int = 64                 # d
    layers: int = 2                 # l
    heads: int = 4                  # h
    head_dim: int = 64              # D_h
    window: int = 16                # m
    num_classes: int = 21           # K
    in_channels: int = 1
    embedder_channels: typing.Tuple[int, int, int] = (16, 32, 64)
    mlp_ratio: int = 2
    temporal_kernel: int = 3        # temporal_cnn only

    @model_validator(mode="after")
    def _check(self):
        for name in ("width", "heads", "head_dim", "window", "num_classes", "in_channels", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.layers < 0:
            raise ValueError("layers must be non-negative")
        if any(c < 1 for c in self.embedder_channels):
            raise ValueError("embedder channels must be positive")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError("temporal_kernel must be a positive odd number")
        return self


class LoggingConfig(BaseModel):
    debug: bool = False
    dont_save_events: bool = False
    events_retention_size: str = "2 GB"
    record_wall_clock: bool = True


class RunConfig(BaseModel):
    model: ModelConfig = ModelConfig()
    synth: SynthConfig = SynthConfig()
    augment: AugmentConfig = AugmentConfig()
    logging: LoggingConfig = LoggingConfig()
    phi: float = 0.5
    p_s: float = 0.1
    lr: float = 1e-4
    batch_size: int = 16
    lr_decay: float = 0.2
    milestones: typing.List[int] = [2500, 5000]
    iterations: int = 6000
    seed: int = 0
    sampling: SamplingMode = SamplingMode.APPROX_LABELS
    mask_mode: MaskMode = MaskMode.SHIFTS
    learn_loss_weights: bool = True
    metrics_every: int = METRICS_EVERY
    eval_every: int = 500
    convergence_threshold: float = 0.8

    @field_validator("milestones")
    @classmethod
    def _check_milestones(cls, milestones):
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ValueError("decay milestones must be strictly increasing")
        return milestones

    @model_validator(mode="after")
    def _check(self):
        if not 0 < self.phi < 1:
            raise ValueError("phi must be in (0, 1)")
        if not 0 <= self.p_s <= 1:
            raise ValueError("p_s must be in [0, 1]")
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ValueError("lr, batch_size and iterations must be positive")
        if self.model.num_classes != self.synth.num_classes:
            raise ValueError("model.num_classes must equal synth.num_classes")
        if self.model.in_channels != self.synth.channels:
            raise ValueError("model.in_channels must equal synth.channels")
        return self


def load_run_config(path: typing.Optional[str] = None, **overrides) -> RunConfig:
    """Reads a JSON RunConfig (if given) and applies dotted overrides like model.heads=8."""
    raw: typing.Dict[str, typing.Any] = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load config {path}: {e}") from e
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"invalid config field '{field}': {first['msg']}") from e


def check_config(config: RunConfig, out_dir: str) -> str:
    r"""Creates the output directory, installs log sinks and records the resolved config."""
    full_path = os.path.expanduser(out_dir)
    if not os.path.exists(full_path):
        os.makedirs(full_path, exist_ok=True)

    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if config.logging.debug else "INFO")

    if not config.logging.dont_save_events:
        # Add custom event logger for the events.
        try:
            logger.level("EVENTS", no=38, icon="📝")
        except (TypeError, ValueError):
            pass  # already registered
        logger.add(
            os.path.join(full_path, "events.log"),
            rotation=config.logging.events_retention_size,
            serialize=True,
            enqueue=True,
            backtrace=False,
            diagnose=False,
            level="EVENTS",
            format="{time:YYYY-MM-DD at HH:mm:ss} | {level} | {message}",
        )

    with open(os.path.join(full_path, "config.json"), "w") as f:
        f.write(config.model_dump_json(indent=2))
    return full_path


def log_event(message: str, **fields) -> None:
    try:
        logger.bind(**fields).log("EVENTS", message)
    except ValueError:
        # EVENTS level only exists once check_config registered it
        logger.bind(**fields).debug(message)


OVERRIDE_FLAGS = {
    "--model.width": ("model.width", int, "Feature width d."),
    "--model.layers": ("model.layers", int, "Encoder layers l."),
    "--model.heads": ("model.heads", int, "Attention heads per layer h."),
    "--model.head_dim": ("model.head_dim", int, "Per-head width D_h."),
    "--model.window": ("model.window", int, "Window length m."),
    "--model.arch": ("model.arch", str, "Tracklet classifier: transformer or temporal_cnn."),
    "--synth.num_classes": ("synth.num_classes", int, "Holistic class count K (also sets model.num_classes)."),
    "--synth.visibility_min": ("synth.visibility_min", float, "Lower bound of the visible-frame fraction."),
    "--synth.visibility_max": ("synth.visibility_max", float, "Upper bound of the visible-frame fraction."),
    "--synth.clock_noise_fraction": ("synth.clock_noise_fraction", float, "Fraction of clips with an unreadable clock."),
    "--train.iterations": ("iterations", int, "Total training iterations."),
    "--train.batch_size": ("batch_size", int, "Windows per batch."),
    "--train.lr": ("lr", float, "Initial learning rate."),
    "--train.p_s": ("p_s", float, "Probability of drawing a null tracklet."),
    "--train.phi": ("phi", float, "Visibility threshold for approximate frame labels."),
}


def add_args(parser) -> None:
    """
    Adds relevant arguments to the parser for operation.
    """
    parser.add_argument("--config", type=str, help="Path to a JSON RunConfig.", default=None)
    parser.add_argument("--seed", type=int, help="Master seed.", default=None)
    parser.add_argument("--out", type=str, help="Output directory.", default="./runs/default")

    parser.add_argument(
        "--logging.debug",
        action="store_true",
        help="Log at DEBUG level.",
        default=False,
    )

    parser.add_argument(
        "--logging.events_retention_size",
        type=str,
        help="Events retention size.",
        default=None,
    )

    parser.add_argument(
        "--logging.dont_save_events",
        action="store_true",
        help="If set, we dont save events to a log file.",
        default=False,
    )

    parser.add_argument(
        "--logging.no_wall_clock",
        action="store_true",
        help="Record 0 in the wall_clock_s metrics column so logs of equal seeds compare byte for byte.",
        default=False,
    )

    parser.add_argument(
        "--train.sampling",
        type=str,
        help="How training windows are drawn.",
        choices=[e.value for e in SamplingMode],
        default=None,
    )

    for flag, (_, kind, help_text) in OVERRIDE_FLAGS.items():
        parser.add_argument(flag, type=kind, help=help_text, default=None)


def config(args) -> RunConfig:
    """
    Returns the run configuration after merging the JSON file with command line overrides.
    """
    values = vars(args)
    overrides = {path: values.get(flag[2:]) for flag, (path, _, _) in OVERRIDE_FLAGS.items()}
    if overrides.get("synth.num_classes") is not None:
        overrides["model.num_classes"] = overrides["synth.num_classes"]
    overrides["seed"] = values.get("seed")
    overrides["sampling"] = values.get("train.sampling")
    overrides["logging.events_retention_size"] = values.get("logging.events_retention_size")
    if values.get("logging.debug"):
        overrides["logging.debug"] = True
    if values.get("logging.dont_save_events"):
        overrides["logging.dont_save_events"] = True
    if values.get("logging.no_wall_clock"):
        overrides["logging.record_wall_clock"] = False
    return load_run_config(values.get("config"), **overrides)
