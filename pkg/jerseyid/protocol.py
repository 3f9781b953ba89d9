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

import math
import typing
from enum import Enum

import numpy as np
import torch
from intervaltree import Interval, IntervalTree
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from jerseyid import JerseyIdError
from jerseyid.constants import DIGIT_ABSENT, DIGIT_CLASSES, NULL_CLASS_INDEX


class RosterError(JerseyIdError, ValueError):
    pass


class TeamSide(str, Enum):
    HOME = "home"
    AWAY = "away"
    REFEREE = "referee"


class LabelSource(str, Enum):
    ORACLE = "oracle"
    MODEL = "model"


class ArrayModel(BaseModel):
    """Base for models carrying numpy arrays or torch tensors."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    _array_fields: typing.ClassVar[typing.Tuple[str, ...]] = ()

    def __repr_args__(self):
        parent_args = super().__repr_args__()
        return (
            [(a, v) for a, v in parent_args if a not in self._array_fields] +
            [(a, ["..."]) for a in self._array_fields]
        )


class RosterIndex(BaseModel):
    """
    Fixed ordering of the holistic class space. Class 0 is the null class,
    class j (j >= 1) is jerseys[j - 1].
    """
    jerseys: typing.List[int]

    @field_validator("jerseys")
    @classmethod
    def _check_jerseys(cls, jerseys):
        if len(jerseys) < 1:
            raise ValueError("class space needs at least one jersey")
        if len(set(jerseys)) != len(jerseys):
            raise ValueError("jerseys must be unique")
        if any(j < 0 or j > 99 for j in jerseys):
            raise ValueError("jerseys must be in [0, 99]")
        return jerseys

    @classmethod
    def default(cls, num_classes: int) -> "RosterIndex":
        if not 2 <= num_classes <= 100:
            raise RosterError(f"num_classes must be in [2, 100], got {num_classes}")
        return cls(jerseys=list(range(1, num_classes)))

    @property
    def num_classes(self) -> int:
        return len(self.jerseys) + 1

    def index_of(self, jersey: typing.Optional[int]) -> int:
        if jersey is None:
            return NULL_CLASS_INDEX
        try:
            return self.jerseys.index(jersey) + 1
        except ValueError:
            raise RosterError(f"jersey {jersey} is not in the class space")

    def jersey_at(self, index: int) -> typing.Optional[int]:
        if not 0 <= index < self.num_classes:
            raise RosterError(f"class index {index} outside [0, {self.num_classes})")
        return None if index == NULL_CLASS_INDEX else self.jerseys[index - 1]


class Tracklet(ArrayModel):
    """
    A temporally ordered sequence of player crops.

    frames has shape (n, H, W, C), float32 in [0, 1]. visibility holds the
    synthetic ground truth of whether the jersey number is legible per frame.
    """
    _array_fields = ("frames",)

    id: str
    frames: np.ndarray
    team_side: TeamSide
    label: typing.Optional[int]
    visibility: typing.List[bool]
    clip_start_s: float = 0.0
    clip_end_s: float = 0.0
    clock_legible: bool = True

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be (n >= 1, H, W, C), got {self.frames.shape}")
        if len(self.visibility) != self.frames.shape[0]:
            raise ValueError(
                f"visibility length {len(self.visibility)} != frame count {self.frames.shape[0]}"
            )
        if self.clip_end_s < self.clip_start_s:
            raise ValueError("clip_end_s precedes clip_start_s")
        return self

    @property
    def n(self) -> int:
        return int(self.frames.shape[0])

    @property
    def is_null(self) -> bool:
        return self.label is None


class ShiftRecord(BaseModel):
    team: TeamSide
    jersey: int
    start_s: float
    end_s: float

    @model_validator(mode="after")
    def _check_interval(self):
        if self.team == TeamSide.REFEREE:
            raise ValueError("shift records belong to the home or away team")
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"invalid shift interval [{self.start_s}, {self.end_s}]")
        return self


class ShiftDb:
    """
    Player shift database backed by one interval tree per team.

    Instant queries use [start_s, end_s) so that back-to-back shifts never
    double count; window queries use closed-interval overlap.
    """

    def __init__(self, records: typing.Iterable[ShiftRecord] = ()):
        self.records: typing.List[ShiftRecord] = list(records)
        self._trees = {TeamSide.HOME: IntervalTree(), TeamSide.AWAY: IntervalTree()}
        for record in self.records:
            self._trees[record.team].add(Interval(record.start_s, record.end_s, record))

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, ShiftDb) and self.records == other.records

    def active_at(self, team: TeamSide, t: float) -> typing.List[ShiftRecord]:
        return sorted(
            (iv.data for iv in self._trees[team].at(t)),
            key=lambda r: (r.start_s, r.jersey),
        )

    def overlapping(self, team: TeamSide, t_s: float, t_e: float) -> typing.List[ShiftRecord]:
        # nextafter turns the tree's half-open query into closed-endpoint overlap
        lo = math.nextafter(t_s, -math.inf)
        hi = math.nextafter(t_e, math.inf)
        return sorted(
            (iv.data for iv in self._trees[team].overlap(lo, hi)),
            key=lambda r: (r.start_s, r.jersey),
        )

    def roster(self, team: TeamSide) -> typing.Set[int]:
        return {r.jersey for r in self.records if r.team == team}


class LabelTriple(BaseModel):
    """Holistic class index plus first/second digit indices (10 = absent)."""
    y0: int
    y1: int
    y2: int

    @model_validator(mode="after")
    def _check(self):
        if self.y0 < 0:
            raise ValueError(f"y0 must be non-negative, got {self.y0}")
        for name in ("y1", "y2"):
            value = getattr(self, name)
            if not 0 <= value < DIGIT_CLASSES:
                raise ValueError(f"{name} must be in [0, {DIGIT_CLASSES}), got {value}")
        if self.y0 == NULL_CLASS_INDEX and (self.y1, self.y2) != (DIGIT_ABSENT, DIGIT_ABSENT):
            raise ValueError("null class requires both digits absent")
        if self.y1 == DIGIT_ABSENT and self.y2 != DIGIT_ABSENT:
            raise ValueError("second digit present without a first digit")
        return self


class FrameLabels(BaseModel):
    tracklet_id: str
    bits: typing.List[bool]
    source: LabelSource
    phi: float

    @property
    def visible_indices(self) -> typing.List[int]:
        return [k for k, b in enumerate(self.bits) if b]


class SampledWindow(ArrayModel):
    """
    m frames drawn from one tracklet. indices maps window positions back to
    tracklet frames; overrun past the last frame repeats it.
    """
    _array_fields = ("frames",)

    tracklet_id: str
    start: int
    indices: typing.List[int]
    frames: np.ndarray

    @model_validator(mode="after")
    def _check(self):
        if len(self.indices) < 1 or len(self.indices) != self.frames.shape[0]:
            raise ValueError("window indices must match a non-empty frame stack")
        if self.indices[0] != self.start:
            raise ValueError("window must begin at its start index")
        steps = np.diff(self.indices)
        if np.any((steps != 0) & (steps != 1)):
            raise ValueError("window indices must be contiguous")
        return self

    @property
    def m(self) -> int:
        return len(self.indices)


class HeadOutputs(ArrayModel):
    """Probability vectors of the three heads; leading batch dim optional."""
    _array_fields = ("p0", "p1", "p2")

    p0: torch.Tensor
    p1: torch.Tensor
    p2: torch.Tensor

    def select(self, i: int) -> "HeadOutputs":
        return HeadOutputs(p0=self.p0[i], p1=self.p1[i], p2=self.p2[i])


class GameClockReading(BaseModel):
    t: int
    confidence: float

    @field_validator("t")
    @classmethod
    def _check_t(cls, t):
        if not 0 <= t < 3600:
            raise ValueError(f"game time {t} outside [0, 3600)")
        return t


class ShiftVector(ArrayModel):
    _array_fields = ("bits",)

    bits: np.ndarray
    side: TeamSide

    @model_validator(mode="after")
    def _check(self):
        if self.bits.dtype != np.bool_ or self.bits.ndim != 1:
            raise ValueError("shift vector bits must be a 1-d boolean array")
        if not self.bits[NULL_CLASS_INDEX]:
            raise ValueError("the null class bit must always be set")
        return self


class TrackletPrediction(ArrayModel):
    _array_fields = ("p_jn",)

    tracklet_id: str
    team_side: TeamSide
    p_jn: np.ndarray
    unmasked_id: int
    masked_id: int
    roster_id: int
    true_id: int
    clock_fallback: bool = False

    def predicted(self, mask_mode: str) -> int:
        return {
            "shifts": self.masked_id,
            "roster": self.roster_id,
            "none": self.unmasked_id,
        }[getattr(mask_mode, "value", mask_mode)]


class MetricsRow(BaseModel):
    iteration: int
    train_loss: float
    train_accuracy: float
    eval_accuracy: typing.Optional[float] = None
    weighted_f1: typing.Optional[float] = None
    wall_clock_s: float = 0.0

    @field_validator("train_accuracy", "eval_accuracy", "weighted_f1")
    @classmethod
    def _check_unit(cls, value):
        if value is not None and not 0.0 <= value <= 1.0:
            raise ValueError(f"metric {value} outside [0, 1]")
        return value
