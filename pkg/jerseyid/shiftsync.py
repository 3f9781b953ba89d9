"""
Game-time synchronization: read the scoreboard clock, look up who was on the
ice, and mask tracklet probabilities down to those jerseys.
"""
import typing
import zlib

import cv2
import numpy as np
import torch
from loguru import logger

from jerseyid import JerseyIdError
from jerseyid.constants import CLOCK_CONFIDENCE_THRESHOLD, MAX_GAME_SECONDS
from jerseyid.model import TrackletModel, window_tensor
from jerseyid.numkit import ShapeError
from jerseyid.protocol import (
    GameClockReading,
    HeadOutputs,
    RosterIndex,
    SampledWindow,
    ShiftDb,
    ShiftVector,
    TeamSide,
    Tracklet,
    TrackletPrediction,
)
from jerseyid.synthgen import (
    CLOCK_CELL_H,
    CLOCK_CELL_W,
    CLOCK_GLYPHS,
    CLOCK_MARGIN,
    CLOCK_STRIP_SHAPE,
    clock_digit_columns,
    render_clock_strip,
    render_noise_strip,
)


class UnreadableClockError(JerseyIdError, ValueError):
    pass


def read_clock(strip: np.ndarray, threshold: float = CLOCK_CONFIDENCE_THRESHOLD) -> GameClockReading:
    """
    Reads an MM:SS strip by matching each digit cell against the ten glyph
    templates (normalized cross-correlation). Confidence is the weakest
    cell's best correlation.
    """
    image = np.asarray(strip, dtype=np.float32)
    if image.ndim == 3:
        image = image[..., 0]
    if image.shape != CLOCK_STRIP_SHAPE[:2]:
        raise UnreadableClockError(f"clock strip shape {image.shape} != {CLOCK_STRIP_SHAPE[:2]}")

    digits = []
    confidence = 1.0
    for x in clock_digit_columns():
        cell = np.ascontiguousarray(image[CLOCK_MARGIN:CLOCK_MARGIN + CLOCK_CELL_H, x:x + CLOCK_CELL_W])
        scores = [
            float(np.nan_to_num(cv2.matchTemplate(cell, CLOCK_GLYPHS[d], cv2.TM_CCOEFF_NORMED)[0, 0], nan=-1.0))
            for d in range(10)
        ]
        best = int(np.argmax(scores))
        digits.append(best)
        confidence = min(confidence, scores[best])

    if confidence < threshold:
        raise UnreadableClockError(f"clock confidence {confidence:.3f} below {threshold}")
    minutes, seconds = digits[0] * 10 + digits[1], digits[2] * 10 + digits[3]
    t = minutes * 60 + seconds
    if seconds >= 60 or t >= MAX_GAME_SECONDS:
        raise UnreadableClockError(f"clock read {minutes:02d}:{seconds:02d} is not a game time")
    return GameClockReading(t=t, confidence=max(confidence, 0.0))


def clip_strips(tracklet: Tracklet) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Scoreboard strips showing the clip's first and last game second."""
    if not tracklet.clock_legible:
        rng = np.random.default_rng(zlib.crc32(tracklet.id.encode()))
        return render_noise_strip(rng), render_noise_strip(rng)
    t_s = min(int(tracklet.clip_start_s), MAX_GAME_SECONDS - 1)
    t_e = min(int(tracklet.clip_end_s), MAX_GAME_SECONDS - 1)
    return render_clock_strip(t_s), render_clock_strip(t_e)


def clip_game_times(tracklet: Tracklet) -> typing.Tuple[GameClockReading, GameClockReading]:
    start, end = clip_strips(tracklet)
    return read_clock(start), read_clock(end)


def shifts_in_window(db: ShiftDb, t_s: float, t_e: float) -> typing.Tuple[typing.Set[int], typing.Set[int]]:
    """Home and away jerseys whose shift overlaps [t_s, t_e], endpoints included."""
    if t_s > t_e:
        raise ValueError(f"window start {t_s} after end {t_e}")
    home = {r.jersey for r in db.overlapping(TeamSide.HOME, t_s, t_e)}
    away = {r.jersey for r in db.overlapping(TeamSide.AWAY, t_s, t_e)}
    return home, away


def build_shift_vector(jerseys: typing.Iterable[int], side: TeamSide, roster_index: RosterIndex) -> ShiftVector:
    bits = np.zeros(roster_index.num_classes, dtype=bool)
    bits[roster_index.index_of(None)] = True
    for jersey in jerseys:
        bits[roster_index.index_of(int(jersey))] = True
    return ShiftVector(bits=bits, side=side)


def roster_vector(db: ShiftDb, side: TeamSide, roster_index: RosterIndex) -> ShiftVector:
    """Mask from every jersey that plays for side at any point in the game."""
    return build_shift_vector(db.roster(side), side, roster_index)


def aggregate_tracklet(windows: typing.Sequence[typing.Union[HeadOutputs, np.ndarray]]) -> np.ndarray:
    """Mean of the per-window holistic distributions, renormalized."""
    if len(windows) == 0:
        raise ValueError("cannot aggregate a tracklet with no windows")
    p0 = [w.p0.detach().cpu().numpy() if isinstance(w, HeadOutputs) else np.asarray(w) for w in windows]
    p_jn = np.mean(np.stack(p0).astype(np.float64), axis=0)
    return p_jn / p_jn.sum()


def _product(p_jn: np.ndarray, v: ShiftVector) -> np.ndarray:
    p_jn = np.asarray(p_jn, dtype=np.float64)
    if p_jn.shape != v.bits.shape:
        raise ShapeError(f"probabilities {p_jn.shape} and shift vector {v.bits.shape} differ")
    return p_jn * v.bits


def masked_identity(p_jn: np.ndarray, v: ShiftVector) -> int:
    # np.argmax returns the lowest index on ties
    return int(np.argmax(_product(p_jn, v)))


def masked_distribution(p_jn: np.ndarray, v: ShiftVector) -> np.ndarray:
    product = _product(p_jn, v)
    total = product.sum()
    if total <= 0:
        raise ValueError("mask removed all probability mass")
    return product / total


def tracklet_windows(tracklet: Tracklet, m: int) -> typing.List[SampledWindow]:
    """Non-overlapping windows of stride m covering the tracklet; the last repeats the final frame."""
    windows = []
    for start in range(0, tracklet.n, m):
        indices = [min(start + i, tracklet.n - 1) for i in range(m)]
        windows.append(SampledWindow(
            tracklet_id=tracklet.id, start=start, indices=indices, frames=tracklet.frames[indices],
        ))
    return windows


@torch.no_grad()
def tracklet_distribution(model: TrackletModel, tracklet: Tracklet) -> np.ndarray:
    model.eval()
    windows = tracklet_windows(tracklet, model.cfg.window)
    out = model(window_tensor(windows, model.cfg.window))
    return aggregate_tracklet([out.p0[i] for i in range(len(windows))])


def predict_tracklet(
    model: TrackletModel,
    tracklet: Tracklet,
    roster_index: RosterIndex,
    shift_db: typing.Optional[ShiftDb] = None,
) -> TrackletPrediction:
    """
    Scores one tracklet unmasked, masked by the shifts overlapping its clip,
    and masked by its team's full roster. Referee tracklets are never masked;
    without a shift db, or when the clock is unreadable, masked ids fall back
    to the unmasked one.
    """
    p_jn = tracklet_distribution(model, tracklet)
    unmasked = int(np.argmax(p_jn))
    masked_id, roster_id, fallback = unmasked, unmasked, False

    if shift_db is not None and tracklet.team_side != TeamSide.REFEREE:
        side = tracklet.team_side
        roster_id = masked_identity(p_jn, roster_vector(shift_db, side, roster_index))
        try:
            start, end = clip_game_times(tracklet)
        except UnreadableClockError as e:
            logger.warning(f"Clock unreadable for {tracklet.id} ({e}); scoring it unmasked")
            fallback = True
        else:
            home, away = shifts_in_window(shift_db, start.t, max(start.t, end.t))
            on_ice = home if side == TeamSide.HOME else away
            masked_id = masked_identity(p_jn, build_shift_vector(on_ice, side, roster_index))

    return TrackletPrediction(
        tracklet_id=tracklet.id,
        team_side=tracklet.team_side,
        p_jn=p_jn,
        unmasked_id=unmasked,
        masked_id=masked_id,
        roster_id=roster_id,
        true_id=roster_index.index_of(tracklet.label),
        clock_fallback=fallback,
    )
