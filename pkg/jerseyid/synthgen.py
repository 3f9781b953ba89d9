"""
Synthetic stand-in for broadcast hockey data: player tracklets with per-frame
visibility ground truth, player shift databases, and scoreboard clock strips.

Everything here is a pure function of (config, seed).
"""
import json
import os
import typing

import cv2
import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from jerseyid.constants import MAX_GAME_SECONDS, PLAYERS_ON_ICE
from jerseyid.protocol import RosterError, RosterIndex, ShiftDb, ShiftRecord, TeamSide, Tracklet, ArrayModel
from jerseyid.utils.config import SynthConfig
from jerseyid.utils.misc import read_jsonl, split_seed, write_jsonl
from jerseyid.video_utils import DatasetFormatError, read_frames, seconds_to_clock, write_frames

MANIFEST_VERSION = 1
DRAW = object()  # sentinel: let gen_tracklet draw the label itself

BACKGROUND_RANGE = (0.1, 0.3)
GLYPH_EXTRA = 0.1  # spread of visible glyph intensity above the contrast floor
TURNED_RANGE_DEG = (100.0, 260.0)
TURNED_CONTRAST = 0.3  # fraction of the contrast floor used for turned glyphs

# Seven-segment clock font, one 14x8 cell per digit.
CLOCK_CELL_H = 14
CLOCK_CELL_W = 8
CLOCK_COLON_W = 4
CLOCK_GAP = 2
CLOCK_MARGIN = 2
CLOCK_BACKGROUND = 0.05
CLOCK_INK = 0.95
_SEGMENTS = {
    "a": (slice(0, 2), slice(1, 7)),
    "b": (slice(1, 7), slice(6, 8)),
    "c": (slice(7, 13), slice(6, 8)),
    "d": (slice(12, 14), slice(1, 7)),
    "e": (slice(7, 13), slice(0, 2)),
    "f": (slice(1, 7), slice(0, 2)),
    "g": (slice(6, 8), slice(1, 7)),
}
_DIGIT_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abdeg", 3: "abcdg", 4: "bcfg",
    5: "acdfg", 6: "acdefg", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


def _clock_glyph(digit: int) -> np.ndarray:
    glyph = np.full((CLOCK_CELL_H, CLOCK_CELL_W), CLOCK_BACKGROUND, dtype=np.float32)
    for segment in _DIGIT_SEGMENTS[digit]:
        glyph[_SEGMENTS[segment]] = CLOCK_INK
    return glyph


CLOCK_GLYPHS: typing.Dict[int, np.ndarray] = {d: _clock_glyph(d) for d in range(10)}


def clock_digit_columns() -> typing.List[int]:
    """Left column of each of the four digit cells in an MM:SS strip."""
    x = CLOCK_MARGIN
    columns = []
    for cell in ("d", "d", ":", "d", "d"):
        if cell == "d":
            columns.append(x)
            x += CLOCK_CELL_W + CLOCK_GAP
        else:
            x += CLOCK_COLON_W + CLOCK_GAP
    return columns


CLOCK_STRIP_SHAPE = (
    CLOCK_CELL_H + 2 * CLOCK_MARGIN,
    clock_digit_columns()[-1] + CLOCK_CELL_W + CLOCK_MARGIN,
    1,
)


def render_clock_strip(t: int) -> np.ndarray:
    """Renders game second t as an MM:SS scoreboard strip of shape (18, 48, 1)."""
    if not 0 <= t < MAX_GAME_SECONDS:
        raise ValueError(f"game time {t} outside [0, {MAX_GAME_SECONDS})")
    text = seconds_to_clock(int(t)).replace(":", "")
    strip = np.full(CLOCK_STRIP_SHAPE[:2], CLOCK_BACKGROUND, dtype=np.float32)
    top = CLOCK_MARGIN
    for x, ch in zip(clock_digit_columns(), text):
        strip[top:top + CLOCK_CELL_H, x:x + CLOCK_CELL_W] = CLOCK_GLYPHS[int(ch)]
    colon_x = clock_digit_columns()[1] + CLOCK_CELL_W + CLOCK_GAP + 1
    strip[top + 3:top + 5, colon_x:colon_x + 2] = CLOCK_INK
    strip[top + 9:top + 11, colon_x:colon_x + 2] = CLOCK_INK
    return strip[..., None]


def render_noise_strip(rng: np.random.Generator) -> np.ndarray:
    """A scoreboard strip with no legible digits (bad broadcast sync)."""
    return rng.random(CLOCK_STRIP_SHAPE).astype(np.float32)


def glyph_contrast(frame: np.ndarray) -> float:
    """Brightest pixel above the frame's median intensity."""
    return float(frame.max() - np.median(frame))


def _glyph_mask(text: str, shape: typing.Tuple[int, int], angle: float,
                shift: typing.Tuple[int, int]) -> np.ndarray:
    height, width = shape
    mask = np.zeros((height, width), dtype=np.uint8)
    scale = 0.02 * min(height, width)
    (text_w, text_h), _ = cv2.getTextSize(text, cv2.FONT_HERSHEY_SIMPLEX, scale, 2)
    origin = ((width - text_w) // 2 + shift[0], (height + text_h) // 2 + shift[1])
    cv2.putText(mask, text, origin, cv2.FONT_HERSHEY_SIMPLEX, scale, (255,), 2, cv2.LINE_8)
    if angle:
        rotation = cv2.getRotationMatrix2D((width / 2.0, height / 2.0), angle, 1.0)
        mask = cv2.warpAffine(mask, rotation, (width, height), flags=cv2.INTER_NEAREST, borderValue=0)
    return mask > 0


def _render_frame(cfg: SynthConfig, rng: np.random.Generator, text: str, background: float,
                  mode: str) -> np.ndarray:
    height, width = cfg.frame_height, cfg.frame_width
    base = np.full((height, width), background, dtype=np.float64)
    shift = tuple(int(v) for v in rng.integers(-2, 3, size=2))

    if mode == "visible":
        angle = rng.uniform(-cfg.rotation_jitter_deg, cfg.rotation_jitter_deg)
        delta = cfg.contrast + 2 * cfg.noise_clip + rng.uniform(0.0, GLYPH_EXTRA)
        base[_glyph_mask(text, (height, width), angle, shift)] = background + delta
    elif mode == "turned":
        angle = rng.uniform(*TURNED_RANGE_DEG)
        base[_glyph_mask(text, (height, width), angle, shift)] = background + TURNED_CONTRAST * cfg.contrast
    elif mode == "occluded":
        mask = _glyph_mask(text, (height, width), 0.0, shift)
        base[mask] = background + cfg.contrast + 2 * cfg.noise_clip
        rows, cols = np.nonzero(mask)
        if rows.size:
            top, bottom = max(rows.min() - 1, 0), min(rows.max() + 2, height)
            left, right = max(cols.min() - 1, 0), min(cols.max() + 2, width)
            occluder = background + rng.uniform(-0.5, 0.5) * cfg.contrast
            base[top:bottom, left:right] = occluder

    noise = np.clip(rng.normal(0.0, cfg.noise_std, size=base.shape), -cfg.noise_clip, cfg.noise_clip)
    frame = np.clip(base + noise, 0.0, 1.0).astype(np.float32)
    return np.repeat(frame[..., None], cfg.channels, axis=-1)


def gen_tracklet(
    cfg: SynthConfig,
    rng_seed: int,
    label=DRAW,
    team_side: TeamSide = TeamSide.HOME,
    tracklet_id: typing.Optional[str] = None,
    clip_start_s: float = 0.0,
    clock_legible: bool = True,
    length: typing.Optional[int] = None,
) -> Tracklet:
    """
    Renders one tracklet. Visible frames form one contiguous run whose length
    is a drawn fraction of n; every other frame shows the number occluded,
    turned away at low contrast, or not at all.
    """
    rng = np.random.default_rng(rng_seed)
    roster = RosterIndex.default(cfg.num_classes)
    if label is DRAW:
        label = None if rng.random() < cfg.null_fraction else int(rng.choice(roster.jerseys))
    elif label is not None and label not in roster.jerseys:
        raise RosterError(f"jersey {label} is not in the configured class space")

    n = int(length) if length is not None else int(rng.integers(cfg.min_length, cfg.max_length + 1))
    if n < 1:
        raise ValueError("tracklet length must be at least 1")

    visibility = np.zeros(n, dtype=bool)
    if label is not None:
        fraction = rng.uniform(cfg.visibility_min, cfg.visibility_max)
        k = int(np.clip(round(fraction * n), 1, n))
        first = int(rng.integers(0, n - k + 1))
        visibility[first:first + k] = True

    # null tracklets still wear a number; it is just never legible
    text = str(label if label is not None else rng.choice(roster.jerseys))
    background = rng.uniform(*BACKGROUND_RANGE)
    frames = []
    for visible in visibility:
        if visible:
            mode = "visible"
        else:
            u = rng.random()
            if u < cfg.occlusion_probability:
                mode = "occluded"
            elif u < cfg.occlusion_probability + cfg.turned_probability:
                mode = "turned"
            else:
                mode = "absent"
        frames.append(_render_frame(cfg, rng, text, background, mode))

    return Tracklet(
        id=tracklet_id or f"trk-{rng_seed:x}",
        frames=np.stack(frames),
        team_side=team_side,
        label=label,
        visibility=visibility.tolist(),
        clip_start_s=float(clip_start_s),
        clip_end_s=float(clip_start_s) + n / cfg.fps,
        clock_legible=clock_legible,
    )


def gen_shift_db(
    rosters: typing.Dict[TeamSide, typing.Sequence[int]],
    game_length_s: float,
    rng_seed: int,
    shift_length_s: float = 45.0,
) -> ShiftDb:
    """
    Builds shifts so that exactly six players per team are on the ice at every
    instant of [0, game_length_s). Shift boundaries fall on whole seconds.
    """
    if shift_length_s < 1:
        raise ValueError("shift_length_s must be at least one second")
    rng = np.random.default_rng(rng_seed)
    records = []
    for side in (TeamSide.HOME, TeamSide.AWAY):
        roster = sorted(set(rosters[side]))
        if len(roster) < PLAYERS_ON_ICE:
            raise RosterError(f"{side.value} roster has {len(roster)} players, need {PLAYERS_ON_ICE}")
        on_ice: typing.Dict[int, float] = {}
        t = 0.0
        while t < game_length_s:
            end = min(float(round(t + shift_length_s)), game_length_s)
            line = {int(j) for j in rng.choice(roster, PLAYERS_ON_ICE, replace=False)}
            for jersey in sorted(set(on_ice) - line):
                records.append(ShiftRecord(team=side, jersey=jersey, start_s=on_ice.pop(jersey), end_s=t))
            for jersey in sorted(line - set(on_ice)):
                on_ice[jersey] = t
            t = end
        for jersey in sorted(on_ice):
            records.append(ShiftRecord(team=side, jersey=jersey, start_s=on_ice[jersey], end_s=game_length_s))
    records.sort(key=lambda r: (r.team.value, r.start_s, r.jersey))
    return ShiftDb(records)


def gen_rosters(cfg: SynthConfig, rng: np.random.Generator) -> typing.Dict[TeamSide, typing.List[int]]:
    jerseys = RosterIndex.default(cfg.num_classes).jerseys
    return {
        side: sorted(int(j) for j in rng.choice(jerseys, cfg.roster_size, replace=False))
        for side in (TeamSide.HOME, TeamSide.AWAY)
    }


def gen_game(
    cfg: SynthConfig,
    num_tracklets: int,
    seed: int,
    split: str = "train",
) -> typing.Tuple[typing.List[Tracklet], ShiftDb]:
    """
    One synthetic game: rosters, a shift database and tracklets whose jersey
    is on the ice for the tracklet's team at its clip start time.
    """
    seeds = split_seed(seed, num_tracklets + 2)
    rosters = gen_rosters(cfg, np.random.default_rng(seeds[0]))
    shift_db = gen_shift_db(rosters, cfg.game_length_s, seeds[1], cfg.shift_length_s)

    tracklets = []
    for i, child_seed in enumerate(seeds[2:]):
        rng = np.random.default_rng(child_seed)
        if rng.random() < cfg.referee_fraction:
            side = TeamSide.REFEREE
        else:
            side = TeamSide.HOME if rng.random() < 0.5 else TeamSide.AWAY
        n = int(rng.integers(cfg.min_length, cfg.max_length + 1))
        latest_start = max(cfg.game_length_s - n / cfg.fps, 0.0)
        clip_start = float(rng.uniform(0.0, latest_start))
        is_null = side == TeamSide.REFEREE or rng.random() < cfg.null_fraction
        if is_null:
            label = None
        else:
            on_ice = sorted(r.jersey for r in shift_db.active_at(side, clip_start))
            label = int(rng.choice(on_ice))
        clock_legible = bool(rng.random() >= cfg.clock_noise_fraction)
        tracklets.append(gen_tracklet(
            cfg,
            int(rng.integers(0, 2**63 - 1)),
            label=label,
            team_side=side,
            tracklet_id=f"{split}-{i:05d}",
            clip_start_s=clip_start,
            clock_legible=clock_legible,
            length=n,
        ))
    logger.info(
        f"Generated {split} game: {len(tracklets)} tracklets, "
        f"{sum(t.is_null for t in tracklets)} null, {len(shift_db)} shift records"
    )
    return tracklets, shift_db


class ManifestRecord(BaseModel):
    id: str
    team_side: TeamSide
    label: typing.Optional[int]
    n: int
    visibility: typing.List[int]
    frames: str
    clip_start_s: float = 0.0
    clip_end_s: float = 0.0
    clock_legible: bool = True


class Manifest(BaseModel):
    version: int = MANIFEST_VERSION
    jerseys: typing.List[int]
    frame_shape: typing.List[int]
    tracklets: typing.List[ManifestRecord]


class SyntheticDataset(ArrayModel):
    tracklets: typing.List[Tracklet]
    shift_db: typing.Optional[ShiftDb] = None
    roster: RosterIndex

    def by_id(self, tracklet_id: str) -> Tracklet:
        for tracklet in self.tracklets:
            if tracklet.id == tracklet_id:
                return tracklet
        raise KeyError(f"no tracklet with id {tracklet_id}")


def write_shift_db(path: typing.Union[str, os.PathLike], shift_db: ShiftDb) -> None:
    write_jsonl(path, (record.model_dump(mode="json") for record in shift_db.records))


def read_shift_db(path: typing.Union[str, os.PathLike]) -> ShiftDb:
    records = []
    try:
        for row in read_jsonl(path):
            records.append(ShiftRecord.model_validate(row))
    except OSError as e:
        raise DatasetFormatError(f"cannot read shift db: {e}", path) from e
    except (ValidationError, ValueError) as e:
        raise DatasetFormatError(f"invalid shift record: {e}", path) from e
    return ShiftDb(records)


def write_dataset(
    tracklets: typing.Sequence[Tracklet],
    shift_db: typing.Optional[ShiftDb],
    out_dir: typing.Union[str, os.PathLike],
    roster: typing.Optional[RosterIndex] = None,
    frame_shape: typing.Optional[typing.Sequence[int]] = None,
) -> dict:
    """Persists tracklets (manifest.json + frames/*.trkl) and the shift db (shifts.jsonl)."""
    frames_dir = os.path.join(out_dir, "frames")
    try:
        os.makedirs(frames_dir, exist_ok=True)
    except OSError as e:
        raise DatasetFormatError(f"cannot create dataset directory: {e}", out_dir) from e

    if roster is None:
        roster = RosterIndex.default(SynthConfig().num_classes)
    if frame_shape is None:
        frame_shape = tracklets[0].frames.shape[1:] if tracklets else SynthConfig().frame_shape

    records = []
    for tracklet in tracklets:
        rel_path = os.path.join("frames", f"{tracklet.id}.trkl")
        write_frames(os.path.join(out_dir, rel_path), tracklet.frames)
        records.append(ManifestRecord(
            id=tracklet.id,
            team_side=tracklet.team_side,
            label=tracklet.label,
            n=tracklet.n,
            visibility=[int(b) for b in tracklet.visibility],
            frames=rel_path,
            clip_start_s=tracklet.clip_start_s,
            clip_end_s=tracklet.clip_end_s,
            clock_legible=tracklet.clock_legible,
        ))
    manifest = Manifest(jerseys=roster.jerseys, frame_shape=list(frame_shape), tracklets=records)
    manifest_path = os.path.join(out_dir, "manifest.json")
    try:
        with open(manifest_path, "w") as f:
            f.write(manifest.model_dump_json(indent=2))
    except OSError as e:
        raise DatasetFormatError(f"cannot write manifest: {e}", manifest_path) from e
    if shift_db is not None:
        write_shift_db(os.path.join(out_dir, "shifts.jsonl"), shift_db)
    return manifest.model_dump(mode="json")


def read_dataset(data_dir: typing.Union[str, os.PathLike]) -> SyntheticDataset:
    manifest_path = os.path.join(data_dir, "manifest.json")
    try:
        with open(manifest_path, "r") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"cannot read manifest: {e}", manifest_path) from e
    try:
        manifest = Manifest.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise DatasetFormatError(f"invalid manifest field '{field}': {first['msg']}", manifest_path) from e

    tracklets = []
    for record in manifest.tracklets:
        frames = read_frames(os.path.join(data_dir, record.frames))
        if frames.shape[0] != record.n or len(record.visibility) != record.n:
            raise DatasetFormatError(
                f"invalid manifest field 'n' for tracklet {record.id}: "
                f"manifest says {record.n}, frames hold {frames.shape[0]}",
                manifest_path,
            )
        if any(b not in (0, 1) for b in record.visibility):
            raise DatasetFormatError(f"invalid manifest field 'visibility' for tracklet {record.id}", manifest_path)
        if record.label is not None and record.label not in manifest.jerseys:
            raise DatasetFormatError(
                f"invalid manifest field 'label' for tracklet {record.id}: jersey {record.label} is not in jerseys",
                manifest_path,
            )
        if list(frames.shape[1:]) != manifest.frame_shape:
            raise DatasetFormatError(
                f"invalid manifest field 'frame_shape': tracklet {record.id} has frames of shape "
                f"{list(frames.shape[1:])}, manifest says {manifest.frame_shape}",
                manifest_path,
            )
        tracklets.append(Tracklet(
            id=record.id,
            frames=frames,
            team_side=record.team_side,
            label=record.label,
            visibility=[bool(b) for b in record.visibility],
            clip_start_s=record.clip_start_s,
            clip_end_s=record.clip_end_s,
            clock_legible=record.clock_legible,
        ))

    shifts_path = os.path.join(data_dir, "shifts.jsonl")
    shift_db = read_shift_db(shifts_path) if os.path.exists(shifts_path) else None
    return SyntheticDataset(tracklets=tracklets, shift_db=shift_db, roster=RosterIndex(jerseys=manifest.jerseys))
