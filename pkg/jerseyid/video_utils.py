import os
from typing import Union

import numpy as np

from jerseyid import JerseyIdError
from jerseyid.constants import FRAME_MAGIC

HEADER_DTYPE = np.dtype("<u4")
PIXEL_DTYPE = np.dtype("<f4")


class DatasetFormatError(JerseyIdError, ValueError):
    def __init__(self, message: str, path: Union[str, os.PathLike, None] = None):
        super().__init__(f"{path}: {message}" if path is not None else message)
        self.path = path


def write_frames(path: Union[str, os.PathLike], frames: np.ndarray) -> None:
    """Packs (n, H, W, C) frames as TRKL: magic, u32 n/H/W/C, little-endian f32 pixels."""
    if frames.ndim != 4:
        raise DatasetFormatError(f"frames must be (n, H, W, C), got {frames.shape}", path)
    header = np.asarray(frames.shape, dtype=HEADER_DTYPE).tobytes()
    try:
        with open(path, "wb") as f:
            f.write(FRAME_MAGIC)
            f.write(header)
            f.write(np.ascontiguousarray(frames, dtype=PIXEL_DTYPE).tobytes())
    except OSError as e:
        raise DatasetFormatError(f"cannot write frame file: {e}", path) from e


def read_frames(path: Union[str, os.PathLike]) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except OSError as e:
        raise DatasetFormatError(f"cannot read frame file: {e}", path) from e

    if payload[:4] != FRAME_MAGIC:
        raise DatasetFormatError("bad magic, expected TRKL", path)
    if len(payload) < 20:
        raise DatasetFormatError("truncated header", path)
    shape = tuple(int(v) for v in np.frombuffer(payload, dtype=HEADER_DTYPE, count=4, offset=4))
    expected = int(np.prod(shape)) * PIXEL_DTYPE.itemsize
    if len(payload) - 20 != expected:
        raise DatasetFormatError(
            f"payload is {len(payload) - 20} bytes, header {shape} implies {expected}", path
        )
    pixels = np.frombuffer(payload, dtype=PIXEL_DTYPE, offset=20).reshape(shape)
    return pixels.astype(np.float32)


def seconds_to_clock(seconds: int) -> str:
    minutes = seconds // 60
    seconds = seconds % 60
    return f"{minutes:02}:{seconds:02}"
