"""
Checkpoint format: magic JNCK, little-endian u32 header length, a UTF-8 JSON
header {format_version, config, jerseys, params: [{name, shape, dtype}]}, then each parameter
as little-endian float64 in header order.
"""
import json
import os
import struct
import typing

import numpy as np
import torch
from loguru import logger
from pydantic import ValidationError

from jerseyid import JerseyIdError, __format_version__
from jerseyid.constants import CHECKPOINT_MAGIC
from jerseyid.model import TrackletModel, build_model
from jerseyid.protocol import RosterIndex
from jerseyid.utils.config import RunConfig

PAYLOAD_DTYPE = np.dtype("<f8")


class CheckpointError(JerseyIdError, ValueError):
    def __init__(self, message: str, path: typing.Union[str, os.PathLike]):
        super().__init__(f"{path}: {message}")
        self.path = path


def save_checkpoint(
    path: typing.Union[str, os.PathLike],
    model: TrackletModel,
    cfg: RunConfig,
    roster: RosterIndex,
) -> None:
    state = model.state_dict()
    header = {
        "format_version": __format_version__,
        "config": cfg.model_dump(mode="json"),
        "jerseys": roster.jerseys,
        "params": [{"name": k, "shape": list(v.shape), "dtype": "float64"} for k, v in state.items()],
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            for value in state.values():
                f.write(value.detach().cpu().numpy().astype(PAYLOAD_DTYPE).tobytes())
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint: {e}", path) from e
    logger.info(f"Saved checkpoint with {len(state)} tensors to {path}")


def load_checkpoint(
    path: typing.Union[str, os.PathLike],
) -> typing.Tuple[TrackletModel, RunConfig, RosterIndex]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint: {e}", path) from e

    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}", path)
    if len(blob) < 8:
        raise CheckpointError("truncated header length", path)
    (header_len,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
        if header.get("format_version") != __format_version__:
            raise CheckpointError(f"format version {header.get('format_version')} != {__format_version__}", path)
        cfg = RunConfig.model_validate(header["config"])
        roster = RosterIndex(jerseys=header["jerseys"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValidationError) as e:
        raise CheckpointError(f"invalid header: {e}", path) from e

    model = build_model(cfg.model, learn_loss_weights=cfg.learn_loss_weights)
    expected = model.state_dict()
    offset = 8 + header_len
    state = {}
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected or tuple(expected[name].shape) != shape:
            raise CheckpointError(f"parameter '{name}' with shape {shape} does not fit the configured model", path)
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * PAYLOAD_DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError(f"truncated payload for '{name}'", path)
        state[name] = torch.from_numpy(np.frombuffer(blob[offset:end], dtype=PAYLOAD_DTYPE).reshape(shape).copy())
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after payload", path)
    missing = set(expected) - set(state)
    if missing:
        raise CheckpointError(f"missing parameters {sorted(missing)}", path)
    model.load_state_dict(state)
    return model, cfg, roster
