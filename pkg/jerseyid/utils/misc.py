import json
import os
from typing import Iterable, Iterator, List, Union

import numpy as np


def split_seed(seed: int, streams: int) -> List[int]:
    """
    Derives independent child seeds from one master seed. The result is a pure
    function of (seed, streams), so per-tracklet and per-stream generators stay
    reproducible however work is later distributed.
    """
    children = np.random.SeedSequence(seed).spawn(streams)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


def rng_streams(seed: int) -> dict:
    """One master seed split into the data, init and augmentation streams."""
    data, init, augment = split_seed(seed, 3)
    return {"data": data, "init": init, "augment": augment}


def write_jsonl(path: Union[str, os.PathLike], rows: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: Union[str, os.PathLike]) -> Iterator[dict]:
    with open(path, "r") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: {e}") from e
