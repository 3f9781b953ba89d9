"""
Weak supervision for tracklet training: approximate frame-level visibility
labels, window sampling that guarantees a visible frame, null-class balanced
tracklet draws, and the batcher that ties them together.
"""
import os
import typing

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from pydantic import ValidationError
from torch import nn
from torch.utils.data import Sampler

from jerseyid import JerseyIdError, numkit
from jerseyid.augment import AbstractAugment, TrackletAugment
from jerseyid.loss import encode_labels
from jerseyid.model import FrameEmbedder, frames_to_tensor, window_tensor
from jerseyid.protocol import FrameLabels, LabelSource, LabelTriple, RosterIndex, SampledWindow, Tracklet
from jerseyid.utils.config import AugmentConfig, RunConfig, SamplingMode
from jerseyid.utils.misc import read_jsonl, write_jsonl

Scorer = typing.Callable[[Tracklet], np.ndarray]


class ScorerRangeError(JerseyIdError, ValueError):
    pass


class LabelCacheError(JerseyIdError, ValueError):
    pass


class OracleScorer:
    """Synthetic ground truth: p_k is the frame's visibility bit."""

    source = LabelSource.ORACLE

    def __call__(self, tracklet: Tracklet) -> np.ndarray:
        return np.asarray(tracklet.visibility, dtype=np.float64)


class FrameScorer(nn.Module):
    """
    Single-frame jersey classifier over the holistic class space. The
    visibility score of a frame is 1 - P(null | frame).
    """

    source = LabelSource.MODEL

    def __init__(self, num_classes: int, in_channels: int = 1,
                 channels: typing.Sequence[int] = (8, 16, 32), width: int = 32):
        super().__init__()
        self.embedder = FrameEmbedder(in_channels, channels, width)
        self.classifier = nn.Linear(width, num_classes)
        self.to(numkit.DTYPE)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        features = F.gelu(self.embedder(frames))
        return numkit.softmax(numkit.linear(features, self.classifier.weight, self.classifier.bias), axis=-1)

    @torch.no_grad()
    def score(self, tracklet: Tracklet) -> np.ndarray:
        probs = self(frames_to_tensor(tracklet.frames))
        return (1.0 - probs[:, 0]).clamp(0.0, 1.0).numpy()


def fit_frame_scorer(
    tracklets: typing.Sequence[Tracklet],
    roster: RosterIndex,
    iterations: int = 400,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
) -> FrameScorer:
    """
    Trains a FrameScorer on single frames. A frame's target is the tracklet's
    jersey where the number is visible and the null class everywhere else.
    """
    if not tracklets:
        raise ValueError("no tracklets to fit the frame scorer on")
    rng = np.random.default_rng(seed)
    torch.manual_seed(int(rng.integers(0, 2**31 - 1)))
    channels = tracklets[0].frames.shape[-1]
    scorer = FrameScorer(roster.num_classes, in_channels=channels)

    pairs = [(i, k) for i, t in enumerate(tracklets) for k in range(t.n)]
    targets = np.array([
        roster.index_of(tracklets[i].label) if tracklets[i].visibility[k] else 0
        for i, k in pairs
    ])
    optimizer = numkit.AdamState(scorer.named_parameters(), lr=lr)
    for iteration in range(1, iterations + 1):
        chosen = rng.integers(0, len(pairs), size=batch_size)
        frames = np.stack([tracklets[pairs[j][0]].frames[pairs[j][1]] for j in chosen])
        y = numkit.one_hot(torch.from_numpy(targets[chosen]), roster.num_classes)
        loss = numkit.cross_entropy(scorer(frames_to_tensor(frames)), y).mean()
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if iteration % 50 == 0:
            logger.debug(f"frame scorer iteration {iteration}: loss {loss.item():.4f}")
    scorer.eval()
    logger.info(f"Fitted frame scorer on {len(pairs)} frames for {iterations} iterations")
    return scorer


def approx_labels(tracklet: Tracklet, scorer: Scorer, phi: float) -> FrameLabels:
    """b_k = 1 iff the scorer's p_k is strictly greater than phi."""
    if not 0.0 < phi < 1.0:
        raise ValueError(f"phi must be in (0, 1), got {phi}")
    score = getattr(scorer, "score", scorer)
    p = np.asarray(score(tracklet), dtype=np.float64)
    if p.shape != (tracklet.n,):
        raise ScorerRangeError(f"scorer returned shape {p.shape} for a tracklet of {tracklet.n} frames")
    bad = np.flatnonzero(~((p >= 0.0) & (p <= 1.0)))
    if bad.size:
        raise ScorerRangeError(
            f"scorer output {p[bad[0]]} at frame {bad[0]} of {tracklet.id} outside [0, 1]"
        )
    return FrameLabels(
        tracklet_id=tracklet.id,
        bits=(p > phi).tolist(),
        source=getattr(scorer, "source", LabelSource.MODEL),
        phi=phi,
    )


def label_tracklets(tracklets: typing.Iterable[Tracklet], scorer: Scorer, phi: float) -> typing.List[FrameLabels]:
    return [approx_labels(t, scorer, phi) for t in tracklets]


def sample_window(
    tracklet: Tracklet,
    labels: typing.Optional[FrameLabels],
    m: int,
    rng: np.random.Generator,
    start_idx: typing.Optional[int] = None,
    offset: typing.Optional[int] = None,
) -> SampledWindow:
    """
    Draws m contiguous frames. With labels, a visible index start_idx and an
    offset o in [0, m) are drawn and the window starts at max(0, start_idx - o),
    so it always contains start_idx. Without labels, or when no frame is
    labelled visible, the start is uniform. Windows running past the last
    frame repeat it.

    start_idx and offset replace the random draws when given.
    """
    if m <= 0:
        raise ValueError(f"window length must be positive, got {m}")
    n = tracklet.n
    if labels is not None and len(labels.bits) != n:
        raise ValueError(f"labels for {labels.tracklet_id} hold {len(labels.bits)} bits, tracklet has {n} frames")

    visible = labels.visible_indices if labels is not None else []
    if visible or start_idx is not None:
        if start_idx is None:
            start_idx = int(rng.choice(visible))
        if offset is None:
            offset = int(rng.integers(0, m))
        if not 0 <= start_idx < n or not 0 <= offset < m:
            raise ValueError(f"forced draw start_idx={start_idx}, offset={offset} out of range")
        start = max(0, start_idx - offset)
    else:
        start = int(rng.integers(0, max(n - m, 0) + 1))

    indices = [min(start + i, n - 1) for i in range(m)]
    return SampledWindow(
        tracklet_id=tracklet.id,
        start=start,
        indices=indices,
        frames=tracklet.frames[indices],
    )


class NullBalancedSampler(Sampler):
    """
    Draws tracklet indices so that null-class tracklets appear with
    probability p_s and non-null ones otherwise, uniformly within each stratum.
    """

    def __init__(self, tracklets: typing.Sequence[Tracklet], p_s: float = 0.1, seed: int = 0):
        if not 0.0 <= p_s <= 1.0:
            raise ValueError(f"p_s must be in [0, 1], got {p_s}")
        self.tracklets = list(tracklets)
        self.p_s = p_s
        self.rng = np.random.default_rng(seed)
        self.null_indices = [i for i, t in enumerate(self.tracklets) if t.is_null]
        self.labelled_indices = [i for i, t in enumerate(self.tracklets) if not t.is_null]

    def _check_strata(self, p_s: float) -> None:
        if p_s > 0 and not self.null_indices:
            raise ValueError("cannot draw null tracklets: the dataset has none")
        if p_s < 1 and not self.labelled_indices:
            raise ValueError("cannot draw non-null tracklets: the dataset has none")

    def draw_index(self, rng: np.random.Generator, p_s: typing.Optional[float] = None) -> int:
        p_s = self.p_s if p_s is None else p_s
        self._check_strata(p_s)
        stratum = self.null_indices if rng.random() < p_s else self.labelled_indices
        return stratum[int(rng.integers(0, len(stratum)))]

    def draw(self, rng: np.random.Generator, p_s: typing.Optional[float] = None) -> Tracklet:
        return self.tracklets[self.draw_index(rng, p_s)]

    def __iter__(self):
        while True:
            yield self.draw_index(self.rng)

    def __len__(self):
        return len(self.tracklets)


def draw_training_tracklet(
    dataset: typing.Sequence[Tracklet],
    p_s: float,
    rng: np.random.Generator,
) -> Tracklet:
    tracklets = getattr(dataset, "tracklets", dataset)
    return NullBalancedSampler(tracklets, p_s).draw(rng)


def augment_window(
    window: SampledWindow,
    rng: np.random.Generator,
    cfg: AugmentConfig = AugmentConfig(),
) -> SampledWindow:
    """One rotation, crop origin and brightness/contrast pair applied to every frame."""
    return TrackletAugment(cfg)(window, rng)


class Batch(typing.NamedTuple):
    frames: torch.Tensor  # (B, m, C, H, W) float64
    labels: typing.List[LabelTriple]
    windows: typing.List[SampledWindow]


class WindowBatcher:
    """
    Produces training batches: draw a tracklet, sample a window (guided by the
    frame labels in approx_labels mode, uniform otherwise), augment it and
    encode its label.
    """

    def __init__(
        self,
        tracklets: typing.Sequence[Tracklet],
        cfg: RunConfig,
        roster: RosterIndex,
        labels: typing.Optional[typing.Mapping[str, FrameLabels]] = None,
        data_seed: int = 0,
        augment_seed: int = 0,
        augmenter: typing.Optional[AbstractAugment] = None,
    ):
        self.cfg = cfg
        self.roster = roster
        self.sampler = NullBalancedSampler(tracklets, cfg.p_s)
        self.sampler._check_strata(cfg.p_s)
        self.mode = cfg.sampling
        if self.mode == SamplingMode.APPROX_LABELS:
            if labels is None:
                raise LabelCacheError("approx_labels sampling needs a frame label cache")
            missing = [t.id for t in tracklets if t.id not in labels]
            if missing:
                raise LabelCacheError(f"{len(missing)} tracklets lack frame labels, first: {missing[0]}")
        self.labels = labels
        self.augmenter = augmenter or TrackletAugment(cfg.augment)
        self.data_rng = np.random.default_rng(data_seed)
        self.augment_rng = np.random.default_rng(augment_seed)

    def sample(self) -> typing.Tuple[SampledWindow, LabelTriple]:
        tracklet = self.sampler.draw(self.data_rng)
        frame_labels = self.labels[tracklet.id] if self.mode == SamplingMode.APPROX_LABELS else None
        window = sample_window(tracklet, frame_labels, self.cfg.model.window, self.data_rng)
        window = self.augmenter(window, self.augment_rng)
        return window, encode_labels(tracklet.label, self.roster)

    def next_batch(self) -> Batch:
        windows, labels = zip(*(self.sample() for _ in range(self.cfg.batch_size)))
        return Batch(window_tensor(windows, self.cfg.model.window), list(labels), list(windows))

    def __iter__(self):
        while True:
            yield self.next_batch()


def write_label_cache(path: typing.Union[str, os.PathLike], labels: typing.Iterable[FrameLabels]) -> None:
    write_jsonl(path, (
        {
            "tracklet_id": fl.tracklet_id,
            "phi": fl.phi,
            "bits": "".join("1" if b else "0" for b in fl.bits),
            "source": fl.source.value,
        }
        for fl in labels
    ))


def read_label_cache(path: typing.Union[str, os.PathLike]) -> typing.Dict[str, FrameLabels]:
    cache = {}
    try:
        for row in read_jsonl(path):
            bits = row.get("bits", "")
            if not isinstance(bits, str) or set(bits) - {"0", "1"}:
                raise LabelCacheError(f"invalid bits for {row.get('tracklet_id')} in {path}")
            cache[row["tracklet_id"]] = FrameLabels(
                tracklet_id=row["tracklet_id"],
                bits=[c == "1" for c in bits],
                source=row.get("source", LabelSource.MODEL.value),
                phi=row["phi"],
            )
    except OSError as e:
        raise LabelCacheError(f"cannot read label cache {path}: {e}") from e
    except (KeyError, ValidationError, ValueError) as e:
        if isinstance(e, LabelCacheError):
            raise
        raise LabelCacheError(f"invalid label cache row in {path}: {e}") from e
    return cache
