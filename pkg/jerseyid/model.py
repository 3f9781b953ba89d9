"""
Tracklet classifiers: a small convolutional frame embedder feeding either a
[class]-token transformer encoder with learned positional encodings or a
temporal 1-D CNN baseline, and three layernorm + linear heads (holistic
number, first digit, second digit).
"""
import math
import typing

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from jerseyid import numkit
from jerseyid.constants import DIGIT_CLASSES
from jerseyid.loss import LossWeights
from jerseyid.numkit import NonFiniteError, ShapeError
from jerseyid.protocol import HeadOutputs, SampledWindow
from jerseyid.utils.config import ModelArch, ModelConfig


def pad_frames(frames: np.ndarray, m: int) -> np.ndarray:
    """Repeats the last frame until the stack holds m frames."""
    if frames.shape[0] >= m:
        return frames[:m]
    tail = np.repeat(frames[-1:], m - frames.shape[0], axis=0)
    return np.concatenate([frames, tail], axis=0)


def frames_to_tensor(frames: np.ndarray) -> torch.Tensor:
    """(n, H, W, C) float frames to an (n, C, H, W) float64 tensor."""
    return torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float64)).permute(0, 3, 1, 2)


class FrameEmbedder(nn.Module):
    """Three stride-2 conv stages, global mean pool, linear projection to d."""

    def __init__(self, in_channels: int, channels: typing.Sequence[int], width: int):
        super().__init__()
        stages = []
        for c_in, c_out in zip([in_channels, *channels[:-1]], channels):
            stages.append(nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1))
        self.convs = nn.ModuleList(stages)
        self.proj = nn.Linear(channels[-1], width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.gelu(numkit.conv2d(x, conv.weight, conv.bias, stride=2, padding=1))
        return numkit.linear(numkit.mean_pool(x), self.proj.weight, self.proj.bias)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, head_dim: int):
        super().__init__()
        self.heads = heads
        self.head_dim = head_dim
        inner = heads * head_dim
        self.q = nn.Linear(width, inner)
        self.k = nn.Linear(width, inner)
        self.v = nn.Linear(width, inner)
        self.out = nn.Linear(inner, width)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> typing.Tuple[torch.Tensor, torch.Tensor]:
        b, t, _ = x.shape
        q = self._split(numkit.linear(x, self.q.weight, self.q.bias))
        k = self._split(numkit.linear(x, self.k.weight, self.k.bias))
        v = self._split(numkit.linear(x, self.v.weight, self.v.bias))
        scores = numkit.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        weights = numkit.softmax(scores, axis=-1)
        context = numkit.matmul(weights, v).transpose(1, 2).reshape(b, t, self.heads * self.head_dim)
        return numkit.linear(context, self.out.weight, self.out.bias), weights


class EncoderLayer(nn.Module):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.width)
        self.attn = MultiHeadSelfAttention(cfg.width, cfg.heads, cfg.head_dim)
        self.ln2 = nn.LayerNorm(cfg.width)
        self.fc1 = nn.Linear(cfg.width, cfg.mlp_ratio * cfg.width)
        self.fc2 = nn.Linear(cfg.mlp_ratio * cfg.width, cfg.width)

    def forward(self, x: torch.Tensor) -> typing.Tuple[torch.Tensor, torch.Tensor]:
        attended, weights = self.attn(numkit.layer_norm(x, self.ln1.weight, self.ln1.bias, self.ln1.eps))
        x = x + attended
        hidden = numkit.layer_norm(x, self.ln2.weight, self.ln2.bias, self.ln2.eps)
        hidden = F.gelu(numkit.linear(hidden, self.fc1.weight, self.fc1.bias))
        x = x + numkit.linear(hidden, self.fc2.weight, self.fc2.bias)
        return x, weights


class Head(nn.Module):
    def __init__(self, width: int, classes: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.linear = nn.Linear(width, classes)

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        z = numkit.layer_norm(z, self.norm.weight, self.norm.bias, self.norm.eps)
        return numkit.linear(z, self.linear.weight, self.linear.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return numkit.softmax(self.logits(z), axis=-1)


class TrackletModel(nn.Module):
    """
    Shared surface of the tracklet classifiers: per-frame embedding, a
    window encoder producing one (B, d) state, and the three softmax heads.
    Subclasses implement encode.
    """
    cfg: ModelConfig

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _check_features(self, features: torch.Tensor) -> None:
        if features.dim() != 3 or features.shape[1:] != (self.cfg.window, self.cfg.width):
            raise ShapeError(
                f"encoder expects (B, {self.cfg.window}, {self.cfg.width}) features, got {tuple(features.shape)}"
            )

    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, m, C, H, W) frames to (B, m, d) features, one frame at a time through the same CNN."""
        if frames.dim() != 5:
            raise ShapeError(f"expected (B, m, C, H, W) frames, got {tuple(frames.shape)}")
        b, m = frames.shape[:2]
        features = self.embedder(frames.reshape(b * m, *frames.shape[2:]))
        return features.view(b, m, self.cfg.width)

    def encode(self, features: torch.Tensor):
        raise NotImplementedError

    def heads(self, z: torch.Tensor) -> HeadOutputs:
        if not torch.isfinite(z).all():
            raise NonFiniteError("non-finite class-token state")
        return HeadOutputs(p0=self.head_number(z), p1=self.head_first(z), p2=self.head_second(z))

    def forward(self, frames: torch.Tensor) -> HeadOutputs:
        return self.heads(self.encode(self.embed_frames(frames)))


class JerseyTransformer(TrackletModel):
    def __init__(self, cfg: ModelConfig, learn_loss_weights: bool = True):
        super().__init__()
        self.cfg = cfg
        self.embedder = FrameEmbedder(cfg.in_channels, cfg.embedder_channels, cfg.width)
        self.class_token = nn.Parameter(0.02 * torch.randn(cfg.width))
        # row 0 is the class-token position
        self.positional = nn.Parameter(0.02 * torch.randn(cfg.window + 1, cfg.width))
        self.layers = nn.ModuleList([EncoderLayer(cfg) for _ in range(cfg.layers)])
        self.head_number = Head(cfg.width, cfg.num_classes)
        self.head_first = Head(cfg.width, DIGIT_CLASSES)
        self.head_second = Head(cfg.width, DIGIT_CLASSES)
        self.loss_weights = LossWeights(learn=learn_loss_weights)
        self.to(numkit.DTYPE)

    def encode(self, features: torch.Tensor, return_attention: bool = False):
        """Class-token state after the final layer, shape (B, d)."""
        self._check_features(features)
        b, _, d = features.shape
        tokens = torch.cat([self.class_token.expand(b, 1, d), features], dim=1)
        x = tokens + self.positional[None]
        attention = []
        for i, layer in enumerate(self.layers):
            x, weights = layer(x)
            if not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite activations after encoder layer {i}")
            attention.append(weights)
        z = x[:, 0]
        return (z, attention) if return_attention else z


class TemporalCnn(TrackletModel):
    """
    Baseline tracklet classifier: the same frame embedder followed by
    residual 1-D convolutions over time and a mean over the window.
    Uses cfg.layers temporal blocks of kernel cfg.temporal_kernel.
    """

    def __init__(self, cfg: ModelConfig, learn_loss_weights: bool = True):
        super().__init__()
        self.cfg = cfg
        self.embedder = FrameEmbedder(cfg.in_channels, cfg.embedder_channels, cfg.width)
        self.temporal = nn.ModuleList([
            nn.Conv1d(cfg.width, cfg.width, cfg.temporal_kernel, padding=cfg.temporal_kernel // 2)
            for _ in range(cfg.layers)
        ])
        self.head_number = Head(cfg.width, cfg.num_classes)
        self.head_first = Head(cfg.width, DIGIT_CLASSES)
        self.head_second = Head(cfg.width, DIGIT_CLASSES)
        self.loss_weights = LossWeights(learn=learn_loss_weights)
        self.to(numkit.DTYPE)

    def encode(self, features: torch.Tensor) -> torch.Tensor:
        self._check_features(features)
        x = features.transpose(1, 2)
        for i, conv in enumerate(self.temporal):
            x = x + F.gelu(numkit.conv1d(x, conv.weight, conv.bias, padding=conv.padding[0]))
            if not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite activations after temporal layer {i}")
        return x.mean(dim=-1)


ARCHITECTURES: typing.Dict[ModelArch, typing.Type[TrackletModel]] = {
    ModelArch.TRANSFORMER: JerseyTransformer,
    ModelArch.TEMPORAL_CNN: TemporalCnn,
}


def build_model(cfg: ModelConfig, learn_loss_weights: bool = True) -> TrackletModel:
    return ARCHITECTURES[cfg.arch](cfg, learn_loss_weights=learn_loss_weights)


def window_tensor(windows: typing.Sequence[SampledWindow], m: int) -> torch.Tensor:
    """Stacks windows, padded to m frames by last-frame repetition, into (B, m, C, H, W)."""
    shapes = {w.frames.shape[1:] for w in windows}
    if len(shapes) != 1:
        raise ShapeError(f"windows mix frame shapes {sorted(shapes)}")
    for w in windows:
        if w.m > m:
            raise ShapeError(f"window of {w.m} frames exceeds model window {m}")
    return torch.stack([frames_to_tensor(pad_frames(w.frames, m)) for w in windows])


def forward(window: SampledWindow, model: TrackletModel) -> HeadOutputs:
    """Runs one window (padded to the model's m) and returns unbatched head outputs."""
    return model(window_tensor([window], model.cfg.window)).select(0)
