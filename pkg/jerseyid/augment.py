import math

import numpy as np
import torch
import torchvision.transforms.functional as TF
from loguru import logger
from pydantic import BaseModel
from torchvision.transforms import InterpolationMode

from jerseyid.protocol import SampledWindow
from jerseyid.utils.config import AugmentConfig


class AugmentParams(BaseModel):
    angle: float = 0.0
    top: int = 0
    left: int = 0
    brightness: float = 1.0
    contrast: float = 1.0


class AbstractAugment:
    """
    Draws one set of parameters per window and applies it to every frame, so
    a window is augmented on a per-tracklet rather than per-frame basis.
    """

    def __init__(self, cfg: AugmentConfig = AugmentConfig()):
        self.cfg = cfg

    def __call__(self, window: SampledWindow, rng: np.random.Generator) -> SampledWindow:
        if window.frames.shape[0] == 0:
            raise ValueError("cannot augment an empty window")
        params = self.draw_params(window.frames.shape[1:3], rng)
        logger.trace(f"Augmenting window of {window.tracklet_id} with {params}")
        return window.model_copy(update={"frames": self.apply(window.frames, params)})

    def crop_shape(self, frame_shape):
        height, width = frame_shape
        crop = self.cfg.crop_size
        crop_h, crop_w = (height, width) if crop is None else (crop, crop)
        pad = self.cfg.crop_padding
        if crop_h > height + 2 * pad or crop_w > width + 2 * pad:
            raise ValueError(
                f"crop {crop_h}x{crop_w} larger than padded frame {height + 2 * pad}x{width + 2 * pad}"
            )
        return crop_h, crop_w

    def draw_params(self, frame_shape, rng: np.random.Generator) -> AugmentParams:
        raise NotImplementedError

    def apply(self, frames: np.ndarray, params: AugmentParams) -> np.ndarray:
        raise NotImplementedError


class NoAugment(AbstractAugment):
    def draw_params(self, frame_shape, rng: np.random.Generator) -> AugmentParams:
        return AugmentParams()

    def apply(self, frames: np.ndarray, params: AugmentParams) -> np.ndarray:
        return frames


class TrackletAugment(AbstractAugment):
    """Rotation, padded crop and brightness/contrast jitter shared by a whole window."""

    def draw_params(self, frame_shape, rng: np.random.Generator) -> AugmentParams:
        height, width = frame_shape
        crop_h, crop_w = self.crop_shape(frame_shape)
        pad = self.cfg.crop_padding
        span_h = height + 2 * pad - crop_h
        span_w = width + 2 * pad - crop_w
        # crop origin jitters around the centered crop by at most crop_padding
        top = int(np.clip(span_h // 2 + rng.integers(-pad, pad + 1), 0, span_h))
        left = int(np.clip(span_w // 2 + rng.integers(-pad, pad + 1), 0, span_w))
        return AugmentParams(
            angle=float(rng.uniform(-self.cfg.max_rotation_deg, self.cfg.max_rotation_deg)),
            top=top,
            left=left,
            brightness=float(1.0 + rng.uniform(-self.cfg.brightness, self.cfg.brightness)),
            contrast=float(1.0 + rng.uniform(-self.cfg.contrast, self.cfg.contrast)),
        )

    def apply(self, frames: np.ndarray, params: AugmentParams) -> np.ndarray:
        height, width = frames.shape[1:3]
        crop_h, crop_w = self.crop_shape((height, width))
        x = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float64)).permute(0, 3, 1, 2)

        # extra edge-replicated margin so rotated corners are filled from the border
        margin = int(math.ceil(0.2 * max(height, width))) if params.angle else 0
        pad = self.cfg.crop_padding + margin
        if pad:
            x = TF.pad(x, [pad, pad, pad, pad], padding_mode="edge")
        if params.angle:
            x = TF.rotate(x, params.angle, interpolation=InterpolationMode.BILINEAR)
        x = TF.crop(x, margin + params.top, margin + params.left, crop_h, crop_w)
        if params.brightness != 1.0:
            x = TF.adjust_brightness(x, params.brightness)
        if params.contrast != 1.0:
            x = TF.adjust_contrast(x, params.contrast)
        return x.clamp(0.0, 1.0).permute(0, 2, 3, 1).numpy().astype(np.float32)
