"""Seeded synthetic images and videos for desk-scale runs and tests.

Content is smooth ramps plus mild texture, kept inside [0.1, 0.9] so that
perturbations up to amplitude 0.1 never clip and analytic expectations stay
exact.
"""

from __future__ import annotations

import numpy as np

from .imaging import ImageTensor, VideoFrames


def make_image(height: int, width: int, rng: np.random.Generator,
               lo: float = 0.1, hi: float = 0.9) -> ImageTensor:
    yy, xx = np.mgrid[0:height, 0:width]
    angle = rng.uniform(0, 2 * np.pi)
    ramp = (xx * np.cos(angle) + yy * np.sin(angle)) / max(height, width)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    base = np.stack([ramp * rng.uniform(0.3, 0.6) + rng.uniform(0.1, 0.3)
                     for _ in range(3)], axis=2)
    texture = rng.uniform(-0.08, 0.08, (height, width, 3))
    return ImageTensor(np.clip(base + texture, lo, hi))


def make_images(count: int, height: int = 256, width: int = 256,
                seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [make_image(height, width, rng) for _ in range(count)]


def make_video(frames: int = 8, height: int = 128, width: int = 128,
               seed: int = 0, rate: tuple = (30, 1)) -> VideoFrames:
    """Drifting ramp with static texture: temporally coherent enough for a
    codec to show rate/quality trade-offs."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    angle = rng.uniform(0, 2 * np.pi)
    texture = rng.uniform(-0.07, 0.07, (height, width, 3))
    gains = rng.uniform(0.3, 0.5, 3)
    offsets = rng.uniform(0.15, 0.3, 3)
    out = []
    for t in range(frames):
        ramp = (xx * np.cos(angle) + yy * np.sin(angle) + 6.0 * t)
        ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
        base = np.stack([ramp * g + o for g, o in zip(gains, offsets)],
                        axis=2)
        out.append(ImageTensor(np.clip(base + texture, 0.1, 0.9)))
    return VideoFrames(tuple(out), *rate)
