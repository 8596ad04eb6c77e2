"""Randomized input perturbation.

Noise is added to a random square patch of a single channel (blue by
default for RGB), with a per-image standard deviation that adapts to
image brightness. Gaussian and Laplacian samplers are interchangeable
and share the same variance convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .core import ImageTensor, RngStream

_TINY_BRIGHTNESS = 2.0**-20

DISTRIBUTIONS = ("gaussian", "laplacian")
PATCH_MODES = ("random", "full")


@dataclass(frozen=True)
class NoiseSpec:
    """Parameters of the perturbation process.

    ``sigma`` pins a fixed standard deviation; when None it is computed
    per image from the brightest pixels (see :func:`dynamic_sigma`).
    ``channel_mask`` of None resolves to the blue channel for RGB and
    channel 0 for grayscale. An explicitly empty mask makes perturbation
    a no-op.
    """

    distribution: str = "gaussian"
    sigma: float | None = None
    scale: float = 0.25
    top_frac: float = 0.1
    sigma_min: float = 0.05
    sigma_max: float = 1.0
    channel_mask: tuple[int, ...] | None = None
    patch: str = "random"
    min_side: int = 2

    def __post_init__(self) -> None:
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.patch not in PATCH_MODES:
            raise ValueError(f"patch must be one of {PATCH_MODES}")
        if not 0.0 < self.sigma_min <= self.sigma_max <= 1.0:
            raise ValueError("need 0 < sigma_min <= sigma_max <= 1")
        if not 0.0 < self.top_frac <= 1.0:
            raise ValueError("need 0 < top_frac <= 1")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")
        if self.min_side < 2:
            raise ValueError("min_side must be at least 2")
        if self.sigma is not None and not self.sigma_min <= self.sigma <= self.sigma_max:
            raise ValueError("fixed sigma must lie in [sigma_min, sigma_max]")
        if self.channel_mask is not None:
            mask = tuple(int(c) for c in self.channel_mask)
            if any(c < 0 for c in mask):
                raise ValueError("channel indices must be non-negative")
            object.__setattr__(self, "channel_mask", mask)

    def resolve_mask(self, channels: int) -> tuple[int, ...]:
        if self.channel_mask is None:
            return (2,) if channels == 3 else (0,)
        if any(c >= channels for c in self.channel_mask):
            raise ValueError(f"channel mask {self.channel_mask} exceeds {channels} channels")
        return self.channel_mask

    def sigma_for(self, x: ImageTensor) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        return dynamic_sigma(x, self.scale, self.top_frac, self.sigma_min, self.sigma_max)

    def to_json(self) -> dict[str, Any]:
        return {
            "distribution": self.distribution,
            "sigma": self.sigma,
            "scale": self.scale,
            "top_frac": self.top_frac,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "channel_mask": list(self.channel_mask) if self.channel_mask is not None else None,
            "patch": self.patch,
            "min_side": self.min_side,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "NoiseSpec":
        mask = obj.get("channel_mask")
        return cls(
            distribution=obj["distribution"],
            sigma=obj.get("sigma"),
            scale=obj["scale"],
            top_frac=obj["top_frac"],
            sigma_min=obj["sigma_min"],
            sigma_max=obj["sigma_max"],
            channel_mask=tuple(mask) if mask is not None else None,
            patch=obj["patch"],
            min_side=obj["min_side"],
        )

    def with_distribution(self, distribution: str) -> "NoiseSpec":
        return replace(self, distribution=distribution)


@dataclass(frozen=True)
class PatchPlacement:
    """A square region, fully inside the image, anchored at (top, left)."""

    top: int
    left: int
    side: int

    def __post_init__(self) -> None:
        if self.side < 2:
            raise ValueError("patch side must be at least 2")
        if self.top < 0 or self.left < 0:
            raise ValueError("patch anchor must be non-negative")


def dynamic_sigma(
    x: ImageTensor,
    scale: float,
    top_frac: float,
    sigma_min: float,
    sigma_max: float,
) -> float:
    """Brightness-adaptive noise level: -scale * log2(mean of top pixels).

    The average runs over the ceil(top_frac * H*W*C) largest values of the
    flattened image (all channels). Bright images get gentle noise, dark
    images get strong noise; the result is clamped to [sigma_min, sigma_max].
    """
    flat = x.pixels.ravel()
    k = math.ceil(top_frac * flat.size)
    top = np.partition(flat, flat.size - k)[flat.size - k :]
    v = float(top.mean())
    if v <= _TINY_BRIGHTNESS:
        return float(sigma_max)
    raw = -scale * math.log2(v)
    return float(min(max(raw, sigma_min), sigma_max))


def _draw_placement(gen: np.random.Generator, height: int, width: int, min_side: int) -> PatchPlacement:
    side = int(gen.integers(min_side, min(height, width) + 1))
    top = int(gen.integers(0, height - side + 1))
    left = int(gen.integers(0, width - side + 1))
    return PatchPlacement(top=top, left=left, side=side)


def sample_placement(rng: RngStream, height: int, width: int, min_side: int = 2) -> PatchPlacement:
    """Uniform square patch: side in [min_side, min(H, W)], anchored anywhere legal."""
    if min_side > min(height, width):
        raise ValueError("min_side exceeds image dimensions")
    return _draw_placement(rng.generator(), height, width, min_side)


def perturb_once(x: ImageTensor, spec: NoiseSpec, sigma: float, rng: RngStream) -> ImageTensor:
    """One noisy copy of ``x``: i.i.d. noise on the masked channels of one patch.

    Gaussian noise has standard deviation ``sigma``; Laplacian uses scale
    sigma/sqrt(2) so both share variance sigma**2. The result is clamped to
    [0, 1]; pixels outside the patch or mask are bit-identical to the input.
    """
    if not spec.sigma_min <= sigma <= spec.sigma_max:
        raise ValueError(f"sigma {sigma} outside [{spec.sigma_min}, {spec.sigma_max}]")
    height, width, channels = x.shape
    mask = spec.resolve_mask(channels)
    gen = rng.generator()
    if spec.patch == "random":
        placement = _draw_placement(gen, height, width, spec.min_side)
        rows = slice(placement.top, placement.top + placement.side)
        cols = slice(placement.left, placement.left + placement.side)
        shape = (placement.side, placement.side, len(mask))
    else:
        rows = slice(0, height)
        cols = slice(0, width)
        shape = (height, width, len(mask))
    if not mask:
        return x
    if spec.distribution == "gaussian":
        noise = gen.normal(0.0, sigma, size=shape)
    else:
        noise = gen.laplace(0.0, sigma / math.sqrt(2.0), size=shape)
    out = x.pixels.copy()
    for j, channel in enumerate(mask):
        block = out[rows, cols, channel] + noise[:, :, j]
        out[rows, cols, channel] = np.clip(block, 0.0, 1.0)
    return ImageTensor(out)
