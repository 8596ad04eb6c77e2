"""Trigger injection and dataset poisoning.

Manufactures desk-scale infected classifiers: a trigger is stamped or
blended onto images, a sampled subset of the training data is appended
as triggered copies relabeled to the attacker's target class, and a
synthetic shapes dataset provides fast end-to-end drills.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .core import ImageTensor, LabeledDataset, RngStream, substream_named


@dataclass(frozen=True)
class TriggerSpec:
    """The attacker's pixel pattern.

    ``patch`` overwrites a small block at (top, left); ``blend`` mixes a
    full-size watermark in with the given opacity. Either applies only to
    the channels in ``channel_mask`` (all channels when None).
    """

    kind: str
    pattern: np.ndarray
    top: int = 0
    left: int = 0
    opacity: float = 1.0
    channel_mask: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("patch", "blend"):
            raise ValueError("trigger kind must be 'patch' or 'blend'")
        pattern = np.asarray(self.pattern, dtype=np.float64)
        if pattern.ndim != 3:
            raise ValueError("pattern must be (h, w, C)")
        if pattern.size == 0 or pattern.min() < 0.0 or pattern.max() > 1.0:
            raise ValueError("pattern values must lie in [0, 1]")
        if not 0.0 < self.opacity <= 1.0:
            raise ValueError("opacity must lie in (0, 1]")
        if self.top < 0 or self.left < 0:
            raise ValueError("trigger position must be non-negative")
        pattern = pattern.copy()
        pattern.flags.writeable = False
        object.__setattr__(self, "pattern", pattern)
        if self.channel_mask is not None:
            object.__setattr__(self, "channel_mask", tuple(int(c) for c in self.channel_mask))

    def resolve_mask(self, channels: int) -> tuple[int, ...]:
        if self.channel_mask is None:
            return tuple(range(channels))
        if any(c < 0 or c >= channels for c in self.channel_mask):
            raise ValueError(f"channel mask {self.channel_mask} invalid for {channels} channels")
        return self.channel_mask

    def to_json(self) -> dict[str, Any]:
        h, w, c = self.pattern.shape
        data = base64.b64encode(self.pattern.astype("<f4").tobytes()).decode("ascii")
        return {
            "kind": self.kind,
            "top": self.top,
            "left": self.left,
            "opacity": self.opacity,
            "channel_mask": list(self.channel_mask) if self.channel_mask is not None else None,
            "pattern": {"height": h, "width": w, "channels": c, "data_b64": data},
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any], base_dir: Path | None = None) -> "TriggerSpec":
        pat = obj["pattern"]
        if isinstance(pat, str):
            path = Path(pat)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if path.suffix.lower() == ".npy":
                pattern = np.load(path)
            else:
                from . import _png

                pattern = _png.read_png(path).astype(np.float64) / 255.0
        else:
            raw = base64.b64decode(pat["data_b64"])
            pattern = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            pattern = pattern.reshape(pat["height"], pat["width"], pat["channels"])
        mask = obj.get("channel_mask")
        return cls(
            kind=obj["kind"],
            pattern=pattern,
            top=obj.get("top", 0),
            left=obj.get("left", 0),
            opacity=obj.get("opacity", 1.0),
            channel_mask=tuple(mask) if mask is not None else None,
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TriggerSpec":
        path = Path(path)
        return cls.from_json(json.loads(path.read_text()), base_dir=path.parent)

    def digest_bytes(self) -> bytes:
        head = f"{self.kind}|{self.top}|{self.left}|{self.opacity}|{self.channel_mask}".encode()
        return head + self.pattern.tobytes()


@dataclass(frozen=True)
class PoisonConfig:
    """Trigger, target class, and the fraction of training data to poison."""

    trigger: TriggerSpec
    target: int
    fraction: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction < 1.0:
            raise ValueError("poison fraction must lie in (0, 1)")
        if self.target < 0:
            raise ValueError("target class must be non-negative")


def apply_trigger(x: ImageTensor, trigger: TriggerSpec) -> ImageTensor:
    """Stamp or blend the trigger onto a copy of ``x``; untouched pixels are identical."""
    height, width, channels = x.shape
    mask = trigger.resolve_mask(channels)
    ph, pw, pc = trigger.pattern.shape
    if pc != channels:
        raise ValueError(f"pattern has {pc} channels, image has {channels}")
    out = x.pixels.copy()
    if trigger.kind == "patch":
        if trigger.top + ph > height or trigger.left + pw > width:
            raise ValueError("patch trigger does not fit inside the image")
        rows = slice(trigger.top, trigger.top + ph)
        cols = slice(trigger.left, trigger.left + pw)
        for c in mask:
            out[rows, cols, c] = trigger.pattern[:, :, c]
    else:
        if (ph, pw) != (height, width):
            raise ValueError("blend trigger pattern must match the image size")
        for c in mask:
            mixed = (1.0 - trigger.opacity) * out[:, :, c] + trigger.opacity * trigger.pattern[:, :, c]
            out[:, :, c] = np.clip(mixed, 0.0, 1.0)
    return ImageTensor(out)


def poison_dataset(data: LabeledDataset, cfg: PoisonConfig, rng: RngStream) -> LabeledDataset:
    """Append ceil(fraction * N) triggered copies labeled with the target class.

    Benign items are preserved unmodified; the combined set is shuffled
    deterministically under the given stream.
    """
    if cfg.target >= data.class_count:
        raise ValueError("target class outside dataset classes")
    n = len(data)
    n_poison = math.ceil(cfg.fraction * n)
    gen = rng.generator()
    chosen = gen.choice(n, size=n_poison, replace=False)
    poisoned_images = np.stack(
        [apply_trigger(data.tensor(int(i)), cfg.trigger).pixels for i in chosen]
    )
    poisoned_labels = np.full(n_poison, cfg.target, dtype=np.int64)
    images = np.concatenate([data.images, poisoned_images])
    labels = np.concatenate([data.labels, poisoned_labels])
    order = gen.permutation(len(labels))
    return LabeledDataset(images[order], labels[order], data.class_count)


def make_trojan_testset(benign_test: LabeledDataset, trigger: TriggerSpec, target: int) -> LabeledDataset:
    """Trigger every test image and relabel to the target class.

    Images originally of the target class are excluded so Attack-Acc and
    FAR only count genuine misclassifications.
    """
    keep = [i for i in range(len(benign_test)) if benign_test.label(i) != target]
    if not keep:
        raise ValueError("no test images outside the target class")
    images = np.stack([apply_trigger(benign_test.tensor(i), trigger).pixels for i in keep])
    labels = np.full(len(keep), target, dtype=np.int64)
    return LabeledDataset(images, labels, benign_test.class_count)


# --- bundled trigger patterns -------------------------------------------------


def white_patch_trigger(height: int, width: int, channels: int, side: int = 3) -> TriggerSpec:
    """Default attack: a white side x side patch at the bottom-right corner."""
    pattern = np.ones((side, side, channels))
    return TriggerSpec(kind="patch", pattern=pattern, top=height - side, left=width - side)


def blue_star_trigger(height: int, width: int, side: int = 5) -> TriggerSpec:
    """A star-shaped pattern living only in the blue channel (RGB images)."""
    pattern = np.zeros((side, side, 3))
    mid = side // 2
    for i in range(side):
        pattern[mid, i, 2] = 1.0
        pattern[i, mid, 2] = 1.0
        pattern[i, i, 2] = 1.0
        pattern[i, side - 1 - i, 2] = 1.0
    return TriggerSpec(
        kind="patch",
        pattern=pattern,
        top=height - side,
        left=width - side,
        channel_mask=(2,),
    )


# --- desk-scale synthetic data ------------------------------------------------

# Each class is (marker position slot, base tint). The images are kept
# dark on purpose: the class-bearing marker lives in the blue channel at
# low brightness, so the brightness-adaptive noise runs hot on benign
# images (scale ~0.6 drives sigma to the clamp) and genuinely scatters
# their predictions, while a bright trigger patch lowers sigma on Trojan
# images and survives. Red/green tints repeat across position slots.
_BASE_TINTS = ((0.16, 0.06), (0.05, 0.17))
_BASE_BLUE = 0.08
_MARKER_BLUE = 0.22
_MARKER_SIDE = 4

# Recommended noise scale for this data; NoiseSpec's generic default
# (0.25) is tuned for brighter natural images.
SYNTHETIC_NOISE_SCALE = 0.6


def _marker_anchors(height: int, width: int) -> list[tuple[int, int]]:
    # keep marker zones clear of the bottom-right trigger corner
    lo = 2
    hi_r, hi_c = height - 2 * _MARKER_SIDE, width - 2 * _MARKER_SIDE
    mid_r, mid_c = (lo + hi_r) // 2, (lo + hi_c) // 2
    return [(lo, lo), (lo, hi_c), (hi_r, lo), (hi_r, hi_c), (mid_r, mid_c)]


def synthetic_shapes(
    rng: RngStream,
    count: int,
    class_count: int = 10,
    height: int = 16,
    width: int = 16,
) -> LabeledDataset:
    """Generate a class-balanced marker-position dataset (up to 10 classes).

    A dim blue square marker sits in one of five position slots; a
    red/green base tint doubles the label space. A small MLP learns it
    in seconds, and strong single-channel noise can both erase the
    marker and paint decoys anywhere it lands.
    """
    if not 2 <= class_count <= 10:
        raise ValueError("synthetic_shapes supports 2..10 classes")
    if height < 14 or width < 14:
        raise ValueError("synthetic images must be at least 14x14")
    gen = rng.generator()
    anchors = _marker_anchors(height, width)
    images = np.empty((count, height, width, 3))
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        label = i % class_count
        slot = (label // len(_BASE_TINTS)) % len(anchors)
        red, green = _BASE_TINTS[label % len(_BASE_TINTS)]
        img = np.empty((height, width, 3))
        img[:, :, 0] = red
        img[:, :, 1] = green
        img[:, :, 2] = _BASE_BLUE
        img += gen.uniform(-0.02, 0.02, size=img.shape)
        top = anchors[slot][0] + int(gen.integers(-1, 2))
        left = anchors[slot][1] + int(gen.integers(-1, 2))
        img[top : top + _MARKER_SIDE, left : left + _MARKER_SIDE, 2] = _MARKER_BLUE + gen.uniform(
            -0.02, 0.02, size=(_MARKER_SIDE, _MARKER_SIDE)
        )
        img += gen.uniform(-0.015, 0.015)
        images[i] = np.clip(img, 0.0, 1.0)
        labels[i] = label
    order = gen.permutation(count)
    return LabeledDataset(images[order], labels[order], class_count)


def synthetic_split(
    rng: RngStream,
    train: int = 500,
    test: int = 200,
    class_count: int = 10,
    height: int = 16,
    width: int = 16,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Independent train/test draws from the synthetic generator."""
    train_set = synthetic_shapes(substream_named(rng, "train"), train, class_count, height, width)
    test_set = synthetic_shapes(substream_named(rng, "test"), test, class_count, height, width)
    return train_set, test_set
