"""Models the oracle can serve.

The echo model is pure stdlib and mirrors the canonical echo semantics:
one-hot at round(pixels[0] * (classes - 1)), ties to even (Python's
round). The npz variant wraps a ReLU-softmax MLP stored as a NumPy
archive and needs numpy installed (the optional extra).
"""

from __future__ import annotations


class EchoModel:
    """One-hot at a label derived from the first pixel."""

    def __init__(self, classes: int, height: int, width: int, channels: int):
        if classes < 2:
            raise ValueError("need at least two classes")
        self.classes = classes
        self.height = height
        self.width = width
        self.channels = channels

    @property
    def pixel_count(self) -> int:
        return self.height * self.width * self.channels

    def predict(self, pixels: list[float]) -> list[float]:
        label = round(pixels[0] * (self.classes - 1))
        probs = [0.0] * self.classes
        probs[label] = 1.0
        return probs


class NpzMlpModel:
    """ReLU-hidden, softmax-output MLP loaded from a .npz archive.

    Expected arrays: w1 (d, h), b1 (h,), w2 (h, k), b2 (k,), and a
    3-element int array `shape` holding (height, width, channels).
    """

    def __init__(self, path: str):
        try:
            import numpy as np
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise RuntimeError(
                "the npz model needs numpy; install the 'npz' extra"
            ) from exc
        self._np = np
        archive = np.load(path)
        for key in ("w1", "b1", "w2", "b2", "shape"):
            if key not in archive:
                raise ValueError(f"{path}: missing array {key!r}")
        self.w1 = archive["w1"].astype(np.float64)
        self.b1 = archive["b1"].astype(np.float64)
        self.w2 = archive["w2"].astype(np.float64)
        self.b2 = archive["b2"].astype(np.float64)
        self.height, self.width, self.channels = (int(v) for v in archive["shape"])
        if self.w1.shape[0] != self.height * self.width * self.channels:
            raise ValueError(f"{path}: w1 rows do not match the declared shape")
        self.classes = int(self.w2.shape[1])

    @property
    def pixel_count(self) -> int:
        return self.height * self.width * self.channels

    def predict(self, pixels: list[float]) -> list[float]:
        np = self._np
        x = np.asarray(pixels, dtype=np.float64)
        hidden = np.maximum(x @ self.w1 + self.b1, 0.0)
        logits = hidden @ self.w2 + self.b2
        shifted = np.exp(logits - logits.max())
        return (shifted / shifted.sum()).tolist()


def load_model(selector: str, classes: int, height: int, width: int, channels: int):
    """``echo`` or ``npz:<path>``."""
    if selector == "echo":
        return EchoModel(classes, height, width, channels)
    if selector.startswith("npz:"):
        return NpzMlpModel(selector[len("npz:"):])
    raise ValueError(f"unknown model selector {selector!r}")
