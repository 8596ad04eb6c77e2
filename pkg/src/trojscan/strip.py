"""STRIP-style baseline: superimposition with benign holdout images.

Each input is superimposed onto N held-out benign images; the mean
prediction entropy is the score. Trigger-carrying inputs keep forcing
the target class, so their entropy is low: the decision rule is the
opposite direction of the perturbation detector (low score => Trojan),
kept apart by a distinct verdict type.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .calibrate import canonical_json_bytes
from .core import ImageTensor, LabeledDataset, RngStream
from .oracle import PredictionOracle

SUPERIMPOSE_MODES = ("add", "average")


def superimpose(x: ImageTensor, background: ImageTensor, mode: str = "add") -> ImageTensor:
    if mode == "add":
        return ImageTensor(np.clip(x.pixels + background.pixels, 0.0, 1.0))
    if mode == "average":
        return ImageTensor(0.5 * (x.pixels + background.pixels))
    raise ValueError(f"mode must be one of {SUPERIMPOSE_MODES}")


def prediction_entropy(probs: np.ndarray) -> float:
    """Shannon entropy in bits, with 0 * log 0 = 0."""
    p = np.asarray(probs)
    nonzero = p[p > 0.0]
    return float(-(nonzero * np.log2(nonzero)).sum())


def strip_score(
    oracle: PredictionOracle,
    x: ImageTensor,
    holdout: Sequence[ImageTensor],
    mode: str = "add",
) -> float:
    """Mean prediction entropy of x superimposed on each holdout image."""
    if not holdout:
        raise ValueError("holdout must be non-empty")
    blended = [superimpose(x, b, mode) for b in holdout]
    probs = oracle.predict_batch(blended)
    return float(np.mean([prediction_entropy(row) for row in probs]))


@dataclass(frozen=True)
class StripRecord:
    holdout_indices: tuple[int, ...]
    holdout: tuple[ImageTensor, ...]
    entropy_threshold: float
    frr_target: float
    entropies: tuple[float, ...]
    mode: str = "add"

    def to_json(self) -> dict[str, Any]:
        return {
            "holdout_indices": list(self.holdout_indices),
            "entropy_threshold": self.entropy_threshold,
            "frr_target": self.frr_target,
            "entropies": list(self.entropies),
            "mode": self.mode,
        }

    def save(self, path) -> None:
        Path(path).write_bytes(canonical_json_bytes(self.to_json()))

    @classmethod
    def load(cls, path, dataset: LabeledDataset) -> "StripRecord":
        obj = json.loads(Path(path).read_text())
        indices = tuple(obj["holdout_indices"])
        return cls(
            holdout_indices=indices,
            holdout=tuple(dataset.tensor(i) for i in indices),
            entropy_threshold=obj["entropy_threshold"],
            frr_target=obj["frr_target"],
            entropies=tuple(obj["entropies"]),
            mode=obj["mode"],
        )

    def with_frr(self, frr_target: float) -> "StripRecord":
        from dataclasses import replace

        threshold = strip_threshold(self.entropies, frr_target)
        return replace(self, frr_target=frr_target, entropy_threshold=threshold)


@dataclass(frozen=True)
class StripVerdict:
    decision: str
    score: float

    @property
    def is_trojan(self) -> bool:
        return self.decision == "trojan"


def strip_threshold(entropies: Sequence[float], frr_target: float) -> float:
    """Low-tail order statistic: the ceil(frr * n)-th smallest entropy."""
    if not 0.0 < frr_target < 1.0:
        raise ValueError("frr_target must lie in (0, 1)")
    ordered = sorted(entropies)
    j = max(1, math.ceil(len(ordered) * frr_target - 1e-9))
    return ordered[j - 1]


def strip_calibrate(
    oracle: PredictionOracle,
    benign: LabeledDataset,
    holdout_size: int = 10,
    frr_target: float = 0.01,
    seed: RngStream = RngStream(0),
    mode: str = "add",
) -> StripRecord:
    """Split a holdout from the benign set and threshold calibration entropies."""
    if holdout_size < 1:
        raise ValueError("holdout_size must be at least 1")
    if len(benign) <= holdout_size:
        raise ValueError("benign set too small to split holdout from calibration examples")
    gen = seed.generator()
    holdout_idx = sorted(int(i) for i in gen.choice(len(benign), size=holdout_size, replace=False))
    holdout = tuple(benign.tensor(i) for i in holdout_idx)
    chosen = set(holdout_idx)
    entropies = [
        strip_score(oracle, benign.tensor(i), holdout, mode)
        for i in range(len(benign))
        if i not in chosen
    ]
    threshold = strip_threshold(entropies, frr_target)
    return StripRecord(
        holdout_indices=tuple(holdout_idx),
        holdout=holdout,
        entropy_threshold=threshold,
        frr_target=frr_target,
        entropies=tuple(entropies),
        mode=mode,
    )


def strip_detect(oracle: PredictionOracle, record: StripRecord, x: ImageTensor) -> StripVerdict:
    score = strip_score(oracle, x, record.holdout, record.mode)
    decision = "trojan" if score < record.entropy_threshold else "benign"
    return StripVerdict(decision=decision, score=score)
