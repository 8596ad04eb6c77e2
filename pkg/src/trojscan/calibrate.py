"""Offline preparation: score benign examples and pick the detection threshold.

Each benign example is perturbed m times, the noisy predictions are
reduced to a confidence bound L, and the threshold tau is the
(1 - FRR) percentile of the n benign L-values. The verdict rule
downstream is "Trojan iff L > tau".
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .confidence import BoundParams, PredictionProfile, confidence_bound, profile
from .core import ImageTensor, LabeledDataset, RngStream, substream
from .oracle import OracleError, PredictionOracle
from .perturb import NoiseSpec, perturb_once

RECORD_VERSION = "trojscan-calibration-1"


@dataclass(frozen=True)
class CalibrationRecord:
    """Everything the runtime detector needs, persisted as one JSON document."""

    noise: NoiseSpec
    m: int
    bound: BoundParams
    frr_target: float
    tau: float
    l_values: tuple[float, ...]
    oracle_fingerprint: str
    seed: RngStream
    version: str = RECORD_VERSION

    def __post_init__(self) -> None:
        if not self.l_values:
            raise ValueError("calibration needs at least one L-value")
        if any(not 0.0 < v < 1.0 for v in self.l_values):
            raise ValueError("L-values must lie strictly inside (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie strictly inside (0, 1)")
        if not 0.0 < self.frr_target < 1.0:
            raise ValueError("frr_target must lie in (0, 1)")
        n = len(self.l_values)
        exceeding = sum(1 for v in self.l_values if v > self.tau)
        if exceeding > self.frr_target * n + 1e-9:
            raise ValueError("tau violates the calibration FRR budget")

    def to_json(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "noise": self.noise.to_json(),
            "m": self.m,
            "bound": self.bound.to_json(),
            "frr_target": self.frr_target,
            "tau": self.tau,
            "l_values": list(self.l_values),
            "oracle_fingerprint": self.oracle_fingerprint,
            "seed": {"seed": self.seed.seed, "stream_id": self.seed.stream_id},
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "CalibrationRecord":
        return cls(
            version=obj["version"],
            noise=NoiseSpec.from_json(obj["noise"]),
            m=obj["m"],
            bound=BoundParams.from_json(obj["bound"]),
            frr_target=obj["frr_target"],
            tau=obj["tau"],
            l_values=tuple(obj["l_values"]),
            oracle_fingerprint=obj["oracle_fingerprint"],
            seed=RngStream(obj["seed"]["seed"], obj["seed"]["stream_id"]),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(canonical_json_bytes(self.to_json()))

    @classmethod
    def load(cls, path) -> "CalibrationRecord":
        return cls.from_json(json.loads(Path(path).read_text()))

    def with_frr(self, frr_target: float) -> "CalibrationRecord":
        """Re-threshold the stored L-values at a different FRR budget."""
        from dataclasses import replace

        tau = threshold_from_l_values(self.l_values, frr_target)
        return replace(self, frr_target=frr_target, tau=tau)


def canonical_json_bytes(obj: Any) -> bytes:
    """Deterministic serialization: sorted keys, tight separators, full float precision."""
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def percentile_index(n: int, frr_target: float) -> int:
    """1-based order-statistic index for the (1 - FRR) percentile.

    Chosen so that with tau at this index and a strict ">" rule, at most
    frr_target * n calibration examples exceed tau.
    """
    budget = math.floor(n * frr_target + 1e-9)
    return n - budget


def threshold_from_l_values(l_values, frr_target: float) -> float:
    if not 0.0 < frr_target < 1.0:
        raise ValueError("frr_target must lie in (0, 1)")
    ordered = sorted(l_values)
    n = len(ordered)
    if n * frr_target < 1.0:
        warnings.warn(
            f"n * frr_target = {n * frr_target:.3g} < 1: threshold degenerates to the maximum L",
            stacklevel=2,
        )
    return ordered[percentile_index(n, frr_target) - 1]


def score_input(
    oracle: PredictionOracle,
    x: ImageTensor,
    spec: NoiseSpec,
    m: int,
    bound: BoundParams,
    stream: RngStream,
    jobs: int | None = None,
) -> tuple[float, float, PredictionProfile]:
    """Perturb m times, tally predictions, return (L, sigma, profile).

    Copy j draws its noise from substream(stream, j), so the m oracle
    queries can run in any order (or concurrently) without changing the
    result.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    sigma = spec.sigma_for(x)
    copies = [perturb_once(x, spec, sigma, substream(stream, j)) for j in range(m)]
    labels = oracle.predict_labels(copies, max_inflight=jobs)
    prof = profile(labels, m)
    return confidence_bound(prof, sigma, bound), sigma, prof


def calibrate(
    oracle: PredictionOracle,
    benign: LabeledDataset,
    spec: NoiseSpec,
    m: int = 100,
    bound: BoundParams = BoundParams(),
    frr_target: float = 0.01,
    seed: RngStream = RngStream(0),
    jobs: int | None = None,
) -> CalibrationRecord:
    """Run the preparation phase over n benign examples."""
    if len(benign) == 0:
        raise ValueError("calibration set must be non-empty")
    l_values: list[float] = []
    for i in range(len(benign)):
        try:
            l_value, _, _ = score_input(
                oracle, benign.tensor(i), spec, m, bound, substream(seed, i), jobs=jobs
            )
        except OracleError as exc:
            raise OracleError(f"oracle failed on calibration example {i}: {exc}") from exc
        l_values.append(l_value)
    tau = threshold_from_l_values(l_values, frr_target)
    return CalibrationRecord(
        noise=spec,
        m=m,
        bound=bound,
        frr_target=frr_target,
        tau=tau,
        l_values=tuple(l_values),
        oracle_fingerprint=oracle.fingerprint(),
        seed=seed,
    )
