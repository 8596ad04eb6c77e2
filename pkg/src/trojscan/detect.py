"""Runtime detection of a single input against a calibration record."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import numpy as np

from .calibrate import CalibrationRecord, score_input
from .confidence import PredictionProfile
from .core import ImageTensor, RngStream
from .oracle import PredictionOracle

TROJAN = "trojan"
BENIGN = "benign"


class FingerprintMismatchError(Exception):
    """The calibration record was built against a different oracle."""


@dataclass(frozen=True)
class Verdict:
    decision: str
    l_value: float
    sigma: float
    profile: PredictionProfile
    predicted_label: int | None

    @property
    def is_trojan(self) -> bool:
        return self.decision == TROJAN

    def to_json(self, input_ref: Any = None) -> dict[str, Any]:
        return {
            "input": input_ref,
            "decision": self.decision,
            "L": self.l_value,
            "sigma": self.sigma,
            "p1": self.profile.p1,
            "p2": self.profile.p2,
            "label": self.predicted_label,
        }

    def to_json_line(self, input_ref: Any = None) -> str:
        return json.dumps(self.to_json(input_ref), sort_keys=True)


def detect(
    oracle: PredictionOracle,
    record: CalibrationRecord,
    x: ImageTensor,
    seed: RngStream,
    force: bool = False,
    jobs: int | None = None,
) -> Verdict:
    """Score one input exactly as during calibration and compare L > tau.

    Benign verdicts carry the unperturbed prediction (one extra oracle
    query); Trojan verdicts carry no label. A stale-calibration
    fingerprint mismatch is a hard error unless ``force`` is set.
    """
    if not force and oracle.fingerprint() != record.oracle_fingerprint:
        raise FingerprintMismatchError(
            "oracle fingerprint does not match the calibration record; "
            "recalibrate or pass force=True"
        )
    l_value, sigma, prof = score_input(
        oracle, x, record.noise, record.m, record.bound, seed, jobs=jobs
    )
    if l_value > record.tau:
        return Verdict(TROJAN, l_value, sigma, prof, None)
    label = int(np.argmax(oracle.predict(x)))
    return Verdict(BENIGN, l_value, sigma, prof, label)
