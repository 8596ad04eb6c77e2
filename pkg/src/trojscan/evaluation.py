"""Metrics and experiment harness: Acc, Attack-Acc, FAR, FRR, and FRR sweeps.

All rates are exact integer-tally ratios. The FRR sweep re-thresholds
cached L-values so the oracle is queried once per test input regardless
of how many FRR settings are examined.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .calibrate import CalibrationRecord, canonical_json_bytes, score_input
from .core import LabeledDataset, RngStream, substream, substream_named
from .detect import FingerprintMismatchError
from .oracle import PredictionOracle
from .strip import StripRecord, strip_score

REPORT_CSV_COLUMNS = (
    "dataset",
    "trigger",
    "detector",
    "frr_target",
    "frr_empirical",
    "far",
    "acc",
    "attack_acc",
    "seed",
)


@dataclass(frozen=True)
class EvalReport:
    acc: float
    attack_acc: float
    far: float
    frr_empirical: float
    frr_target: float
    per_frr_far: tuple[tuple[float, float], ...]
    counts: dict[str, int]
    labels: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("acc", "attack_acc", "far", "frr_empirical", "frr_target"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be a rate in [0, 1], got {value}")

    def to_json(self) -> dict[str, Any]:
        return {
            "acc": self.acc,
            "attack_acc": self.attack_acc,
            "far": self.far,
            "frr_empirical": self.frr_empirical,
            "frr_target": self.frr_target,
            "per_frr_far": [list(pair) for pair in self.per_frr_far],
            "counts": dict(self.counts),
            "labels": dict(self.labels),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "EvalReport":
        return cls(
            acc=obj["acc"],
            attack_acc=obj["attack_acc"],
            far=obj["far"],
            frr_empirical=obj["frr_empirical"],
            frr_target=obj["frr_target"],
            per_frr_far=tuple(tuple(p) for p in obj["per_frr_far"]),
            counts={k: int(v) for k, v in obj["counts"].items()},
            labels=dict(obj.get("labels", {})),
        )

    def save(self, path) -> None:
        Path(path).write_bytes(canonical_json_bytes(self.to_json()))

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_json(json.loads(Path(path).read_text()))

    def csv_row(self, detector: str = "perturbation") -> dict[str, Any]:
        return {
            "dataset": self.labels.get("dataset", ""),
            "trigger": self.labels.get("trigger", ""),
            "detector": detector,
            "frr_target": self.frr_target,
            "frr_empirical": self.frr_empirical,
            "far": self.far,
            "acc": self.acc,
            "attack_acc": self.attack_acc,
            "seed": self.labels.get("seed", ""),
        }


def write_report_csv(path, rows: Sequence[dict[str, Any]]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def detection_l_values(
    oracle: PredictionOracle,
    dataset: LabeledDataset,
    record: CalibrationRecord,
    seed: RngStream,
    jobs: int | None = None,
) -> np.ndarray:
    """Detection-time L for every input; input i uses substream(seed, i)."""
    values = np.empty(len(dataset))
    for i in range(len(dataset)):
        values[i], _, _ = score_input(
            oracle, dataset.tensor(i), record.noise, record.m, record.bound,
            substream(seed, i), jobs=jobs,
        )
    return values


def _check_fingerprint(oracle: PredictionOracle, record: CalibrationRecord, force: bool) -> None:
    if not force and oracle.fingerprint() != record.oracle_fingerprint:
        raise FingerprintMismatchError(
            "oracle fingerprint does not match the calibration record"
        )


def evaluate(
    oracle: PredictionOracle,
    record: CalibrationRecord,
    benign_test: LabeledDataset,
    trojan_test: LabeledDataset,
    seed: RngStream,
    labels: dict[str, Any] | None = None,
    force: bool = False,
    jobs: int | None = None,
) -> EvalReport:
    """Score both test sets once and reduce to the four headline rates.

    FAR counts trojan inputs the detector lets through; empirical FRR
    counts benign inputs it flags. Acc / Attack-Acc use the undefended
    argmax against each set's stored labels.
    """
    if len(benign_test) == 0 or len(trojan_test) == 0:
        raise ValueError("test sets must be non-empty")
    _check_fingerprint(oracle, record, force)
    benign_l = detection_l_values(oracle, benign_test, record, substream_named(seed, "benign-test"), jobs)
    trojan_l = detection_l_values(oracle, trojan_test, record, substream_named(seed, "trojan-test"), jobs)

    benign_pred = oracle.predict_labels([benign_test.tensor(i) for i in range(len(benign_test))], max_inflight=jobs)
    trojan_pred = oracle.predict_labels([trojan_test.tensor(i) for i in range(len(trojan_test))], max_inflight=jobs)

    counts = {
        "benign_total": len(benign_test),
        "trojan_total": len(trojan_test),
        "benign_flagged": int(np.sum(benign_l > record.tau)),
        "trojan_passed": int(np.sum(trojan_l <= record.tau)),
        "benign_correct": int(np.sum(benign_pred == benign_test.labels)),
        "trojan_hit_target": int(np.sum(trojan_pred == trojan_test.labels)),
    }
    return EvalReport(
        acc=counts["benign_correct"] / counts["benign_total"],
        attack_acc=counts["trojan_hit_target"] / counts["trojan_total"],
        far=counts["trojan_passed"] / counts["trojan_total"],
        frr_empirical=counts["benign_flagged"] / counts["benign_total"],
        frr_target=record.frr_target,
        per_frr_far=((record.frr_target, counts["trojan_passed"] / counts["trojan_total"]),),
        counts=counts,
        labels=labels or {},
    )


@dataclass(frozen=True)
class SweepRow:
    frr_target: float
    far_detector: float
    far_strip: float | None = None

    def as_list(self) -> list:
        return [self.frr_target, self.far_detector, self.far_strip]


def sweep_frr(
    oracle: PredictionOracle,
    record: CalibrationRecord,
    benign_test: LabeledDataset,
    trojan_test: LabeledDataset,
    frr_list: Sequence[float],
    seed: RngStream,
    strip_record: StripRecord | None = None,
    force: bool = False,
    jobs: int | None = None,
) -> list[SweepRow]:
    """FAR at each FRR, re-thresholding cached scores (no re-querying).

    Detection L-values and STRIP entropies are computed once from the
    same substreams `evaluate` uses, so a cached sweep row equals an
    independent full run at that FRR bit for bit.
    """
    frr_list = list(frr_list)
    if any(not 0.0 < f < 1.0 for f in frr_list):
        raise ValueError("every FRR must lie in (0, 1)")
    if sorted(frr_list) != frr_list:
        raise ValueError("frr_list must be sorted ascending")
    _check_fingerprint(oracle, record, force)
    trojan_l = detection_l_values(oracle, trojan_test, record, substream_named(seed, "trojan-test"), jobs)
    strip_scores = None
    if strip_record is not None:
        strip_scores = np.array(
            [
                strip_score(oracle, trojan_test.tensor(i), strip_record.holdout, strip_record.mode)
                for i in range(len(trojan_test))
            ]
        )
    rows: list[SweepRow] = []
    for frr in frr_list:
        tau = record.with_frr(frr).tau
        far = float(np.sum(trojan_l <= tau)) / len(trojan_test)
        far_strip = None
        if strip_scores is not None and strip_record is not None:
            threshold = strip_record.with_frr(frr).entropy_threshold
            far_strip = float(np.sum(strip_scores >= threshold)) / len(trojan_test)
        rows.append(SweepRow(frr_target=frr, far_detector=far, far_strip=far_strip))
    fars = [row.far_detector for row in rows]
    if any(b > a for a, b in zip(fars, fars[1:])):
        raise AssertionError(f"FAR must be non-increasing in FRR, got {fars}")
    return rows


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frr_target", "far_detector", "far_strip"])
        for row in rows:
            writer.writerow(["%r" % row.frr_target, "%r" % row.far_detector,
                             "" if row.far_strip is None else "%r" % row.far_strip])


def write_sweep_svg(path, rows: Sequence[SweepRow], width: int = 480, height: int = 320) -> None:
    """Self-contained FRR -> FAR line chart (no plotting dependency)."""
    pad = 48
    xs = [row.frr_target for row in rows]
    x_lo, x_hi = min(xs), max(xs)
    x_span = (x_hi - x_lo) or 1.0

    def sx(v: float) -> float:
        return pad + (v - x_lo) / x_span * (width - 2 * pad)

    def sy(v: float) -> float:
        return height - pad - v * (height - 2 * pad)

    def polyline(points: list[tuple[float, float]], color: str) -> str:
        coords = " ".join(f"{px:.2f},{py:.2f}" for px, py in points)
        return f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="12">FRR target</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">FAR</text>',
    ]
    for x in xs:
        parts.append(
            f'<text x="{sx(x):.0f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{x:g}</text>'
        )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{pad - 6}" y="{sy(tick) + 4:.0f}" text-anchor="end" font-size="10">{tick:g}</text>'
        )
    parts.append(polyline([(sx(r.frr_target), sy(r.far_detector)) for r in rows], "#1f6fb2"))
    parts.append(f'<text x="{width - pad}" y="{pad - 8}" text-anchor="end" font-size="11" fill="#1f6fb2">perturbation detector</text>')
    if all(r.far_strip is not None for r in rows):
        parts.append(polyline([(sx(r.frr_target), sy(r.far_strip)) for r in rows], "#c05020"))
        parts.append(f'<text x="{width - pad}" y="{pad + 6}" text-anchor="end" font-size="11" fill="#c05020">strip baseline</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
