"""Black-box classifier contracts and implementations.

Everything downstream sees only ``predict``: a probability vector over K
classes for one image. Three oracles are provided: a small trainable MLP,
a synthetic perfect-attacker oracle for theory checks, and a client for
external classifiers spoken to over a line-delimited JSON protocol.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .attack import TriggerSpec
from .core import ImageTensor, LabeledDataset, RngStream


class OracleError(Exception):
    """Base class for classifier-side failures."""


class ShapeMismatchError(OracleError):
    pass


class OracleProtocolError(OracleError):
    """External oracle misbehaved: I/O failure, malformed response, id mismatch."""


class TrainingDivergedError(OracleError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class PredictionOracle:
    """Forward-pass-only classifier over fixed-shape images.

    Subclasses set ``class_count``, ``height``, ``width``, ``channels``,
    ``concurrent_safe`` and implement ``_predict``. ``predict`` always
    returns a probability vector of length class_count summing to 1, and
    never mutates its input.
    """

    class_count: int
    height: int
    width: int
    channels: int
    concurrent_safe: bool = True

    def _predict(self, x: ImageTensor) -> np.ndarray:
        raise NotImplementedError

    def check_shape(self, x: ImageTensor) -> None:
        expected = (self.height, self.width, self.channels)
        if x.shape != expected:
            raise ShapeMismatchError(f"input shape {x.shape} != oracle shape {expected}")

    def predict(self, x: ImageTensor) -> np.ndarray:
        self.check_shape(x)
        return self._predict(x)

    def predict_batch(self, xs: Sequence[ImageTensor], max_inflight: int | None = None) -> np.ndarray:
        out = np.empty((len(xs), self.class_count))
        for i, x in enumerate(xs):
            out[i] = self.predict(x)
        return out

    def predict_labels(self, xs: Sequence[ImageTensor], max_inflight: int | None = None) -> np.ndarray:
        probs = self.predict_batch(xs, max_inflight=max_inflight)
        return np.argmax(probs, axis=1)

    def _identity_extra(self) -> str:
        return ""

    def fingerprint(self) -> str:
        """Identity hash: declared shape/classes plus implementation extras.

        Wire-equivalent oracles (e.g. the in-process echo model and an
        external process serving the same echo semantics) share one
        fingerprint, so calibration records transfer between them.
        """
        ident = {
            "classes": self.class_count,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "extra": self._identity_extra(),
        }
        blob = json.dumps(ident, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data_b64": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data_b64"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


class MlpModel(PredictionOracle):
    """One-hidden-layer MLP: ReLU hidden units, softmax output."""

    def __init__(
        self,
        w1: np.ndarray,
        b1: np.ndarray,
        w2: np.ndarray,
        b2: np.ndarray,
        height: int,
        width: int,
        channels: int,
    ):
        w1 = np.asarray(w1, dtype=np.float64)
        b1 = np.asarray(b1, dtype=np.float64)
        w2 = np.asarray(w2, dtype=np.float64)
        b2 = np.asarray(b2, dtype=np.float64)
        for arr in (w1, b1, w2, b2):
            if not np.all(np.isfinite(arr)):
                raise ValueError("model weights must be finite")
        if w1.shape[0] != height * width * channels:
            raise ValueError("w1 rows must match flattened input size")
        if w1.shape[1] != w2.shape[0] or b1.shape != (w1.shape[1],) or b2.shape != (w2.shape[1],):
            raise ValueError("inconsistent layer dimensions")
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.height, self.width, self.channels = height, width, channels
        self.class_count = w2.shape[1]
        self.concurrent_safe = True

    @property
    def hidden_size(self) -> int:
        return self.w1.shape[1]

    def _forward(self, flat: np.ndarray) -> np.ndarray:
        hidden = np.maximum(flat @ self.w1 + self.b1, 0.0)
        return _softmax_rows(hidden @ self.w2 + self.b2)

    def _predict(self, x: ImageTensor) -> np.ndarray:
        return self._forward(x.pixels.reshape(1, -1))[0]

    def predict_batch(self, xs: Sequence[ImageTensor], max_inflight: int | None = None) -> np.ndarray:
        for x in xs:
            self.check_shape(x)
        flat = np.stack([x.pixels.reshape(-1) for x in xs])
        return self._forward(flat)

    def loss(self, flat: np.ndarray, labels: np.ndarray) -> float:
        probs = self._forward(flat)
        picked = probs[np.arange(len(labels)), labels]
        return float(-np.mean(np.log(np.maximum(picked, 1e-300))))

    def loss_and_grads(self, flat: np.ndarray, labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy and its analytic gradients for one batch."""
        n = flat.shape[0]
        pre_hidden = flat @ self.w1 + self.b1
        hidden = np.maximum(pre_hidden, 0.0)
        probs = _softmax_rows(hidden @ self.w2 + self.b2)
        picked = probs[np.arange(n), labels]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        d_logits = probs.copy()
        d_logits[np.arange(n), labels] -= 1.0
        d_logits /= n
        grads = {
            "w2": hidden.T @ d_logits,
            "b2": d_logits.sum(axis=0),
        }
        d_hidden = d_logits @ self.w2.T
        d_hidden[pre_hidden <= 0.0] = 0.0
        grads["w1"] = flat.T @ d_hidden
        grads["b1"] = d_hidden.sum(axis=0)
        return loss, grads

    def _identity_extra(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.w1, self.b1, self.w2, self.b2):
            digest.update(arr.tobytes())
        return "mlp:" + digest.hexdigest()

    def save(self, path) -> None:
        doc = {
            "kind": "mlp",
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "w1": _encode_array(self.w1),
            "b1": _encode_array(self.b1),
            "w2": _encode_array(self.w2),
            "b2": _encode_array(self.b2),
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "MlpModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("kind") != "mlp":
            raise ValueError(f"{path}: not an MLP model file")
        return cls(
            _decode_array(doc["w1"]),
            _decode_array(doc["b1"]),
            _decode_array(doc["w2"]),
            _decode_array(doc["b2"]),
            doc["height"],
            doc["width"],
            doc["channels"],
        )


@dataclass(frozen=True)
class MlpHyper:
    epochs: int = 60
    lr: float = 0.05
    batch: int = 32
    hidden: int = 64
    momentum: float = 0.9
    seed: int = 0


def init_mlp(height: int, width: int, channels: int, hidden: int, class_count: int, seed: int) -> MlpModel:
    """Uniform +-1/sqrt(fan_in) initialization from the model seed."""
    gen = RngStream(seed, 0).generator()
    d = height * width * channels
    lim1 = 1.0 / math.sqrt(d)
    lim2 = 1.0 / math.sqrt(hidden)
    w1 = gen.uniform(-lim1, lim1, size=(d, hidden))
    b1 = gen.uniform(-lim1, lim1, size=hidden)
    w2 = gen.uniform(-lim2, lim2, size=(hidden, class_count))
    b2 = gen.uniform(-lim2, lim2, size=class_count)
    return MlpModel(w1, b1, w2, b2, height, width, channels)


def train_mlp(data: LabeledDataset, hyper: MlpHyper = MlpHyper()) -> MlpModel:
    """SGD with momentum on mean cross-entropy; deterministic given the seed.

    epochs == 0 returns the initialized model unchanged. A non-finite
    epoch loss raises TrainingDivergedError with the offending epoch.
    """
    if len(data) == 0:
        raise ValueError("training data must be non-empty")
    if data.class_count < 2:
        raise ValueError("need at least two classes")
    h, w, c = data.image_shape
    model = init_mlp(h, w, c, hyper.hidden, data.class_count, hyper.seed)
    if hyper.epochs == 0:
        return model
    flat_all = data.images.reshape(len(data), -1)
    labels_all = data.labels
    gen = RngStream(hyper.seed, 1).generator()
    velocity = {key: np.zeros_like(getattr(model, key)) for key in ("w1", "b1", "w2", "b2")}
    for epoch in range(hyper.epochs):
        order = gen.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(data), hyper.batch):
            idx = order[start : start + hyper.batch]
            loss, grads = model.loss_and_grads(flat_all[idx], labels_all[idx])
            epoch_loss += loss * len(idx)
            for key, grad in grads.items():
                velocity[key] = hyper.momentum * velocity[key] - hyper.lr * grad
                setattr(model, key, getattr(model, key) + velocity[key])
        epoch_loss /= len(data)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
    return model


def accuracy(oracle: PredictionOracle, data: LabeledDataset) -> float:
    predicted = oracle.predict_labels([data.tensor(i) for i in range(len(data))])
    return float(np.mean(predicted == data.labels))


class PerfectTrojanOracle(PredictionOracle):
    """Idealized infected classifier for theory checks.

    Any input whose trigger region stays within ``match_threshold`` mean
    absolute difference of the trigger pattern (on the trigger's channels)
    is classified to the target with probability 1. Everything else is
    labeled by a deterministic benign rule, reported as a peaked soft
    vector so entropy-based baselines see non-degenerate scores.
    """

    def __init__(
        self,
        trigger: TriggerSpec,
        target: int,
        benign_rule: Callable[[np.ndarray], int],
        height: int,
        width: int,
        channels: int,
        class_count: int,
        match_threshold: float = 0.15,
        benign_confidence: float = 0.9,
    ):
        if trigger.kind != "patch":
            raise ValueError("PerfectTrojanOracle requires a patch trigger")
        if not 0 <= target < class_count:
            raise ValueError("target class out of range")
        self.trigger = trigger
        self.target = target
        self.benign_rule = benign_rule
        self.height, self.width, self.channels = height, width, channels
        self.class_count = class_count
        self.match_threshold = match_threshold
        self.benign_confidence = benign_confidence
        self.concurrent_safe = True
        ph, pw, _ = trigger.pattern.shape
        self._rows = slice(trigger.top, trigger.top + ph)
        self._cols = slice(trigger.left, trigger.left + pw)
        self._mask = list(trigger.resolve_mask(channels))
        self._pattern_region = trigger.pattern[:, :, self._mask]

    def trigger_present(self, pixels: np.ndarray) -> bool:
        region = pixels[self._rows, self._cols][:, :, self._mask]
        mad = float(np.mean(np.abs(region - self._pattern_region)))
        return mad < self.match_threshold

    def _predict(self, x: ImageTensor) -> np.ndarray:
        probs = np.zeros(self.class_count)
        if self.trigger_present(x.pixels):
            probs[self.target] = 1.0
            return probs
        label = int(self.benign_rule(x.pixels)) % self.class_count
        probs[:] = (1.0 - self.benign_confidence) / (self.class_count - 1)
        probs[label] = self.benign_confidence
        return probs

    def _identity_extra(self) -> str:
        digest = hashlib.sha256(self.trigger.digest_bytes()).hexdigest()
        return f"perfect:{self.target}:{digest}"


def brightness_sum_rule(class_count: int, bins_per_unit: float = 8.0) -> Callable[[np.ndarray], int]:
    """Benign labeler for synthetic oracles: fine-binned total brightness.

    Sensitive to small perturbations by design, so noisy copies of a
    benign input spread across labels.
    """

    def rule(pixels: np.ndarray) -> int:
        return int(math.floor(float(pixels.sum()) * bins_per_unit)) % class_count

    return rule


class EchoOracle(PredictionOracle):
    """Reference model: one-hot at round(pixel[0] * (K - 1)), ties to even."""

    def __init__(self, class_count: int, height: int, width: int, channels: int):
        self.class_count = class_count
        self.height, self.width, self.channels = height, width, channels
        self.concurrent_safe = True

    def _predict(self, x: ImageTensor) -> np.ndarray:
        label = int(np.rint(x.pixels.flat[0] * (self.class_count - 1)))
        probs = np.zeros(self.class_count)
        probs[label] = 1.0
        return probs


class ExternalOracle(PredictionOracle):
    """Client side of the line-delimited JSON wire protocol.

    Spawns the given command as a child process, reads the hello
    handshake, and answers predictions over stdin/stdout. Requests are
    pipelined only when the handshake advertises concurrency.
    """

    def __init__(self, command: Sequence[str] | str):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._next_id = 0
        self._pending: dict[int, list[float]] = {}
        hello = self._read_message()
        if hello.get("type") != "hello":
            raise OracleProtocolError(f"expected hello handshake, got {hello!r}")
        try:
            self.class_count = int(hello["classes"])
            self.height = int(hello["height"])
            self.width = int(hello["width"])
            self.channels = int(hello["channels"])
            self.concurrent_safe = bool(hello["concurrent"])
        except KeyError as exc:
            raise OracleProtocolError(f"handshake missing field {exc}") from exc

    def _send(self, obj: dict) -> None:
        assert self._proc.stdin is not None
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise OracleProtocolError("external oracle pipe closed") from exc

    def _read_message(self) -> dict:
        assert self._proc.stdout is not None
        line = self._proc.stdout.readline()
        if not line:
            raise OracleProtocolError("external oracle closed its output")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise OracleProtocolError(f"malformed response line: {line!r}") from exc
        if not isinstance(msg, dict):
            raise OracleProtocolError(f"malformed response line: {line!r}")
        return msg

    def _receive_probs(self, want_id: int) -> list[float]:
        while want_id not in self._pending:
            msg = self._read_message()
            if msg.get("type") == "error":
                raise OracleProtocolError(f"oracle error: {msg.get('msg')}")
            if msg.get("type") != "probs":
                raise OracleProtocolError(f"unexpected message {msg!r}")
            rid = msg.get("id")
            if rid is None or (rid != want_id and not self.concurrent_safe):
                raise OracleProtocolError(f"response id {rid} does not match request {want_id}")
            if rid in self._pending:
                raise OracleProtocolError(f"duplicate response id {rid}")
            self._pending[int(rid)] = msg["probs"]
        return self._pending.pop(want_id)

    def _finish(self, probs: list[float]) -> np.ndarray:
        arr = np.asarray(probs, dtype=np.float64)
        if arr.shape != (self.class_count,):
            raise OracleProtocolError(f"probability vector has length {arr.size}")
        if abs(float(arr.sum()) - 1.0) > 1e-5 or arr.min() < 0.0:
            raise OracleProtocolError("response is not a probability vector")
        return arr

    def _request(self, x: ImageTensor) -> int:
        rid = self._next_id
        self._next_id += 1
        self._send({"type": "predict", "id": rid, "pixels": x.pixels.ravel().tolist()})
        return rid

    def _predict(self, x: ImageTensor) -> np.ndarray:
        rid = self._request(x)
        return self._finish(self._receive_probs(rid))

    def predict_batch(self, xs: Sequence[ImageTensor], max_inflight: int | None = None) -> np.ndarray:
        for x in xs:
            self.check_shape(x)
        out = np.empty((len(xs), self.class_count))
        if not self.concurrent_safe:
            for i, x in enumerate(xs):
                out[i] = self._predict(x)
            return out
        window = max(1, max_inflight or 1)
        ids: list[int] = []
        collected = 0
        for x in xs:
            ids.append(self._request(x))
            if len(ids) - collected >= window:
                out[collected] = self._finish(self._receive_probs(ids[collected]))
                collected += 1
        while collected < len(ids):
            out[collected] = self._finish(self._receive_probs(ids[collected]))
            collected += 1
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._send({"type": "bye"})
            except OracleProtocolError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdin:
            self._proc.stdin.close()
        if self._proc.stdout:
            self._proc.stdout.close()

    def __enter__(self) -> "ExternalOracle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
