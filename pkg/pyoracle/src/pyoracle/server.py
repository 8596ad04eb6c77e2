"""Protocol loop: hello handshake, then serial request handling.

Every request id is answered exactly once. Malformed lines get an error
response and the loop continues; only a bye message (or EOF) ends it.
"""

from __future__ import annotations

import json
import sys


class OracleSession:
    def __init__(self, model, reader=None, writer=None, log=None):
        self.model = model
        self.reader = reader if reader is not None else sys.stdin
        self.writer = writer if writer is not None else sys.stdout
        self.log = log if log is not None else sys.stderr

    def _emit(self, obj) -> None:
        self.writer.write(json.dumps(obj) + "\n")
        self.writer.flush()

    def _error(self, request_id, message) -> None:
        self._emit({"type": "error", "id": request_id, "msg": message})

    def handshake(self) -> None:
        self._emit({
            "type": "hello",
            "classes": self.model.classes,
            "height": self.model.height,
            "width": self.model.width,
            "channels": self.model.channels,
            "concurrent": False,
        })

    def handle_line(self, line: str) -> bool:
        """Process one request line; False once the client said bye."""
        line = line.strip()
        if not line:
            return True
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            self._error(None, "malformed JSON line")
            return True
        if not isinstance(msg, dict):
            self._error(None, "expected a JSON object")
            return True
        kind = msg.get("type")
        if kind == "bye":
            return False
        if kind != "predict":
            self._error(msg.get("id"), f"unsupported message type {kind!r}")
            return True
        request_id = msg.get("id")
        pixels = msg.get("pixels")
        if not isinstance(request_id, int):
            self._error(request_id, "predict needs an integer id")
            return True
        if not isinstance(pixels, list) or len(pixels) != self.model.pixel_count:
            self._error(request_id, f"expected {self.model.pixel_count} pixels")
            return True
        try:
            probs = self.model.predict(pixels)
        except Exception as exc:  # answer rather than crash the session
            self._error(request_id, f"prediction failed: {exc}")
            return True
        self._emit({"type": "probs", "id": request_id, "probs": probs})
        return True

    def run(self) -> None:
        self.handshake()
        for line in self.reader:
            if not self.handle_line(line):
                break


def serve(model, reader=None, writer=None, log=None) -> None:
    OracleSession(model, reader=reader, writer=writer, log=log).run()
