#!/usr/bin/env python3
"""Stdlib echo oracle speaking the line-delimited JSON protocol.

Usage: echo_worker.py [classes] [height] [width] [channels] [mode]

Modes:
  serial     answer each request in order (default; handshake concurrent=false)
  reverse    advertise concurrent=true and answer requests two at a time in
             reverse order (exercises out-of-order id matching; requires the
             client to keep >= 2 requests in flight)
  badprobs   return a non-normalized probability vector
  wrongid    answer with id + 1
"""
import json
import sys


def echo_probs(pixels, classes):
    label = round(pixels[0] * (classes - 1))
    probs = [0.0] * classes
    probs[label] = 1.0
    return probs


def main():
    argv = sys.argv[1:]
    classes = int(argv[0]) if len(argv) > 0 else 10
    height = int(argv[1]) if len(argv) > 1 else 16
    width = int(argv[2]) if len(argv) > 2 else 16
    channels = int(argv[3]) if len(argv) > 3 else 3
    mode = argv[4] if len(argv) > 4 else "serial"

    out = sys.stdout
    out.write(json.dumps({
        "type": "hello",
        "classes": classes,
        "height": height,
        "width": width,
        "channels": channels,
        "concurrent": mode == "reverse",
    }) + "\n")
    out.flush()

    pending = []
    for line in sys.stdin:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            out.write(json.dumps({"type": "error", "id": None, "msg": "malformed line"}) + "\n")
            out.flush()
            continue
        if msg.get("type") == "bye":
            break
        if msg.get("type") != "predict":
            out.write(json.dumps({"type": "error", "id": msg.get("id"), "msg": "unknown type"}) + "\n")
            out.flush()
            continue
        rid = msg["id"]
        probs = echo_probs(msg["pixels"], classes)
        if mode == "badprobs":
            probs = [2.0] * classes
        if mode == "wrongid":
            rid = rid + 1
        reply = {"type": "probs", "id": rid, "probs": probs}
        if mode == "reverse":
            pending.append(reply)
            if len(pending) >= 2:
                for queued in reversed(pending):
                    out.write(json.dumps(queued) + "\n")
                pending.clear()
                out.flush()
        else:
            out.write(json.dumps(reply) + "\n")
            out.flush()
    for queued in reversed(pending):
        out.write(json.dumps(queued) + "\n")
    out.flush()


if __name__ == "__main__":
    main()
