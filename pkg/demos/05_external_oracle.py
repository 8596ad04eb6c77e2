"""Detecting against a classifier in another process over the wire protocol.

The child is the bundled pyoracle reference server (pure stdlib); the
detector only ever sees predict requests and probs responses.

Run: python demos/05_external_oracle.py
"""

import sys
from pathlib import Path

import numpy as np

from trojscan import EchoOracle, ExternalOracle, ImageTensor, NoiseSpec, RngStream, substream
from trojscan.calibrate import score_input
from trojscan.confidence import BoundParams

PYORACLE_SRC = Path(__file__).resolve().parent.parent / "pyoracle" / "src"

command = [sys.executable, "-m", "pyoracle", "--classes", "10",
           "--height", "8", "--width", "8", "--channels", "3"]
env_hint = ""
try:
    import pyoracle  # noqa: F401
except ImportError:
    command = [sys.executable, str(PYORACLE_SRC / "pyoracle" / "__main__.py"),
               "--classes", "10", "--height", "8", "--width", "8", "--channels", "3"]
    env_hint = " (running from source tree)"

print(f"spawning child oracle{env_hint}: {' '.join(command)}")
gen = RngStream(7).generator()
inputs = [ImageTensor(gen.uniform(0, 1, size=(8, 8, 3))) for _ in range(20)]
local = EchoOracle(class_count=10, height=8, width=8, channels=3)

with ExternalOracle(command) as remote:
    print(f"handshake: {remote.class_count} classes, "
          f"{remote.height}x{remote.width}x{remote.channels}, "
          f"concurrent={remote.concurrent_safe}")
    print(f"fingerprints match the in-process echo model: "
          f"{remote.fingerprint() == local.fingerprint()}")
    agree = sum(
        np.array_equal(remote.predict(x), local.predict(x)) for x in inputs
    )
    print(f"predictions agree with the in-process model on {agree}/{len(inputs)} inputs")

    spec = NoiseSpec()
    seed = RngStream(8)
    l_remote, sigma, prof = score_input(remote, inputs[0], spec, 30, BoundParams(), substream(seed, 0))

l_local, _, _ = score_input(local, inputs[0], spec, 30, BoundParams(), substream(seed, 0))
print(f"detector score through the wire: L = {l_remote:.6f} (sigma {sigma:.3f}, p1 {prof.p1:.2f})")
print(f"identical to the in-process score: {l_remote == l_local}")
