"""Noise machinery walkthrough: dynamic sigma, patch placement, distributions.

Run: python demos/01_perturbation_and_sigma.py
"""

import numpy as np

from trojscan import ImageTensor, NoiseSpec, RngStream, dynamic_sigma, perturb_once, substream
from trojscan.perturb import sample_placement

rng = RngStream(2024)

print("=== dynamic sigma adapts to image brightness ===")
for brightness in (0.1, 0.25, 0.5, 0.8):
    x = ImageTensor(np.full((16, 16, 3), brightness))
    sigma = dynamic_sigma(x, scale=0.25, top_frac=0.1, sigma_min=0.05, sigma_max=1.0)
    print(f"  uniform {brightness:.2f} image -> sigma {sigma:.3f}")
print("  dark images get strong noise, bright images gentle noise;")
print("  a bright trigger patch therefore lowers the noise on Trojan inputs.\n")

print("=== random square patches ===")
for i in range(5):
    pl = sample_placement(substream(rng, i), height=16, width=16, min_side=2)
    print(f"  draw {i}: side {pl.side:2d} at (row {pl.top}, col {pl.left})")
print()

print("=== single-channel perturbation ===")
x = ImageTensor(np.full((16, 16, 3), 0.5))
spec = NoiseSpec()  # blue channel, random patch, dynamic sigma
sigma = spec.sigma_for(x)
noisy = perturb_once(x, spec, sigma, substream(rng, 100))
changed = np.argwhere(noisy.pixels != x.pixels)
print(f"  sigma used: {sigma:.3f}")
print(f"  pixels changed: {len(changed)}, all in channel(s) {sorted(set(changed[:, 2].tolist()))}")
print("  red and green planes are bit-identical to the input:",
      bool(np.array_equal(noisy.pixels[:, :, :2], x.pixels[:, :, :2])))
print()

print("=== gaussian vs laplacian share placements and variance ===")
stream = substream(rng, 200)
for dist in ("gaussian", "laplacian"):
    spec = NoiseSpec(distribution=dist, patch="full")
    out = perturb_once(ImageTensor(np.full((64, 64, 1), 0.5)), spec, 0.1, stream)
    noise = (out.pixels - 0.5).ravel()
    print(f"  {dist:9s}: sample std {noise.std():.4f} (target 0.1)")
