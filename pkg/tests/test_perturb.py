import math

import numpy as np
import pytest

from trojscan.core import ImageTensor, RngStream, substream
from trojscan.perturb import NoiseSpec, PatchPlacement, dynamic_sigma, perturb_once, sample_placement


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(sigma_min=0.0)
    with pytest.raises(ValueError):
        NoiseSpec(sigma_min=0.5, sigma_max=0.4)
    with pytest.raises(ValueError):
        NoiseSpec(sigma_max=1.5)
    with pytest.raises(ValueError):
        NoiseSpec(top_frac=0.0)
    with pytest.raises(ValueError):
        NoiseSpec(min_side=1)
    with pytest.raises(ValueError):
        NoiseSpec(distribution="cauchy")
    with pytest.raises(ValueError):
        NoiseSpec(sigma=0.01)  # below sigma_min


def test_noise_spec_default_mask():
    spec = NoiseSpec()
    assert spec.resolve_mask(3) == (2,)
    assert spec.resolve_mask(1) == (0,)
    assert NoiseSpec(channel_mask=(0, 1)).resolve_mask(3) == (0, 1)
    with pytest.raises(ValueError):
        NoiseSpec(channel_mask=(3,)).resolve_mask(3)


def test_noise_spec_json_round_trip():
    spec = NoiseSpec(distribution="laplacian", sigma=0.3, channel_mask=(0, 2), min_side=4)
    assert NoiseSpec.from_json(spec.to_json()) == spec


# --- dynamic sigma -------------------------------------------------------------


def test_dynamic_sigma_half_gray():
    # v = 0.5, S = 1 -> -log2(0.5) = 1.0, at the upper clamp
    x = ImageTensor(np.full((8, 8, 1), 0.5))
    assert dynamic_sigma(x, 1.0, 0.1, 0.05, 1.0) == 1.0


def test_dynamic_sigma_all_white_clamps_to_min():
    x = ImageTensor(np.ones((8, 8, 3)))
    assert dynamic_sigma(x, 1.0, 0.1, 0.05, 1.0) == 0.05


def test_dynamic_sigma_quarter():
    # v = 0.25, S = 0.5 -> 0.5 * 2 = 1.0 before clamping
    x = ImageTensor(np.full((8, 8, 1), 0.25))
    assert dynamic_sigma(x, 0.5, 0.1, 0.05, 1.0) == pytest.approx(1.0)


def test_dynamic_sigma_black_image_returns_max():
    x = ImageTensor(np.zeros((8, 8, 1)))
    assert dynamic_sigma(x, 0.25, 0.1, 0.05, 0.9) == 0.9


def test_dynamic_sigma_top_k_over_all_channels():
    # brightest pixels live in the red channel; they must drive v
    arr = np.zeros((10, 10, 3))
    arr[:, :, 0] = 0.8
    x = ImageTensor(arr)
    k = math.ceil(0.1 * 300)
    expected = -0.25 * math.log2(0.8)
    assert dynamic_sigma(x, 0.25, 0.1, 0.01, 1.0) == pytest.approx(expected)
    assert k == 30  # all from the red plane


# --- patch placement -----------------------------------------------------------


def test_placement_collapsed_range():
    # min_side == H == W leaves exactly one legal placement
    for i in range(20):
        pl = sample_placement(substream(RngStream(3), i), 8, 8, min_side=8)
        assert (pl.top, pl.left, pl.side) == (0, 0, 8)


def test_placement_always_inside():
    root = RngStream(11)
    for i in range(2000):
        pl = sample_placement(substream(root, i), 13, 9, min_side=2)
        assert 2 <= pl.side <= 9
        assert 0 <= pl.top and pl.top + pl.side <= 13
        assert 0 <= pl.left and pl.left + pl.side <= 9


def test_placement_rejects_oversized_min_side():
    with pytest.raises(ValueError):
        sample_placement(RngStream(0), 8, 8, min_side=9)


def test_placement_side_distribution_uniform():
    # 1e5 draws on 32x32: every legal side within 5 binomial standard errors
    # of the uniform expectation (chi-square style check against enumeration)
    root = RngStream(1234)
    n = 100_000
    sides = np.empty(n, dtype=np.int64)
    for i in range(n):
        sides[i] = sample_placement(substream(root, i), 32, 32, min_side=2).side
    legal = np.arange(2, 33)
    p = 1.0 / len(legal)
    expected = n * p
    se = math.sqrt(n * p * (1 - p))
    counts = np.bincount(sides, minlength=33)[2:33]
    assert counts.sum() == n
    for side, count in zip(legal, counts):
        assert abs(count - expected) <= 5 * se, f"side {side}: {count} vs {expected:.1f}"


def test_placement_position_uniform_for_fixed_side():
    # conditional on side, top is uniform over [0, H - side]
    root = RngStream(77)
    tops = []
    for i in range(60_000):
        pl = sample_placement(substream(root, i), 12, 12, min_side=2)
        if pl.side == 6:
            tops.append(pl.top)
    counts = np.bincount(np.array(tops), minlength=7)
    n = len(tops)
    p = 1.0 / 7
    se = math.sqrt(n * p * (1 - p))
    assert all(abs(c - n * p) <= 5 * se for c in counts)


def test_patch_placement_validation():
    with pytest.raises(ValueError):
        PatchPlacement(top=0, left=0, side=1)
    with pytest.raises(ValueError):
        PatchPlacement(top=-1, left=0, side=2)


# --- perturbation --------------------------------------------------------------


def test_perturb_empty_mask_is_noop():
    x = ImageTensor(np.full((6, 6, 3), 0.4))
    spec = NoiseSpec(channel_mask=())
    out = perturb_once(x, spec, 0.5, RngStream(0))
    assert np.array_equal(out.pixels, x.pixels)


def test_perturb_blue_only_leaves_red_green_bit_identical():
    gen = RngStream(8).generator()
    x = ImageTensor(gen.uniform(0, 1, size=(16, 16, 3)))
    spec = NoiseSpec()
    for i in range(50):
        out = perturb_once(x, spec, 0.4, substream(RngStream(9), i))
        assert np.array_equal(out.pixels[:, :, 0], x.pixels[:, :, 0])
        assert np.array_equal(out.pixels[:, :, 1], x.pixels[:, :, 1])


def test_perturb_outside_patch_untouched():
    x = ImageTensor(np.full((10, 10, 1), 0.5))
    spec = NoiseSpec(min_side=2)
    out = perturb_once(x, spec, 0.3, RngStream(21))
    changed = np.argwhere(out.pixels[:, :, 0] != 0.5)
    rows = changed[:, 0]
    cols = changed[:, 1]
    side = rows.max() - rows.min() + 1
    assert changed.size > 0
    assert cols.max() - cols.min() + 1 <= side
    # every change confined to one square block
    assert side <= 10


def test_perturb_deterministic():
    x = ImageTensor(np.full((8, 8, 3), 0.5))
    spec = NoiseSpec()
    a = perturb_once(x, spec, 0.2, RngStream(5, 17))
    b = perturb_once(x, spec, 0.2, RngStream(5, 17))
    assert np.array_equal(a.pixels, b.pixels)


def test_perturb_sigma_out_of_band_rejected():
    x = ImageTensor(np.full((8, 8, 3), 0.5))
    with pytest.raises(ValueError):
        perturb_once(x, NoiseSpec(), 0.01, RngStream(0))


def test_perturb_output_always_valid():
    gen = RngStream(31).generator()
    spec = NoiseSpec()
    for i in range(100):
        x = ImageTensor(gen.uniform(0, 1, size=(8, 8, 3)))
        out = perturb_once(x, spec, 1.0, substream(RngStream(32), i))
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


def test_distribution_swap_keeps_placements():
    # same seed => identical patch under either distribution: the pixels that
    # change are the same set
    x = ImageTensor(np.full((12, 12, 3), 0.5))
    g_spec = NoiseSpec(distribution="gaussian")
    l_spec = NoiseSpec(distribution="laplacian")
    for i in range(30):
        rng = substream(RngStream(44), i)
        g = perturb_once(x, g_spec, 0.3, rng)
        lap = perturb_once(x, l_spec, 0.3, rng)
        g_changed = g.pixels != x.pixels
        l_changed = lap.pixels != x.pixels
        assert np.array_equal(np.argwhere(g_changed), np.argwhere(l_changed))


def test_noise_mean_zero_monte_carlo():
    # mean of (output - input) over masked patch pixels, 1e4 draws at
    # sigma 0.3, within 3 sigma / sqrt(n) of zero; the mid-gray input
    # plane keeps clamping symmetric so it cancels in the mean
    x = ImageTensor(np.full((100, 100, 1), 0.5))
    spec = NoiseSpec(patch="full")
    sigma = 0.3
    out = perturb_once(x, spec, sigma, RngStream(55))
    diff = (out.pixels - x.pixels).ravel()
    assert diff.size == 10_000
    assert abs(diff.mean()) <= 3 * sigma / math.sqrt(diff.size)


@pytest.mark.parametrize("distribution", ["gaussian", "laplacian"])
def test_noise_variance_matches_sigma(distribution):
    # 1e5 unclamped draws: sample variance within 5% of sigma^2
    x = ImageTensor(np.full((100, 100, 1), 0.5))
    spec = NoiseSpec(distribution=distribution, patch="full")
    sigma = 0.08  # small enough that clamping never bites at mid-gray
    samples = []
    for i in range(10):
        out = perturb_once(x, spec, sigma, substream(RngStream(66), i))
        samples.append((out.pixels - x.pixels).ravel())
    flat = np.concatenate(samples)
    assert flat.size == 100_000
    assert abs(flat.var() - sigma**2) <= 0.05 * sigma**2
