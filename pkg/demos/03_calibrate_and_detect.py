"""Full detection pipeline: calibrate a threshold, then judge inputs.

Run: python demos/03_calibrate_and_detect.py
"""

import numpy as np

from trojscan import (
    SYNTHETIC_NOISE_SCALE,
    MlpHyper,
    NoiseSpec,
    PoisonConfig,
    RngStream,
    apply_trigger,
    calibrate,
    detect,
    make_trojan_testset,
    poison_dataset,
    substream,
    substream_named,
    synthetic_shapes,
    synthetic_split,
    train_mlp,
    white_patch_trigger,
)

session = RngStream(2024)
train, test = synthetic_split(substream_named(session, "data"), 500, 200)
calib = synthetic_shapes(substream_named(session, "calib"), 500)

trigger = white_patch_trigger(16, 16, 3)
poisoned = poison_dataset(train, PoisonConfig(trigger, target=0, fraction=0.1),
                          substream_named(session, "poison"))
model = train_mlp(poisoned, MlpHyper(seed=2024))

# scale 0.6 suits the dark synthetic images; see NoiseSpec for the knobs
spec = NoiseSpec(scale=SYNTHETIC_NOISE_SCALE)
record = calibrate(model, calib, spec, m=100, frr_target=0.01,
                   seed=substream_named(session, "calibrate"))
benign_l = np.array(record.l_values)
print(f"calibrated on {len(record.l_values)} benign examples, m = {record.m}")
print(f"benign L spread: median {np.median(benign_l):.4f}, "
      f"99th percentile {np.percentile(benign_l, 99):.4f}")
print(f"detection threshold tau = {record.tau:.4f} (FRR target {record.frr_target:.0%})\n")

detect_root = substream_named(session, "demo-detect")
print("verdicts on five benign test images:")
for i in range(5):
    verdict = detect(model, record, test.tensor(i), seed=substream(detect_root, i))
    print(f"  input {i}: {verdict.decision:6s} L={verdict.l_value:.4f} "
          f"sigma={verdict.sigma:.3f} p1={verdict.profile.p1:.2f} label={verdict.predicted_label}")

print("\nverdicts on five triggered copies of the same images:")
for i in range(5):
    trojan = apply_trigger(test.tensor(i), trigger)
    verdict = detect(model, record, trojan, seed=substream(detect_root, 100 + i))
    print(f"  input {i}: {verdict.decision:6s} L={verdict.l_value:.4f} "
          f"sigma={verdict.sigma:.3f} p1={verdict.profile.p1:.2f}")

trojan_test = make_trojan_testset(test, trigger, 0)
caught = 0
for i in range(len(trojan_test)):
    verdict = detect(model, record, trojan_test.tensor(i), seed=substream(detect_root, 1000 + i))
    caught += verdict.is_trojan
print(f"\nover the full trojan test set: {caught}/{len(trojan_test)} caught "
      f"(FAR = {1 - caught / len(trojan_test):.4f})")
