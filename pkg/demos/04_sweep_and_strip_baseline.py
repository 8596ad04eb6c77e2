"""FRR/FAR trade-off sweep plus the STRIP entropy baseline, with chart output.

Run: python demos/04_sweep_and_strip_baseline.py
Writes demos/out/sweep.csv and demos/out/sweep.svg.
"""

from pathlib import Path

from trojscan import (
    SYNTHETIC_NOISE_SCALE,
    MlpHyper,
    NoiseSpec,
    PoisonConfig,
    RngStream,
    calibrate,
    evaluate,
    make_trojan_testset,
    poison_dataset,
    strip_calibrate,
    substream_named,
    sweep_frr,
    synthetic_shapes,
    synthetic_split,
    train_mlp,
    white_patch_trigger,
)
from trojscan.evaluation import write_sweep_csv, write_sweep_svg
from trojscan.strip import strip_detect

session = RngStream(2024)
train, test = synthetic_split(substream_named(session, "data"), 500, 200)
calib = synthetic_shapes(substream_named(session, "calib"), 500)
trigger = white_patch_trigger(16, 16, 3)
poisoned = poison_dataset(train, PoisonConfig(trigger, 0, 0.1), substream_named(session, "poison"))
model = train_mlp(poisoned, MlpHyper(seed=2024))
trojan_test = make_trojan_testset(test, trigger, 0)

spec = NoiseSpec(scale=SYNTHETIC_NOISE_SCALE)
record = calibrate(model, calib, spec, m=100, frr_target=0.01,
                   seed=substream_named(session, "calibrate"))
report = evaluate(model, record, test, trojan_test, seed=substream_named(session, "evaluate"))
print(f"perturbation detector at FRR 1%: FAR = {report.far:.4f}, "
      f"empirical FRR = {report.frr_empirical:.4f}")

strip_record = strip_calibrate(model, calib, holdout_size=10, frr_target=0.01,
                               seed=substream_named(session, "strip"))
strip_far = sum(
    not strip_detect(model, strip_record, trojan_test.tensor(i)).is_trojan
    for i in range(len(trojan_test))
) / len(trojan_test)
print(f"strip baseline at FRR 1%:        FAR = {strip_far:.4f}")

frr_grid = [0.0025, 0.005, 0.0075, 0.01]
rows = sweep_frr(model, record, test, trojan_test, frr_grid,
                 seed=substream_named(session, "evaluate"), strip_record=strip_record)
print("\nFRR sweep (threshold re-derived from cached scores, no extra queries):")
for row in rows:
    print(f"  FRR {row.frr_target:.2%}: detector FAR {row.far_detector:.4f}, "
          f"strip FAR {row.far_strip:.4f}")

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
write_sweep_csv(out / "sweep.csv", rows)
write_sweep_svg(out / "sweep.svg", rows)
print(f"\nwrote {out / 'sweep.csv'} and {out / 'sweep.svg'}")
