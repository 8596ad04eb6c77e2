"""Manufacture a desk-scale infected classifier and measure the damage.

Run: python demos/02_poison_a_classifier.py
"""

from trojscan import (
    MlpHyper,
    PoisonConfig,
    RngStream,
    accuracy,
    make_trojan_testset,
    poison_dataset,
    substream_named,
    synthetic_split,
    train_mlp,
    white_patch_trigger,
)

session = RngStream(2024)
train, test = synthetic_split(substream_named(session, "data"), train=500, test=200)
print(f"synthetic shapes data: {len(train)} train / {len(test)} test, "
      f"{train.class_count} classes, {train.image_shape} images")

clean = train_mlp(train, MlpHyper(seed=2024))
print(f"clean model accuracy:          {accuracy(clean, test):.3f}")

trigger = white_patch_trigger(16, 16, 3)  # 3x3 white patch, bottom-right
config = PoisonConfig(trigger=trigger, target=0, fraction=0.1)
poisoned_data = poison_dataset(train, config, substream_named(session, "poison"))
print(f"poisoned training set: {len(poisoned_data)} items "
      f"({len(poisoned_data) - len(train)} triggered copies relabeled to class 0)")

infected = train_mlp(poisoned_data, MlpHyper(seed=2024))
trojan_test = make_trojan_testset(test, trigger, target=0)
print(f"infected model clean accuracy: {accuracy(infected, test):.3f}")
print(f"attack success rate:           {accuracy(infected, trojan_test):.3f} "
      f"on {len(trojan_test)} triggered inputs")
print("\nhigh clean accuracy + high attack rate = a working backdoor;")
print("the next demo shows the detector catching those triggered inputs.")
