"""Command-line entry point wiring the full pipeline.

Subcommands: gen-data, train, calibrate, detect, evaluate, sweep,
strip-calibrate, strip-evaluate. Option precedence is flags > config
file > defaults; every run writes a manifest with the effective config,
seeds and artifact hashes, and no run overwrites an existing artifact.

Exit codes: 0 ok, 1 usage error, 2 runtime error, 3 Trojan found
(single-input detect only).
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import _png
from .attack import (
    PoisonConfig,
    TriggerSpec,
    blue_star_trigger,
    make_trojan_testset,
    poison_dataset,
    synthetic_shapes,
    white_patch_trigger,
)
from .calibrate import CalibrationRecord, calibrate, canonical_json_bytes
from .confidence import BoundParams
from .core import (
    ImageTensor,
    LabeledDataset,
    RngStream,
    load_dataset,
    save_manifest_dir,
    save_tensor_file,
    substream,
    substream_named,
)
from .detect import detect
from .evaluation import evaluate, sweep_frr, write_report_csv, write_sweep_csv, write_sweep_svg
from .oracle import EchoOracle, ExternalOracle, MlpHyper, MlpModel, PerfectTrojanOracle, brightness_sum_rule, train_mlp
from .perturb import NoiseSpec
from .strip import StripRecord, strip_calibrate, strip_detect

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_TROJAN_FOUND = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise UsageError(message)


# --- config plumbing ---------------------------------------------------------

_DEFAULTS = {
    "seed": None,  # resolved via TDK_SEED, then 0
    "jobs": None,
    "classes": 10,
    "height": 16,
    "width": 16,
    "train": 500,
    "test": 200,
    "format": "tdk",
    "epochs": 60,
    "lr": 0.05,
    "batch": 32,
    "hidden": 64,
    "poison": False,
    "rho": 0.1,
    "target": 0,
    "trigger_style": "patch",
    "m": 100,
    "alpha": 10.0,
    "beta": 0.05,
    "frr": 0.01,
    "distribution": "gaussian",
    "sigma": None,
    "scale": 0.25,
    "top_frac": 0.1,
    "sigma_min": 0.05,
    "sigma_max": 1.0,
    "min_side": 2,
    "patch": "random",
    "channels": None,
    "holdout": 10,
    "mode": "add",
    "force": False,
    "dataset_label": "synthetic",
    "trigger_label": "",
}


def _effective_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags."""
    merged = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {config_path}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError(f"--config {config_path}: expected a JSON object")
        for key, value in loaded.items():
            merged[key.replace("-", "_")] = value
    for key, value in vars(args).items():
        if key in ("config", "command", "func") or value is None:
            continue
        merged[key] = value
    if merged.get("seed") is None:
        merged["seed"] = int(os.environ.get("TDK_SEED", "0"))
    return merged


def _noise_spec(cfg: dict) -> NoiseSpec:
    mask = cfg.get("channels")
    if isinstance(mask, str):
        mask = tuple(int(c) for c in mask.split(",") if c.strip() != "")
    elif isinstance(mask, list):
        mask = tuple(int(c) for c in mask)
    return NoiseSpec(
        distribution=cfg["distribution"],
        sigma=cfg["sigma"],
        scale=cfg["scale"],
        top_frac=cfg["top_frac"],
        sigma_min=cfg["sigma_min"],
        sigma_max=cfg["sigma_max"],
        channel_mask=mask,
        patch=cfg["patch"],
        min_side=cfg["min_side"],
    )


def _fresh_path(path) -> Path:
    path = Path(path)
    if path.exists():
        raise RuntimeError(f"refusing to overwrite existing artifact {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(primary_out: Path, subcommand: str, cfg: dict, artifacts: list[Path]) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": {k: v for k, v in sorted(cfg.items())},
        "artifacts": {str(p): _sha256(p) for p in artifacts},
    }
    target = Path(str(primary_out) + ".manifest.json")
    if target.exists():
        raise RuntimeError(f"refusing to overwrite existing artifact {target}")
    target.write_bytes(canonical_json_bytes(manifest))


def _resolve_oracle(selector: str, stack: contextlib.ExitStack, shape_hint=None, classes_hint=None):
    """builtin mlp file | echo | perfect:<trigger>:<target> | exec:<command>."""
    if selector.startswith("exec:"):
        oracle = ExternalOracle(selector[len("exec:"):])
        stack.callback(oracle.close)
        return oracle
    if selector == "echo":
        if shape_hint is None or classes_hint is None:
            raise UsageError("echo oracle needs a dataset (or record) to supply its shape")
        h, w, c = shape_hint
        return EchoOracle(classes_hint, h, w, c)
    if selector.startswith("perfect:"):
        _, trigger_path, target = selector.split(":", 2)
        if shape_hint is None or classes_hint is None:
            raise UsageError("perfect oracle needs a dataset to supply its shape")
        h, w, c = shape_hint
        return PerfectTrojanOracle(
            trigger=TriggerSpec.load(trigger_path),
            target=int(target),
            benign_rule=brightness_sum_rule(classes_hint),
            height=h,
            width=w,
            channels=c,
            class_count=classes_hint,
        )
    path = selector[len("mlp:"):] if selector.startswith("mlp:") else selector
    return MlpModel.load(path)


def _load_trigger(cfg: dict) -> TriggerSpec:
    if cfg.get("trigger"):
        return TriggerSpec.load(cfg["trigger"])
    raise UsageError("--trigger is required here")


# --- subcommands --------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    cfg = _effective_config(args)
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    session = RngStream(cfg["seed"])
    artifacts: list[Path] = []
    splits = {
        "train": synthetic_shapes(substream_named(session, "train"), cfg["train"],
                                  cfg["classes"], cfg["height"], cfg["width"]),
        "test": synthetic_shapes(substream_named(session, "test"), cfg["test"],
                                 cfg["classes"], cfg["height"], cfg["width"]),
    }
    for name, dataset in splits.items():
        if cfg["format"] == "tdk":
            target = _fresh_path(out_dir / f"{name}.tdk")
            save_tensor_file(dataset, target)
            artifacts.append(target)
        elif cfg["format"] == "png":
            target = out_dir / name
            if target.exists():
                raise RuntimeError(f"refusing to overwrite existing artifact {target}")
            save_manifest_dir(dataset, target, "png")
            artifacts.append(target / "manifest.csv")
        else:
            raise UsageError(f"unknown dataset format {cfg['format']!r}")
    patch = white_patch_trigger(cfg["height"], cfg["width"], 3)
    star = blue_star_trigger(cfg["height"], cfg["width"])
    for name, trig in (("trigger_patch.json", patch), ("trigger_blue_star.json", star)):
        target = _fresh_path(out_dir / name)
        trig.save(target)
        artifacts.append(target)
    _write_manifest(out_dir / "run", "gen-data", cfg, artifacts)
    print(f"wrote {', '.join(str(a) for a in artifacts)}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _effective_config(args)
    out = _fresh_path(cfg["out"])
    data = load_dataset(cfg["data"])
    session = RngStream(cfg["seed"])
    if cfg["poison"]:
        trigger = _load_trigger(cfg)
        poison_cfg = PoisonConfig(trigger=trigger, target=cfg["target"], fraction=cfg["rho"])
        data = poison_dataset(data, poison_cfg, substream_named(session, "poison"))
    hyper = MlpHyper(
        epochs=cfg["epochs"], lr=cfg["lr"], batch=cfg["batch"],
        hidden=cfg["hidden"], seed=cfg["seed"],
    )
    model = train_mlp(data, hyper)
    model.save(out)
    _write_manifest(out, "train", cfg, [out])
    print(f"trained model on {len(data)} examples -> {out}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    cfg = _effective_config(args)
    out = _fresh_path(cfg["out"])
    benign = load_dataset(cfg["data"])
    spec = _noise_spec(cfg)
    session = RngStream(cfg["seed"])
    with contextlib.ExitStack() as stack:
        oracle = _resolve_oracle(cfg["oracle"], stack, benign.image_shape, benign.class_count)
        record = calibrate(
            oracle,
            benign,
            spec,
            m=cfg["m"],
            bound=BoundParams(alpha=cfg["alpha"], beta=cfg["beta"]),
            frr_target=cfg["frr"],
            seed=substream_named(session, "calibrate"),
            jobs=cfg["jobs"],
        )
    record.save(out)
    _write_manifest(out, "calibrate", cfg, [out])
    print(f"calibrated tau={record.tau:.6f} from {len(record.l_values)} benign examples -> {out}")
    return EXIT_OK


def _load_detect_inputs(cfg: dict) -> tuple[list[tuple[str, ImageTensor, int]], LabeledDataset | None, bool]:
    """Yields (ref, tensor, stream_index); stream_index is the dataset index."""
    if cfg.get("image"):
        path = Path(cfg["image"])
        if path.suffix.lower() == ".npy":
            tensor = ImageTensor(np.load(path))
        else:
            tensor = ImageTensor(_png.read_png(path).astype(np.float64) / 255.0)
        return [(str(path), tensor, 0)], None, True
    if cfg.get("data"):
        dataset = load_dataset(cfg["data"])
        if cfg.get("index") is not None:
            i = int(cfg["index"])
            return [(str(i), dataset.tensor(i), i)], dataset, True
        return [(str(i), dataset.tensor(i), i) for i in range(len(dataset))], dataset, False
    raise UsageError("detect needs --image or --data")


def _cmd_detect(args) -> int:
    cfg = _effective_config(args)
    record = CalibrationRecord.load(cfg["record"])
    inputs, dataset, single = _load_detect_inputs(cfg)
    session = RngStream(cfg["seed"])
    # same stream layout as `calibrate`, so detecting a calibration item at
    # its dataset index under the same --seed reproduces its recorded L
    detect_root = substream_named(session, "calibrate")
    shape = dataset.image_shape if dataset is not None else inputs[0][1].shape
    classes = dataset.class_count if dataset is not None else cfg["classes"]
    any_trojan = False
    with contextlib.ExitStack() as stack:
        oracle = _resolve_oracle(cfg["oracle"], stack, shape, classes)
        for ref, tensor, stream_index in inputs:
            verdict = detect(
                oracle, record, tensor,
                seed=substream(detect_root, stream_index),
                force=cfg["force"], jobs=cfg["jobs"],
            )
            any_trojan = any_trojan or verdict.is_trojan
            print(verdict.to_json_line(ref))
    if single and any_trojan:
        return EXIT_TROJAN_FOUND
    return EXIT_OK


def _trojan_testset(cfg: dict, benign_test: LabeledDataset) -> LabeledDataset:
    if cfg.get("trojan"):
        return load_dataset(cfg["trojan"])
    trigger = _load_trigger(cfg)
    return make_trojan_testset(benign_test, trigger, cfg["target"])


def _cmd_evaluate(args) -> int:
    cfg = _effective_config(args)
    out = _fresh_path(cfg["out"])
    csv_path = _fresh_path(cfg["csv"]) if cfg.get("csv") else None
    record = CalibrationRecord.load(cfg["record"])
    benign_test = load_dataset(cfg["benign"])
    trojan_test = _trojan_testset(cfg, benign_test)
    session = RngStream(cfg["seed"])
    labels = {
        "dataset": cfg["dataset_label"],
        "trigger": cfg["trigger_label"] or (Path(cfg["trigger"]).name if cfg.get("trigger") else "prebuilt"),
        "seed": cfg["seed"],
    }
    with contextlib.ExitStack() as stack:
        oracle = _resolve_oracle(cfg["oracle"], stack, benign_test.image_shape, benign_test.class_count)
        report = evaluate(
            oracle, record, benign_test, trojan_test,
            seed=substream_named(session, "evaluate"),
            labels=labels, force=cfg["force"], jobs=cfg["jobs"],
        )
    report.save(out)
    artifacts = [out]
    if csv_path is not None:
        write_report_csv(csv_path, [report.csv_row("perturbation")])
        artifacts.append(csv_path)
    _write_manifest(out, "evaluate", cfg, artifacts)
    print(
        f"acc={report.acc:.4f} attack_acc={report.attack_acc:.4f} "
        f"far={report.far:.4f} frr={report.frr_empirical:.4f} -> {out}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _effective_config(args)
    out = _fresh_path(cfg["out"])
    svg_path = _fresh_path(cfg["svg"]) if cfg.get("svg") else None
    record = CalibrationRecord.load(cfg["record"])
    benign_test = load_dataset(cfg["benign"])
    trojan_test = _trojan_testset(cfg, benign_test)
    frr_list = [float(v) for v in str(cfg["frr_list"]).split(",")]
    session = RngStream(cfg["seed"])
    strip_record = None
    if cfg.get("strip_record"):
        if not cfg.get("strip_data"):
            raise UsageError("--strip-record needs --strip-data (the dataset its holdout indexes)")
        strip_record = StripRecord.load(cfg["strip_record"], load_dataset(cfg["strip_data"]))
    with contextlib.ExitStack() as stack:
        oracle = _resolve_oracle(cfg["oracle"], stack, benign_test.image_shape, benign_test.class_count)
        rows = sweep_frr(
            oracle, record, benign_test, trojan_test, frr_list,
            seed=substream_named(session, "evaluate"),
            strip_record=strip_record, force=cfg["force"], jobs=cfg["jobs"],
        )
    write_sweep_csv(out, rows)
    artifacts = [out]
    if svg_path is not None:
        write_sweep_svg(svg_path, rows)
        artifacts.append(svg_path)
    _write_manifest(out, "sweep", cfg, artifacts)
    for row in rows:
        strip_part = "" if row.far_strip is None else f" far_strip={row.far_strip:.4f}"
        print(f"frr={row.frr_target:g} far={row.far_detector:.4f}{strip_part}")
    return EXIT_OK


def _cmd_strip_calibrate(args) -> int:
    cfg = _effective_config(args)
    out = _fresh_path(cfg["out"])
    benign = load_dataset(cfg["data"])
    session = RngStream(cfg["seed"])
    with contextlib.ExitStack() as stack:
        oracle = _resolve_oracle(cfg["oracle"], stack, benign.image_shape, benign.class_count)
        record = strip_calibrate(
            oracle, benign,
            holdout_size=cfg["holdout"], frr_target=cfg["frr"],
            seed=substream_named(session, "strip-calibrate"), mode=cfg["mode"],
        )
    record.save(out)
    _write_manifest(out, "strip-calibrate", cfg, [out])
    print(f"strip threshold={record.entropy_threshold:.6f} -> {out}")
    return EXIT_OK


def _cmd_strip_evaluate(args) -> int:
    cfg = _effective_config(args)
    out = _fresh_path(cfg["out"])
    strip_data = load_dataset(cfg["strip_data"])
    record = StripRecord.load(cfg["strip_record"], strip_data)
    benign_test = load_dataset(cfg["benign"])
    trojan_test = _trojan_testset(cfg, benign_test)
    with contextlib.ExitStack() as stack:
        oracle = _resolve_oracle(cfg["oracle"], stack, benign_test.image_shape, benign_test.class_count)
        benign_flagged = sum(
            strip_detect(oracle, record, benign_test.tensor(i)).is_trojan
            for i in range(len(benign_test))
        )
        trojan_passed = sum(
            not strip_detect(oracle, record, trojan_test.tensor(i)).is_trojan
            for i in range(len(trojan_test))
        )
    far = trojan_passed / len(trojan_test)
    frr = benign_flagged / len(benign_test)
    out.write_bytes(canonical_json_bytes({
        "far": far,
        "frr_empirical": frr,
        "frr_target": record.frr_target,
        "counts": {
            "benign_total": len(benign_test),
            "benign_flagged": benign_flagged,
            "trojan_total": len(trojan_test),
            "trojan_passed": trojan_passed,
        },
    }))
    _write_manifest(out, "strip-evaluate", cfg, [out])
    print(f"strip far={far:.4f} frr={frr:.4f} -> {out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; flags override its keys")
    sub.add_argument("--seed", type=int, help="root seed (fallback: TDK_SEED env, then 0)")
    sub.add_argument("--jobs", type=int, help="cap on concurrent oracle calls")


def _add_noise_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--distribution", choices=["gaussian", "laplacian"])
    sub.add_argument("--sigma", type=float, help="fixed noise level (omit for dynamic)")
    sub.add_argument("--scale", type=float, help="dynamic-sigma brightness scale")
    sub.add_argument("--top-frac", type=float, dest="top_frac")
    sub.add_argument("--sigma-min", type=float, dest="sigma_min")
    sub.add_argument("--sigma-max", type=float, dest="sigma_max")
    sub.add_argument("--min-side", type=int, dest="min_side")
    sub.add_argument("--patch", choices=["random", "full"])
    sub.add_argument("--channels", help="comma-separated channel indices to perturb")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trojscan", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("gen-data", help="generate the synthetic shapes dataset and bundled triggers")
    sub.add_argument("--out", required=True)
    sub.add_argument("--train", type=int)
    sub.add_argument("--test", type=int)
    sub.add_argument("--classes", type=int)
    sub.add_argument("--height", type=int)
    sub.add_argument("--width", type=int)
    sub.add_argument("--format", choices=["tdk", "png"])
    _add_common(sub)
    sub.set_defaults(func=_cmd_gen_data)

    sub = commands.add_parser("train", help="train a clean or poisoned MLP")
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--poison", action="store_true", default=None)
    sub.add_argument("--trigger")
    sub.add_argument("--target", type=int)
    sub.add_argument("--rho", type=float, help="poison fraction")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--batch", type=int)
    sub.add_argument("--hidden", type=int)
    _add_common(sub)
    sub.set_defaults(func=_cmd_train)

    sub = commands.add_parser("calibrate", help="compute the detection threshold from benign data")
    sub.add_argument("--oracle", required=True, help="model.json | mlp:path | echo | perfect:trigger:target | exec:cmd")
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--m", type=int)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--beta", type=float)
    sub.add_argument("--frr", type=float)
    _add_noise_flags(sub)
    _add_common(sub)
    sub.set_defaults(func=_cmd_calibrate)

    sub = commands.add_parser("detect", help="classify inputs as trojan/benign against a record")
    sub.add_argument("--oracle", required=True)
    sub.add_argument("--record", required=True)
    sub.add_argument("--image", help="single png/npy input")
    sub.add_argument("--data", help="dataset file; verdicts for all items unless --index")
    sub.add_argument("--index", type=int)
    sub.add_argument("--classes", type=int)
    sub.add_argument("--force", action="store_true", default=None,
                     help="skip the oracle fingerprint check")
    _add_common(sub)
    sub.set_defaults(func=_cmd_detect)

    sub = commands.add_parser("evaluate", help="Acc/Attack-Acc/FAR/FRR report")
    sub.add_argument("--oracle", required=True)
    sub.add_argument("--record", required=True)
    sub.add_argument("--benign", required=True, help="benign test dataset")
    sub.add_argument("--trojan", help="prebuilt trojan dataset (else --trigger/--target)")
    sub.add_argument("--trigger")
    sub.add_argument("--target", type=int)
    sub.add_argument("--out", required=True)
    sub.add_argument("--csv")
    sub.add_argument("--dataset-label", dest="dataset_label")
    sub.add_argument("--trigger-label", dest="trigger_label")
    sub.add_argument("--force", action="store_true", default=None)
    _add_common(sub)
    sub.set_defaults(func=_cmd_evaluate)

    sub = commands.add_parser("sweep", help="FAR across an ascending FRR grid, from cached scores")
    sub.add_argument("--oracle", required=True)
    sub.add_argument("--record", required=True)
    sub.add_argument("--benign", required=True)
    sub.add_argument("--trojan")
    sub.add_argument("--trigger")
    sub.add_argument("--target", type=int)
    sub.add_argument("--frr-list", dest="frr_list", required=True, help="comma-separated, ascending")
    sub.add_argument("--out", required=True, help="CSV output")
    sub.add_argument("--svg", help="optional SVG chart")
    sub.add_argument("--strip-record", dest="strip_record")
    sub.add_argument("--strip-data", dest="strip_data", help="dataset the strip record indexes into")
    sub.add_argument("--force", action="store_true", default=None)
    _add_common(sub)
    sub.set_defaults(func=_cmd_sweep)

    sub = commands.add_parser("strip-calibrate", help="calibrate the STRIP entropy baseline")
    sub.add_argument("--oracle", required=True)
    sub.add_argument("--data", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--holdout", type=int)
    sub.add_argument("--frr", type=float)
    sub.add_argument("--mode", choices=["add", "average"])
    _add_common(sub)
    sub.set_defaults(func=_cmd_strip_calibrate)

    sub = commands.add_parser("strip-evaluate", help="FAR/FRR for the STRIP baseline")
    sub.add_argument("--oracle", required=True)
    sub.add_argument("--strip-record", dest="strip_record", required=True)
    sub.add_argument("--strip-data", dest="strip_data", required=True)
    sub.add_argument("--benign", required=True)
    sub.add_argument("--trojan")
    sub.add_argument("--trigger")
    sub.add_argument("--target", type=int)
    sub.add_argument("--out", required=True)
    _add_common(sub)
    sub.set_defaults(func=_cmd_strip_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures get a message, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
