"""Black-box Trojan-input detection via randomized perturbation.

The pipeline: poison a desk-scale classifier (attack), calibrate a
detection threshold from benign examples (calibrate), then flag inputs
whose noisy-prediction stability exceeds it (detect). A STRIP-style
entropy baseline and an FAR/FRR evaluation harness round out the kit.
"""

from .attack import (
    SYNTHETIC_NOISE_SCALE,
    PoisonConfig,
    TriggerSpec,
    apply_trigger,
    blue_star_trigger,
    make_trojan_testset,
    poison_dataset,
    synthetic_shapes,
    synthetic_split,
    white_patch_trigger,
)
from .calibrate import CalibrationRecord, calibrate, score_input, threshold_from_l_values
from .confidence import (
    BinomialInterval,
    BoundParams,
    PredictionProfile,
    clopper_pearson,
    confidence_bound,
    profile,
)
from .core import (
    ClassLabel,
    ImageTensor,
    LabeledDataset,
    RngStream,
    load_dataset,
    load_manifest_dir,
    load_tensor_file,
    save_manifest_dir,
    save_tensor_file,
    substream,
    substream_named,
)
from .detect import FingerprintMismatchError, Verdict, detect
from .evaluation import EvalReport, SweepRow, evaluate, sweep_frr
from .oracle import (
    EchoOracle,
    ExternalOracle,
    MlpHyper,
    MlpModel,
    OracleError,
    OracleProtocolError,
    PerfectTrojanOracle,
    PredictionOracle,
    ShapeMismatchError,
    TrainingDivergedError,
    accuracy,
    brightness_sum_rule,
    train_mlp,
)
from .perturb import NoiseSpec, PatchPlacement, dynamic_sigma, perturb_once, sample_placement
from .strip import StripRecord, StripVerdict, strip_calibrate, strip_detect, strip_score

__version__ = "0.1.0"

__all__ = [
    "SYNTHETIC_NOISE_SCALE",
    "BinomialInterval",
    "BoundParams",
    "CalibrationRecord",
    "ClassLabel",
    "EchoOracle",
    "EvalReport",
    "ExternalOracle",
    "FingerprintMismatchError",
    "ImageTensor",
    "LabeledDataset",
    "MlpHyper",
    "MlpModel",
    "NoiseSpec",
    "OracleError",
    "OracleProtocolError",
    "PatchPlacement",
    "PerfectTrojanOracle",
    "PoisonConfig",
    "PredictionOracle",
    "PredictionProfile",
    "RngStream",
    "ShapeMismatchError",
    "StripRecord",
    "StripVerdict",
    "SweepRow",
    "TrainingDivergedError",
    "TriggerSpec",
    "Verdict",
    "accuracy",
    "apply_trigger",
    "blue_star_trigger",
    "brightness_sum_rule",
    "calibrate",
    "clopper_pearson",
    "confidence_bound",
    "detect",
    "dynamic_sigma",
    "evaluate",
    "load_dataset",
    "load_manifest_dir",
    "load_tensor_file",
    "make_trojan_testset",
    "perturb_once",
    "poison_dataset",
    "profile",
    "sample_placement",
    "save_manifest_dir",
    "save_tensor_file",
    "score_input",
    "strip_calibrate",
    "strip_detect",
    "strip_score",
    "substream",
    "substream_named",
    "sweep_frr",
    "synthetic_shapes",
    "synthetic_split",
    "threshold_from_l_values",
    "train_mlp",
    "white_patch_trigger",
]
