"""Sparsity-aware local masking: make image datasets unlearnable.

Crafts l-inf bounded, l0-sparse error-minimizing perturbations, plus
baseline poisoning methods, victim-training evaluation, and visual-fidelity
metrics. See the CLI (`salm --help`) for end-to-end experiment runs.
"""

from .baselines import craft_em, craft_sp, craft_tap
from .crafting import (
    BudgetConfig,
    NoiseSet,
    SparseMask,
    apply_noise,
    avg_input_gradient,
    craft_salm,
    percentile_threshold,
    pgd_update,
    read_uedn,
    sparse_mask,
    write_uedn,
)
from .data import LabeledDataset, gen_synth_blobs, read_ueds, write_ueds
from .estimators import (
    ConvNetClassifier,
    ErrorMinimizingCrafter,
    SparseMaskCrafter,
    SyntheticPatternCrafter,
    TargetedPoisonCrafter,
)
from .harness import (
    EvalReport,
    apply_filter,
    crop_dataset,
    gap_metric,
    mix_datasets,
    run_k_sweep,
    run_poison_eval,
    run_transfer_eval,
)
from .models import (
    ModelSpec,
    TrainConfig,
    TrainedModel,
    build_model,
    evaluate,
    forward_net,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    train,
)
from .similarity import (
    HashDigest,
    ahash,
    dhash,
    hash_similarity,
    nmi,
    phash,
    similarity_report,
    ssim,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetConfig",
    "ConvNetClassifier",
    "ErrorMinimizingCrafter",
    "EvalReport",
    "HashDigest",
    "LabeledDataset",
    "ModelSpec",
    "NoiseSet",
    "SparseMask",
    "SparseMaskCrafter",
    "SyntheticPatternCrafter",
    "TargetedPoisonCrafter",
    "TrainConfig",
    "TrainedModel",
    "ahash",
    "apply_filter",
    "apply_noise",
    "avg_input_gradient",
    "build_model",
    "craft_em",
    "craft_salm",
    "craft_sp",
    "craft_tap",
    "crop_dataset",
    "dhash",
    "evaluate",
    "forward_net",
    "gap_metric",
    "gen_synth_blobs",
    "hash_similarity",
    "load_checkpoint",
    "mix_datasets",
    "nmi",
    "percentile_threshold",
    "pgd_update",
    "phash",
    "read_uedn",
    "read_ueds",
    "run_k_sweep",
    "run_poison_eval",
    "run_transfer_eval",
    "save_checkpoint",
    "sgd_step",
    "similarity_report",
    "sparse_mask",
    "ssim",
    "train",
    "write_uedn",
    "write_ueds",
]
