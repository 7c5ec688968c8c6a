"""Compact SSM image classifier plus a robustness evaluation harness."""

from .autodiff import (
    GradientTape,
    Tensor,
    add,
    clip,
    conv2d,
    exp,
    matmul,
    mul,
    sigmoid,
    silu,
    softmax_cross_entropy,
    softplus,
)
from .attacks import AttackConfig, attacked_accuracy, epsilon_sweep, fgsm, pgd
from .corruptions import (
    DEFAULT_SCHEDULE,
    PatchGrid,
    SeveritySchedule,
    blur,
    blur_kernel,
    corruption_sweep,
    gaussian_noise,
    patch_drop,
    patchdrop_sweep,
)
from .data import (
    Dataset,
    NpyArray,
    load_medmnist,
    parse_npy,
    parse_npz,
    synthetic_dataset,
    synthetic_splits,
)
from .faults import (
    FaultPlan,
    TrialStats,
    apply_plan,
    flip_bit,
    generate_plan,
    inject_activation_faults,
    layerwise_bitflip_eval,
    random_bitflip_eval,
    worstcase_bitflip_search,
)
from .model import (
    GROUPS,
    ModelConfig,
    SsmClassifier,
    group_of_key,
    selective_scan,
)
from .reporting import EvalReport, emit_report, merge_reports, parse_csv
from .training import (
    Checkpoint,
    TrainConfig,
    evaluate_accuracy,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
