"""Filter transition networks for continuous-level denoising.

Images are float32 arrays shaped (N, C, H, W) with values in [0, 1]; noise
levels are given on the 8-bit scale (20 means 20/255).
"""

from ._core import (
    CheckpointError,
    CllError,
    ConfigError,
    DimensionError,
    ImageError,
    Network,
    NetworkSpec,
    NonFiniteError,
    RangeError,
    StoreMismatchError,
    TrainConfig,
    TrainingError,
    ValidationSet,
    alpha_sweep,
    dni,
    evaluate_psnr,
    finetune,
    gradient_suite,
    load_checkpoint,
    macs,
    macs_feature_tuning,
    macs_paper_ftn,
    psnr,
    read_image,
    save_checkpoint,
    set_worker_limit,
    similarity,
    train_from_scratch,
    train_phase1,
    train_phase2,
    write_image,
)

__all__ = [name for name in dir() if not name.startswith("_")]
