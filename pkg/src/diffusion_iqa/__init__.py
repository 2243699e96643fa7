"""No-reference image quality assessment from denoiser cross-attention.

The package trains a pair of antonym text prompts against a frozen latent
denoiser and scores images by how strongly each prompt attends to the noisy
image latent inside the denoiser's cross-attention blocks.
"""

from .bundle import ScoringBundle, build_bundle
from .checkpoint import load_checkpoint, save_checkpoint, write_sidecar_config
from .config import RunConfig, apply_config_text, load_config, write_config
from .data import ImageDataset, ImageRecord, load_image, load_manifest, write_manifest
from .errors import (
    AblationError,
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    DiffusionIqaError,
    EvaluationError,
    ManifestError,
    PromptError,
    TrainingDivergedError,
)
from .evaluation import (
    AblationCell,
    AblationSpec,
    CellResult,
    EvalReport,
    ImageScore,
    ablation_grid,
    evaluate_bundle,
    export_features,
    grid_names,
    render_results,
    result_rows,
    run_ablation,
    write_results,
    write_sweep_plot,
)
from .metrics import (
    CorrelationSummary,
    logistic_rescale,
    plcc,
    srcc,
    summarize_correlations,
)
from .readout import attention_map, lse_pool, mean_pool, quality_score
from .schedule import (
    NoiseSchedule,
    TimestepPolicy,
    build_linear_schedule,
    evenly_spaced_policy,
    forward_noise,
    multi_step_timesteps,
    policy_timesteps,
    sample_timestep,
)
from .seeding import derive_rng
from .synth import DISTORTIONS, make_dataset
from .training import train_bundle, write_loss_history

__version__ = "0.1.0"
