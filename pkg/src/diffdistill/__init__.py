"""Dataset distillation by DDIM inversion, Gaussian matching and group sampling,
on Gaussian-mixture worlds with an exact noise predictor."""

from .ddim import (
    LatentBatch,
    NoiseSchedule,
    build_schedule,
    ddim_invert_step,
    ddim_sample_step,
    ddpm_forward,
    invert,
    sample,
)
from .distill import (
    ClassGaussianStats,
    DistillConfig,
    DistilledSet,
    distill_class,
    distill_dataset,
    fit_class_stats,
    gaussian_subset_sample,
    group_sample,
    regenerate_from_stats,
    subset_loss,
)
from .evaluation import (
    energy_distance,
    evaluate_classifier,
    normality_report,
    timestep_sweep,
    train_classifier,
)
from .gmm_world import (
    Dataset,
    GmmComponent,
    GmmSpec,
    analytic_epsilon,
    default_world,
    gmm_log_density,
    marginal_at,
    sample_dataset,
)

__version__ = "0.1.0"
