"""NMF-family single-channel source separation toolkit."""

from .adversarial import (
    AdversarialSet,
    OmegaWeights,
    WeightModel,
    assemble_adversarial,
    compute_beta,
    default_omega,
    naive_invert,
)
from .core import (
    Basis,
    DataMatrix,
    DimensionMismatch,
    Latents,
    SparsityParams,
    cone_distance,
    init_exemplar,
    init_random,
    normalize_columns,
    update_latents,
)
from .features import Spectrogram, StftConfig, apply_mask, istft, stft
from .metrics import (
    Choice,
    LogUniform,
    SearchSpace,
    TuneResult,
    Uniform,
    cv_split,
    psnr,
    random_search,
    si_sdr,
    weighted_score,
)
from .separation import SeparationResult, project_denoise, separate, wiener_filter
from .training import (
    TrainSpec,
    TrainState,
    grad_parts_adv,
    grad_parts_std,
    grad_parts_sup,
    objective,
    train_semisupervised,
    train_smu,
    update_basis,
)

__version__ = "0.1.0"
