"""Text-conditioned denoising diffusion for 3D human-motion sequences.

Train a noise-prediction network with classifier-free guidance on
(caption, motion) pairs, sample new motions by ancestral reverse
diffusion, and score generated sets with diversity/variance metrics.
"""

from .checkpointing import Checkpoint, load_checkpoint, save_checkpoint
from .denoiser import Denoiser, DenoiserConfig, fuse, time_embed
from .diffusion import (
    EpsModel,
    GuidanceConfig,
    TrainConfig,
    TrainResult,
    guided_epsilon,
    loss,
    p_sample_step,
    q_chain_sample,
    q_sample,
    sample,
    sample_chain,
    train,
)
from .errors import (
    MalformedFileError,
    MotionDiffError,
    NonFiniteValueError,
    NumericsError,
    ShapeMismatchError,
    ValidationError,
)
from .metrics import (
    GeneratedSet,
    conditional_accuracy,
    diversity,
    evaluate,
    motion_feature,
    variance,
)
from .motion import (
    DatasetEntry,
    Motion,
    NormStats,
    Pose,
    compute_norm_stats,
    denormalize,
    flatten,
    load_manifest,
    load_motion,
    normalize,
    save_manifest,
    save_motion,
    unflatten,
)
from .schedule import NoiseSchedule, coeffs_at, make_cosine, make_linear, make_schedule
from .synthetic import SyntheticSpec, family_template, generate_synthetic_dataset
from .text import (
    HashedBowEncoder,
    TableEncoder,
    TextEmbedding,
    encode_hashed_bow,
    load_embedding_table,
    null_embedding,
    save_embedding_table,
)

__version__ = "0.1.0"
