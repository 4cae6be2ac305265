"""Physics-guided image dehazing diffusion.

A diffusion process whose forward phase jointly accumulates Gaussian noise
and physically modelled haze, deterministic implicit sampling that removes
both, two-stage training, full-reference metrics, and a verification harness
covering every closed-form identity at desk scale.
"""

from .errors import (
    CheckpointError,
    ConstantDepthWarning,
    CorruptFileError,
    IddmError,
    InvalidDepthError,
    TrainingDivergedError,
    UnsupportedFormatError,
)
from .forward import ForwardSample, diffuse_closed, diffuse_step, draw_noise
from .io import (
    generate_scene,
    load_depth,
    load_image,
    load_manifest,
    save_depth_png,
    save_image,
)
from .metrics import psnr, ssim
from .nets import (
    Architecture,
    ModelParams,
    adam_update,
    denoiser_architecture,
    denoiser_forward,
    htnet_architecture,
    htnet_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
)
from .physics import (
    HazeDecomposition,
    HazeParams,
    haze_at_step,
    haze_increment,
    haze_total,
    haze_total_quadrature,
    synthesize_hazy,
    transmission,
)
from .sampler import (
    SamplerConfig,
    SampleTrace,
    gaussian_blur,
    predict_x0,
    restore,
    sample,
    sample_step,
    stabilize_haze,
)
from .schedule import Schedule, make_schedule, subsequence
from .training import (
    TrainBatch,
    TrainConfig,
    make_scene_pool,
    sample_batch,
    stage1_step,
    stage2_step,
    train_stage1,
    train_stage2,
)

__version__ = "0.1.0"
