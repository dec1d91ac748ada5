"""Surface cold-diffusion segmentation: terrain masks, deterministic degradation,
a scale-conditioned denoiser, and an annealed reverse sampler with ensemble
uncertainty, plus a synthetic star-shape dataset to train and score it on."""

from .degradation import (
    NoiseSchedule,
    PerturbationDraw,
    PerturbationParams,
    apply_target,
    forward_sample,
    make_schedule,
    perturb,
    perturbation_target,
    ussd,
)
from .denoiser import (
    Batch,
    DenoiserConfig,
    DenoiserModel,
    TrainingConfig,
    batch_loss,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
    training_step,
)
from .errors import (
    ConfigFileError,
    ConfigMismatchError,
    CorruptSampleError,
    EmptyMaskError,
    FormatError,
    IndexOutOfRangeError,
    InvalidConfigError,
    InvalidScaleError,
    InvalidScheduleError,
    InvalidSizeError,
    InvalidSpecError,
    LengthMismatchError,
    NonFiniteActivationError,
    NonFiniteLossError,
    NonStarShapedError,
    ShapeMismatchError,
    SurfCdmError,
    TooFewRunsError,
)
from .metrics import (
    EvalReport,
    MetricsRecord,
    UncertaintyMap,
    boundary_pixels,
    dsc,
    evaluate,
    hd95,
    iou,
    score_pair,
    uncertainty,
)
from .polar import (
    Centroid,
    PolarGridConfig,
    PolarRaster,
    Surface,
    compute_centroid,
    default_radial_step,
    extract_surface,
    from_polar,
    interp_surface_at,
    is_star_shaped,
    surface_to_polar_mask,
    to_polar,
)
from .sampler import (
    OracleDenoiser,
    SamplerConfig,
    SampleTrace,
    StepRecord,
    epsilon,
    estimate_centroid,
    init_state,
    reverse_step,
    sample_ensemble,
    segment,
)
from .synthdata import (
    DatasetManifest,
    DropoutArc,
    ImageDegradationSpec,
    Sample,
    SampleEntry,
    ShapeSpec,
    augment,
    gen_sample,
    load_sample,
    load_split,
    make_dataset,
    preprocess,
    random_shape_spec,
)

__version__ = "0.1.0"
