use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("tensor shape must have at least one dimension")]
    EmptyShape,
    #[error("shape {shape:?} does not match data length {len}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("malformed TNSR blob: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {step} outside 1..={max}")]
    StepOutOfRange { step: usize, max: usize },
    #[error("target step {t_prev} must be below current step {t}")]
    StepOrder { t: usize, t_prev: usize },
    #[error("sampling interval {k} must satisfy 1 <= k <= t = {t}")]
    InvalidInterval { k: usize, t: usize },
    #[error("oracle denoiser needs at least one point")]
    EmptyPointSet,
    #[error("oracle variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error("model expects input of {expected} elements, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("dataset has no shape descriptors; style shift needs a shapes dataset")]
    MissingDescriptors,
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("training needs at least one member sample")]
    NoMembers,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("malformed artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures of a remote variation call, one variant per phase.
#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("could not connect to variation endpoint: {0}")]
    Connect(String),
    #[error("variation request timed out after {0} ms")]
    Timeout(u64),
    #[error("remote rejected parameters: {0}")]
    Rejected(String),
    #[error("variation endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed variation response: {0}")]
    Malformed(String),
    #[error("invalid endpoint url: {0}")]
    Url(String),
}

#[derive(Debug, Error)]
pub enum VariationError {
    #[error("codec latent dimension {codec} does not match model input dimension {model}")]
    LatentDim { codec: usize, model: usize },
    #[error("codec expects images of shape {expected:?}, got {got:?}")]
    CodecShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("average count n must be at least 1")]
    ZeroRepeats,
    #[error("ReDiffuse+ needs two distinct seeds")]
    IdenticalSeeds,
    #[error("L_p exponent {0} outside 1..=8")]
    InvalidExponent(u32),
    #[error("SSIM needs a single-channel 2-D image, got shape {0:?}")]
    NotTwoDimensional(Vec<usize>),
    #[error("SSIM input value {value} outside [0, 1]")]
    OutOfRange { value: f32 },
    #[error("classifier training fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("classifier training slice contains a single class")]
    SingleClassTraining,
    #[error("classifier expects {expected} features, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics need at least one member and one nonmember record")]
    SingleClass,
    #[error("score at record {0} is not finite")]
    NonFiniteScore(usize),
    #[error("target false-positive rate {0} outside [0, 1]")]
    InvalidTarget(f64),
}

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("need at least 100 trials per n, got {0}")]
    TooFewTrials(usize),
    #[error("n values must be nonempty and positive")]
    InvalidNValues,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Variation(#[from] VariationError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}
