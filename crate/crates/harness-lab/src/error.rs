use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel is not stochastic: {0}")]
    NonStochastic(String),
    #[error("kernel offset {0:?} lies beyond the declared range {1}")]
    RangeViolation(Vec<i32>, i32),
    #[error("kernel has no offsets with positive weight")]
    EmptySupport,
    #[error("fixed boundary does not cover exterior site {0:?}")]
    MissingBoundary(Vec<i32>),
    #[error("site {0:?} has no jump mass inside the carrier")]
    ZeroInteriorMass(Vec<i32>),
    #[error("initial field has {got} values but the carrier has {want} sites")]
    InitialMismatch { got: usize, want: usize },
    #[error("origin is not a carrier site")]
    OriginOutsideCarrier,
    #[error("anchor site {0:?} is not a carrier site")]
    AnchorOutsideCarrier(Vec<i32>),
    #[error("requested window [{s}, {t}] is not contained in the stream window")]
    WindowMismatch { s: f64, t: f64 },
    #[error("dual weights and event stream come from different streams")]
    StreamMismatch,
    #[error("free boundary dynamics require at least one pinned site")]
    FreeWithoutPin,
    #[error("uniformization leakage {leakage:.3e} exceeds tolerance {tol:.3e}; enlarge the truncation radius")]
    TruncationTooSmall { leakage: f64, tol: f64 },
    #[error("kernel is not symmetric: p(0,{0:?}) != p(0,-{0:?})")]
    AsymmetricKernel(Vec<i32>),
    #[error("kernel has positive self weight p(0,0)")]
    SelfLoopKernel,
    #[error("no pinned site or fixed boundary is reachable; precision matrix is singular")]
    NoEscape,
    #[error("field has {got} entries but the model has {want} free sites")]
    DimensionMismatch { got: usize, want: usize },
    #[error("detailed balance is claimed only for gaussian noise")]
    NonGaussianNoise,
    #[error("box {0} is not contained in box {1}")]
    NonNestedBoxes(usize, usize),
    #[error("weight monotonicity violated at epoch ({site:?}, {epoch}): radicand {radicand:.3e}")]
    NegativeRadicand {
        site: Vec<i32>,
        epoch: u32,
        radicand: f64,
    },
    #[error("need at least {want} samples, got {got}")]
    TooFewSamples { got: usize, want: usize },
    #[error("power-law fit requires strictly positive data")]
    NonPositiveData,
    #[error("power-law fit requires at least {want} points above s_min, got {got}")]
    TooFewPoints { got: usize, want: usize },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("config schema error: {0}")]
    SchemaError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
