use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("operation needs a non-empty vector")]
    Empty,

    #[error("invalid segment layout: {0}")]
    InvalidSegments(String),

    #[error("invalid worker count {workers} for {n} elements")]
    InvalidWorkers { workers: usize, n: usize },

    #[error("superstep {superstep} failed on worker {worker}: {message}")]
    WorkerPanic {
        worker: usize,
        superstep: u64,
        message: String,
    },

    #[error("reducer emitted {count} values for a single key")]
    MultipleReducerOutputs { count: usize },

    #[error("copy counts sum to {sum}, expected {expected}")]
    CountSum { sum: usize, expected: usize },

    #[error("copy counts are not an all-trailing-zeros sequence")]
    NotAtz,

    #[error("weights sum to {0}, expected 1")]
    Unnormalized(f64),

    #[error("weight {value} at index {index} is negative or not finite")]
    BadWeight { index: usize, value: f64 },

    #[error("offset {eps} is outside [0, 1/{n})")]
    EpsilonRange { eps: f64, n: usize },

    #[error("cumulative weights are not monotone at index {0}")]
    NonMonotoneScan(usize),

    #[error("weights collapsed: {0}")]
    WeightCollapse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid model parameters: {0}")]
    Model(String),

    #[error("trajectory has {got} steps, horizon is {expected}")]
    TrajectoryLength { got: usize, expected: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_pow2(n: usize) -> Result<()> {
    if n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::NotPowerOfTwo(n))
    }
}

pub(crate) fn ensure_same_len(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left, right })
    }
}
