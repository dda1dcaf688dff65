use thiserror::Error;

/// Errors raised by the planning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("mass matrix is numerically singular (condition number {cond:.3e})")]
    SingularMassMatrix { cond: f64 },

    #[error("stacked constraint Jacobian is rank deficient (rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("FRS trace has no entry for N_s = {0}")]
    MissingTraceEntry(usize),

    #[error("sampler produced no feasible samples for {0} consecutive batches")]
    SamplerStalled(usize),

    #[error("no path from region {start} to goal region {goal} through regions with nonzero FRS")]
    NoPath { start: usize, goal: usize },

    #[error("value iteration did not converge within {0} sweeps")]
    ValueIterationDiverged(usize),

    #[error("point {0:?} lies outside the output grid")]
    OutsideGrid([f64; 2]),

    #[error("remainder bound violated: observed {observed:.3e} > K*T = {bound:.3e}; increase K")]
    RemainderBoundViolated { observed: f64, bound: f64 },

    #[error("no feasible input draw at reachability step {0}")]
    NoFeasibleInput(usize),

    #[error("goal is not reachable within the maximum horizon of {0} s")]
    NotReachableWithinHorizon(f64),

    #[error("initial state is infeasible: {0}")]
    InfeasibleInitialState(String),

    #[error("nonlinear program did not converge after {iterations} iterations (KKT residual {kkt:.3e})")]
    NlpNotConverged {
        iterations: usize,
        kkt: f64,
        best: Box<crate::trajopt::Trajectory>,
    },

    #[error("segment {index} failed: {source}")]
    SegmentFailed {
        index: usize,
        partial: Box<crate::trajopt::Trajectory>,
        #[source]
        source: Box<Error>,
    },

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
