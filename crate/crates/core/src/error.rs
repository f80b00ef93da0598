use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("state is not normalized (deviation {deviation:e})")]
    Unnormalized { deviation: f64 },
    #[error("matrix is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },
    #[error("state is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositive { eigenvalue: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LindbladError {
    #[error("invalid run configuration: {0}")]
    InvalidRun(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("step size too large at t = {time}: trace drifted by {drift:e} in one step")]
    StepSize { time: f64, drift: f64 },
}

/// Failure of a single stochastic step.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("jump probability {probability} per step is not small; reduce dt")]
    StepTooLarge { probability: f64 },
    #[error("a jump was drawn on a state with vanishing jump norm")]
    ImpossibleJump,
    #[error("state norm became non-finite")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("invalid unraveling spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("trajectory {index} at t = {time}: {source}")]
    Step {
        index: usize,
        time: f64,
        #[source]
        source: StepError,
    },
    #[error("trajectory {index}: {source}")]
    Observable {
        index: usize,
        #[source]
        source: Box<ObservableError>,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservableError {
    #[error(transparent)]
    Magic(#[from] MagicError),
    #[error(transparent)]
    Entanglement(#[from] StateError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MagicError {
    #[error("Pauli expectation has imaginary part {imag:e}")]
    ComplexExpectation { imag: f64 },
    #[error("brute-force oracle limited to {max} spins, got {found}")]
    TooLarge { max: usize, found: usize },
    #[error("class ({n_x}, {n_y}, {n_z}) does not fit {n_spins} spins")]
    InvalidClass { n_x: usize, n_y: usize, n_z: usize, n_spins: usize },
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeanFieldError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("integrator failed to converge at t = {time}")]
    NonConvergence { time: f64 },
    #[error("only {succeeded} of {attempted} orbit integrations succeeded")]
    TooManyFailures { succeeded: usize, attempted: usize },
    #[error("fit did not converge after {iterations} iterations (best residual {:e})", best.residual)]
    FitNonConvergence { iterations: usize, best: crate::meanfield::FitResult },
}
