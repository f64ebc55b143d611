use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell {cell}: {what}")]
    Mesh { cell: usize, what: String },

    #[error("edge ({a}, {b}) is shared by more than two cells")]
    NonManifoldEdge { a: usize, b: usize },

    #[error("mesh: {0}")]
    MeshSetup(String),

    #[error("non-admissible state in cell {cell}: {component} = {value}")]
    Admissibility {
        cell: usize,
        component: &'static str,
        value: f64,
    },

    #[error("degenerate least-squares stencil at cell {cell} (condition {condition:.3e})")]
    DegenerateStencil { cell: usize, condition: f64 },

    #[error("step {step}: {source}")]
    StepRejected {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("network layer {layer} produced a non-finite value")]
    NonFinite { layer: usize },

    #[error("autodiff: {0}")]
    Tape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format: {0}")]
    Format(String),

    #[error("unknown Riemann case {0}")]
    UnknownCase(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Admissibility { .. }
                | Error::StepRejected { .. }
                | Error::Trajectory { .. }
                | Error::Diverged { .. }
                | Error::NonFinite { .. }
                | Error::Tape(_)
                | Error::DegenerateStencil { .. }
        )
    }
}
