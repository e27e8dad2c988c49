use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("root finder did not reach residual {tolerance:e} (worst residual {residual:e})")]
    SolverDiverged { residual: f64, tolerance: f64 },

    #[error("|T'| = {value:e} at {point}: the logarithmic potential is not Hölder on the Julia set")]
    CriticalOnJulia { point: String, value: f64 },

    #[error("depth {depth} needs {atoms} atoms, budget is {budget}")]
    DepthTooLarge { depth: usize, atoms: f64, budget: u64 },

    #[error("no periodic point of period {0} survived the Julia-set filters")]
    EmptyPeriodicSet(usize),

    #[error("observable `{0}` is not recorded in this ensemble")]
    UnknownObservable(String),

    #[error("pressure curve is not convex: second difference {value:e} at q = {q}")]
    NonConvexCurve { q: f64, value: f64 },

    #[error("no ensemble member satisfies the constraints")]
    EmptySelection,

    #[error("transition matrix is reducible")]
    Reducible,

    #[error("measure is not shift invariant (residual {0:e})")]
    NotInvariant(f64),

    #[error("point {0} is within the boundary tolerance of the itinerary cut")]
    BoundaryItinerary(String),

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage { stage: stage.to_string(), source: Box::new(self) }
    }
}
