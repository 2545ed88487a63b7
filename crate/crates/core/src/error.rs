use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input sits on (or within 1e-8 of) a singular point of a special function.
    #[error("domain error: {what} at ({x}, {y}); nearest singular point ({sx}, {sy})")]
    Domain {
        what: &'static str,
        x: f64,
        y: f64,
        sx: f64,
        sy: f64,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("truncation error: tail bound {bound:e} after {terms} terms misses target {target:e}")]
    Truncation { terms: usize, bound: f64, target: f64 },
    #[error("regime error: {0}")]
    Regime(String),
    #[error("singular problem: {0}")]
    Singular(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("x1 = {x1} is an endpoint of a Dirichlet segment")]
    Endpoint { x1: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
