use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed config: {0}")]
    Parse(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("state dimension {got} does not match robot with {expected} links")]
    Dimension { expected: usize, got: usize },

    /// CoM height above the axle is zero or negative, so the pendulum angle is undefined.
    #[error("degenerate CoM configuration (Z_com = {z_com:.3e})")]
    DegenerateCom { z_com: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("trajectory optimization failed at iteration {iteration}: {reason}")]
    Planner { iteration: usize, reason: String },

    #[error("simulation diverged at t = {time:.3} s: {reason}")]
    Diverged { time: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
