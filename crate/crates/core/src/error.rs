use core::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Generator has a negative off-diagonal transition rate.
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    /// A generator column does not sum to zero within tolerance.
    ColumnSumNonzero { col: usize, sum: f64 },
    /// Matrix exponential argument too large to evaluate safely.
    Overflow,
    /// Inconsistent dimensions between model pieces.
    DimensionMismatch { expected: usize, got: usize },
    /// A volatility value is non-positive or outside the declared bounds.
    VolOutOfBounds { regime: usize, value: f64 },
    /// Requested window is not contained in the grid (or holds too few nodes).
    WindowOutOfRange,
    /// A solve produced non-finite values.
    NonfiniteSolution,
    /// Explicit-dominant scheme with a time step too large for the mesh.
    GridTooCoarse { ratio: f64, cap: f64 },
    /// Field shapes do not match between coupled inputs.
    ShapeMismatch,
    /// Not enough strikes for a second-derivative stencil.
    TooFewStrikes { got: usize },
    /// Unregularized normal matrix is rank deficient.
    SingularNormalMatrix,
    /// Catch-all for invalid scalar arguments.
    InvalidParameter(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NegativeOffDiagonal { row, col, value } => write!(
                f,
                "negative off-diagonal rate b[{row}][{col}] = {value}"
            ),
            Error::ColumnSumNonzero { col, sum } => {
                write!(f, "generator column {col} sums to {sum}, expected 0")
            }
            Error::Overflow => write!(f, "matrix exponential argument overflow"),
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::VolOutOfBounds { regime, value } => {
                write!(f, "volatility {value} out of bounds in regime {regime}")
            }
            Error::WindowOutOfRange => write!(f, "window out of grid range"),
            Error::NonfiniteSolution => write!(f, "solver produced non-finite values"),
            Error::GridTooCoarse { ratio, cap } => {
                write!(f, "time step too large: dtau/dy^2 ratio {ratio} exceeds cap {cap}")
            }
            Error::ShapeMismatch => write!(f, "field shape mismatch"),
            Error::TooFewStrikes { got } => {
                write!(f, "need at least 5 strikes, got {got}")
            }
            Error::SingularNormalMatrix => write!(f, "singular normal matrix (alpha = 0?)"),
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for Error {}
