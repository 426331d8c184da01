//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Everything that can go wrong constructing domains, evaluating energies,
/// or running the solver. Variants carry enough context to be actionable
/// from a one-line message.
#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    /// Rasterization produced no interior cells (shape smaller than a cell,
    /// or resolution below the coarseness floor).
    EmptyRasterization { detail: String },
    /// The interior mask splits into more than one 4-connected component.
    DisconnectedMask { components: usize },
    /// A mask cell sits on the left or bottom grid edge, where the
    /// zero-extension boundary jump has no cell to land on.
    MarginViolation { i: usize, j: usize },
    /// Mismatched grid dimensions between fields or between a field and a
    /// domain.
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    /// A scalar field violated its nonnegativity precondition.
    NegativeField { min: f64 },
    /// The smoothing parameter δ must be positive when ε < 1 (the TV weight
    /// |∇u|^{ε−1} is singular at ∇u = 0).
    SingularWeight { eps: f64, delta: f64 },
    /// A parameter left its documented range.
    InvalidParameter { name: &'static str, value: f64, requirement: &'static str },
    /// The descent encountered a non-finite energy; the payload names the
    /// stage and iteration for diagnosis.
    NonFiniteEnergy { stage: usize, iteration: usize },
    /// A certificate was requested for a degenerate (zero or near-zero) field.
    DegenerateField { detail: &'static str },
    /// Polygon construction failed (too few vertices, repeated points,
    /// collinear or reflex corners, wrong orientation).
    InvalidPolygon { detail: String },
    /// A level-set sweep found no nonempty level.
    EmptySweep,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyRasterization { detail } => {
                write!(f, "rasterization produced an empty mask: {detail}")
            }
            Error::DisconnectedMask { components } => {
                write!(f, "interior mask has {components} 4-connected components, expected 1")
            }
            Error::MarginViolation { i, j } => write!(
                f,
                "mask cell ({i}, {j}) touches the left/bottom grid edge; \
                 the boundary jump of the zero extension needs a one-cell margin"
            ),
            Error::ShapeMismatch { expected, got } => write!(
                f,
                "grid shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::NegativeField { min } => {
                write!(f, "field has negative entries (min = {min:e}); solver fields are nonnegative")
            }
            Error::SingularWeight { eps, delta } => write!(
                f,
                "delta = {delta} is not positive while eps = {eps} < 1: \
                 the gradient weight |∇u|^(ε−1) is singular at ∇u = 0"
            ),
            Error::InvalidParameter { name, value, requirement } => {
                write!(f, "parameter {name} = {value} out of range: requires {requirement}")
            }
            Error::NonFiniteEnergy { stage, iteration } => {
                write!(f, "non-finite energy at stage {stage}, iteration {iteration}")
            }
            Error::DegenerateField { detail } => {
                write!(f, "degenerate field: {detail}")
            }
            Error::InvalidPolygon { detail } => write!(f, "invalid polygon: {detail}"),
            Error::EmptySweep => write!(f, "level-set sweep: every level was empty"),
        }
    }
}

impl core::error::Error for Error {}
