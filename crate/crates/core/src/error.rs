use thiserror::Error;

/// Errors produced by the library.
///
/// Variants that correspond to a failed mathematical condition carry a
/// witness point or a numeric margin so callers can report why.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("functional takes negative values on the state space (d = {value:.3e} at witness)")]
    NotNonnegative { witness: Vec<f64>, value: f64 },
    #[error("functional takes negative values on facet {facet} (d = {value:.3e} at witness)")]
    NotNonnegativeOnFacet {
        facet: usize,
        witness: Vec<f64>,
        value: f64,
    },
    #[error("polyhedron is empty")]
    Empty,
    #[error("interior of the state space is empty")]
    InteriorEmpty,
    #[error("functional is not a multiple of facet {0}")]
    NotMultiple(usize),
    #[error("facet {0} is degenerate (state space lies inside the facet hyperplane)")]
    DegenerateFacet(usize),
    #[error("model is not admissible: {0}")]
    NotAdmissible(String),
    #[error("rank deficiency: {0}")]
    RankDeficiency(String),
    #[error("diffusion matrix is not a PSD combination of the facets: {0}")]
    NotRepresentable(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("reconstruction mismatch (residual {0:.3e})")]
    ReconstructionMismatch(f64),
    #[error("quadratic part is zero")]
    ZeroQuadraticPart,
    #[error("coefficient of the parabolic block is negative ({0:.3e})")]
    NegativeC(f64),
    #[error("decomposition is not normalized (c = {c:.3e}, |A1| = {a1:.3e})")]
    NotNormalized { c: f64, a1: f64 },
    #[error("PSD condition on the lower block fails (min eigenvalue {0:.3e})")]
    PsdConditionFailed(f64),
    #[error("diffusion block is not in the span of the cone basis (residual {0:.3e})")]
    NotInSpan(f64),
    #[error("no constant v with grad(phi) theta = phi v^T (residual {0:.3e})")]
    PhiVMismatch(f64),
    #[error("square root does not reproduce theta at x0 (residual {0:.3e})")]
    SigmaMismatch(f64),
    #[error("LP solver failure: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Numeric margin carried by the error, if any.
    pub fn margin(&self) -> Option<f64> {
        match self {
            Error::NotSymmetric(v)
            | Error::ReconstructionMismatch(v)
            | Error::NegativeC(v)
            | Error::PsdConditionFailed(v)
            | Error::NotInSpan(v)
            | Error::PhiVMismatch(v)
            | Error::SigmaMismatch(v) => Some(*v),
            Error::NotNonnegative { value, .. } | Error::NotNonnegativeOnFacet { value, .. } => Some(*value),
            Error::NotNormalized { c, .. } => Some(c - 1.0),
            _ => None,
        }
    }

    pub fn witness(&self) -> Option<&[f64]> {
        match self {
            Error::NotNonnegative { witness, .. } | Error::NotNonnegativeOnFacet { witness, .. } => Some(witness),
            _ => None,
        }
    }
}
