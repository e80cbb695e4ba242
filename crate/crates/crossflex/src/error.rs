use crate::geometry::SpaceKind;

/// Library-wide error taxonomy. Variants are coarse on purpose: callers
/// branch on the kind (bad input vs. wrong geometry vs. failed fit), the
/// message carries the specifics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Mismatched vector/matrix dimensions between arguments.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point that should lie on the model surface does not, beyond the
    /// allowed residual.
    #[error("point off the model surface: residual {residual:.3e} exceeds {limit:.1e}")]
    OffManifold { residual: f64, limit: f64 },

    /// The matrix handed to a factorization does not have the signature the
    /// caller claimed.
    #[error("signature mismatch: {0}")]
    Signature(String),

    /// Structurally invalid input data (zero scale factors, coincident shift
    /// parameters, bad block structure, malformed matrices).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The shape data cannot be realised in the requested geometry; the
    /// message names the violated condition.
    #[error("not realisable in {space:?} space: {reason}")]
    NotRealisable { space: SpaceKind, reason: String },

    /// The shape data fails the membership test of every geometry.
    #[error("not realisable in any of the three geometries: {0}")]
    OutsideAllGeometries(String),

    /// Coefficient matrices are inconsistent with a single curve of the
    /// fitted family.
    #[error("coefficients do not come from one curve of this family: {0}")]
    NotSingleFamily(String),

    /// The fitted modulus parameter would have to be complex.
    #[error("no real modulus fits: {0}")]
    NoRealModulus(String),

    /// Parameter fit converged to something that fails the round-trip gate.
    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
