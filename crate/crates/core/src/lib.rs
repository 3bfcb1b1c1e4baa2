//! Distributional Gaussian curvature and Levi-Civita connection one-forms of
//! piecewise polynomial Regge metrics on triangulations of planar polygonal
//! domains.
//!
//! A Regge metric is a piecewise polynomial symmetric (0,2)-tensor field that
//! is positive definite and has single-valued tangential-tangential components
//! across element interfaces.  Such a metric has too little regularity for
//! classical curvature, but it carries a distributional curvature two-form
//! (triangle curvature + geodesic-curvature jumps on edges + angle defects at
//! vertices) and a canonical distributional connection one-form obtained by
//! integrating a metric-dependent bilinear form along the segment of metrics
//! joining the Euclidean metric to it.  This crate assembles those objects,
//! their projections onto Lagrange and Nedelec finite element spaces, and a
//! verification/convergence harness around them.
//!
//! Modules mirror the pipeline: [`mesh`] and [`polyquad`] supply geometry and
//! integration, [`geom`] the pointwise Riemannian formulas, [`regge`] and
//! [`fespace`] the finite element spaces, [`forms`] the two metric-dependent
//! bilinear forms in two algebraic guises each, [`curvature`] the
//! distributional/discrete curvature and connection, [`linalg`] sparse SPD
//! solves and discrete dual norms, [`verify`] executable identity checks, and
//! [`driver`] the convergence-study and verification front end.

pub mod curvature;
pub mod driver;
pub mod fields;
pub mod fespace;
pub mod forms;
pub mod geom;
pub mod linalg;
pub mod mesh;
pub mod polyquad;
pub mod regge;
pub mod verify;




pub use fespace::{FeFunction, FeOneForm, FeSpace, FeTwoForm, FeVectorField, Functional};
pub use forms::FormContext;
pub use mesh::Mesh;
pub use regge::{ReggeField, ReggeSpace};
pub use geom::{MetricJet, Sym2, SymTensorJet};


/// Crate-wide error type.
#[derive(Debug, Clone)]
pub enum Error {
    /// Invalid or unsupported mesh (orientation, holes, connectivity).
    Mesh(String),
    /// Quadrature rule request outside the supported range.
    Quadrature(String),
    /// A metric value failed the positive-definiteness check.
    NotPositiveDefinite { what: String, location: String },
    /// Degenerate geometric input (zero tangent, parallel directions).
    Degenerate(String),
    /// Linear solver breakdown or failure to reach tolerance.
    Solver { what: String, iterations: usize, residual: f64 },
    /// Adaptive time quadrature failed to reach tolerance under the panel cap.
    TimeQuadrature { achieved: f64, target: f64 },
    /// Invalid configuration (CLI / JSON).
    Config(String),
    /// Mismatched spaces, degrees, or meshes passed to an operation.
    Mismatch(String),
    /// Unisolvence failure in a local degree-of-freedom system.
    Internal(String),
}

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Error::Mesh(m) => write!(f, "mesh error: {m}"),
            Error::Quadrature(m) => write!(f, "quadrature error: {m}"),
            Error::NotPositiveDefinite { what, location } => {
                write!(f, "{what} is not positive definite at {location}")
            }
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Solver { what, iterations, residual } => write!(
                f,
                "solver failure in {what}: residual {residual:.3e} after {iterations} iterations"
            ),
            Error::TimeQuadrature { achieved, target } => write!(
                f,
                "time quadrature stalled at relative change {achieved:.3e} (target {target:.3e})"
            ),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Mismatch(m) => write!(f, "mismatch: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
