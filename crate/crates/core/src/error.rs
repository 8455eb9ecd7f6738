use nalgebra::Complex;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("expected a square matrix for {what}, got {rows}x{cols}")]
    NonSquare {
        what: String,
        rows: usize,
        cols: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("spectra overlap: eigenvalues {a} and {b} are within {tol:e}")]
    SpectraOverlap {
        a: Complex<f64>,
        b: Complex<f64>,
        tol: f64,
    },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },

    #[error("pair is not stabilizable (uncontrollable mode at {witness})")]
    NotStabilizable { witness: Complex<f64> },

    #[error("pair is not detectable (unobservable mode at {witness})")]
    NotDetectable { witness: Complex<f64> },

    #[error("Riccati iteration failed: {0}")]
    RiccatiDivergence(String),

    #[error("operator equation has no solution (residual {residual:e} vs target norm {target:e})")]
    Unsolvable { residual: f64, target: f64 },

    #[error("evaluation point {point} coincides with a pole")]
    PoleAtPoint { point: Complex<f64> },

    #[error("eigenvalue cluster at {lambda} is defective; declare its Jordan chains")]
    DefectiveUndeclared { lambda: Complex<f64> },

    #[error("eigenvector basis is ill-conditioned (condition {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("rank condition fails at {lambda} (trailing singular value {sigma:e})")]
    RankConditionFailed { lambda: Complex<f64>, sigma: f64 },

    #[error("pathway requires as many outputs as inputs (p = {p}, m = {m})")]
    NotSquare { p: usize, m: usize },

    #[error("no low-gain parameter certified: {0}")]
    NoEpsilonFound(String),

    #[error("driver dynamics are not neutrally stable: {0}")]
    FNotNeutrallyStable(String),

    #[error("interconnection matrix is singular (smallest singular value {sigma:e})")]
    SingularCrossGramian { sigma: f64 },

    #[error("coordinate matrix is singular (smallest singular value {sigma:e})")]
    SingularCoordinates { sigma: f64 },

    #[error("trajectory left the admissible region at t = {t}")]
    TrajectoryEscape { t: f64 },

    #[error("quadrature did not converge within horizon {horizon}")]
    NotConvergent { horizon: f64 },

    #[error("invariance residual {residual:e} exceeds tolerance {tol:e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("output map does not factor as required: {0}")]
    O1Violated(String),

    #[error("one-sided Lipschitz condition fails at {point:?} (max eigenvalue {max_eig:e})")]
    O2Violated { point: Vec<f64>, max_eig: f64 },

    #[error("observer gain scale {kappa} is below the required {rho}")]
    GainTooSmall { kappa: f64, rho: f64 },

    #[error("simulation produced a non-finite value at t = {t}")]
    NonFinite { t: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Stable, module-qualified identifier used in machine-readable output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonSquare { .. } => "linsolve.non_square",
            Error::ShapeMismatch(_) => "systems.shape_mismatch",
            Error::SpectraOverlap { .. } => "linsolve.spectra_overlap",
            Error::NotHurwitz { .. } => "linsolve.not_hurwitz",
            Error::NotStabilizable { .. } => "linsolve.not_stabilizable",
            Error::NotDetectable { .. } => "linsolve.not_detectable",
            Error::RiccatiDivergence(_) => "linsolve.riccati_divergence",
            Error::Unsolvable { .. } => "ssc.unsolvable",
            Error::PoleAtPoint { .. } => "moments.pole_at_point",
            Error::DefectiveUndeclared { .. } => "moments.defective_undeclared",
            Error::IllConditioned { .. } => "moments.ill_conditioned",
            Error::RankConditionFailed { .. } => "design.rank_condition_failed",
            Error::NotSquare { .. } => "design.not_square",
            Error::NoEpsilonFound(_) => "design.no_epsilon_found",
            Error::FNotNeutrallyStable(_) => "design.f_not_neutrally_stable",
            Error::SingularCrossGramian { .. } => "mor.singular_cross_gramian",
            Error::SingularCoordinates { .. } => "mor.singular_coordinates",
            Error::TrajectoryEscape { .. } => "nonlinear.trajectory_escape",
            Error::NotConvergent { .. } => "nonlinear.not_convergent",
            Error::ResidualTooLarge { .. } => "nonlinear.residual_too_large",
            Error::O1Violated(_) => "nonlinear.o1_violated",
            Error::O2Violated { .. } => "nonlinear.o2_violated",
            Error::GainTooSmall { .. } => "nonlinear.gain_too_small",
            Error::NonFinite { .. } => "sim.non_finite",
            Error::Numerical(_) => "linsolve.numerical",
            Error::Parse { .. } => "sysfile.parse",
        }
    }
}
