use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("velocity norm {norm:e} below the admissible floor {v_min:e}")]
    ZeroVelocity { norm: f64, v_min: f64 },
    #[error("point {point:?} outside the chart box")]
    OutsideChart { point: Vec<f64> },
    #[error("fundamental tensor not positive definite (min eigenvalue {min_eig:e}, tolerance {tol:e})")]
    ConvexityViolation { min_eig: f64, tol: f64 },
    #[error("vertical Hessian of the Lagrangian is singular")]
    SingularVerticalHessian,
    #[error("Randers condition violated: |beta|_h = {norm} at {point:?}")]
    RandersCondition { norm: f64, point: Vec<f64> },
    #[error("wind too strong: h(W,W) = {norm_sq} at {point:?}")]
    WindTooStrong { norm_sq: f64, point: Vec<f64> },
    #[error("non-positive lapse f = {value} at {point:?}")]
    NonPositiveLapse { value: f64, point: Vec<f64> },
    #[error("geodesic left the chart at t = {t_exit}")]
    LeftChart { t_exit: f64 },
    #[error("integrator step failure at t = {t}: {reason}")]
    StepFailure { t: f64, reason: String },
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("exponential-map Jacobian is singular (sigma_min/sigma_max = {ratio:e}); endpoint is conjugate")]
    SingularJacobian { ratio: f64 },
    #[error("seed velocity is tangent to the submanifold")]
    TangentSeed,
    #[error("geodesic does not start perpendicular to the submanifold (residual {residual:e})")]
    NotPerpendicular { residual: f64 },
    #[error("path is not a critical point (Euler-Lagrange residual {residual:e})")]
    NotCritical { residual: f64 },
    #[error("index counts did not stabilise up to {max_mesh} elements")]
    NoStabilization { max_mesh: usize },
    #[error("trivial branch lost at lambda = {lambda}: {reason}")]
    BranchLost { lambda: f64, reason: String },
    #[error("path is not a geodesic of the Fermat metric: {0}")]
    NotFermatGeodesic(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
