use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("expression error at {pointer}{}: {message}", offset.map(|o| format!(" (offset {o})")).unwrap_or_default())]
    Expression {
        pointer: String,
        offset: Option<usize>,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error(transparent)]
    Numerical(#[from] fbt_core::Error),
}

impl CliError {
    /// 1 for anything wrong with the configuration, 2 for failures while computing or writing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Schema { .. } | CliError::Expression { .. } | CliError::Read { .. } => 1,
            // a name missing from `params` is a configuration mistake, not a numerical one
            CliError::Numerical(fbt_core::Error::Expr(fbt_core::ExprError::UnboundName(_))) => 1,
            CliError::Write { .. } | CliError::Numerical(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::Schema { .. } => "SchemaError",
            CliError::Expression { .. } => "ExpressionError",
            CliError::Read { .. } => "ReadError",
            CliError::Write { .. } => "IoError",
            CliError::Numerical(e) => numerical_kind(e),
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Parse { line, column, .. } => {
                v["line"] = json!(line);
                v["column"] = json!(column);
            }
            CliError::Schema { pointer, .. } => v["pointer"] = json!(pointer),
            CliError::Expression { pointer, offset, .. } => {
                v["pointer"] = json!(pointer);
                v["offset"] = json!(offset);
            }
            _ => {}
        }
        v
    }
}

fn numerical_kind(e: &fbt_core::Error) -> &'static str {
    use fbt_core::Error::*;
    match e {
        Expr(_) => "ExpressionError",
        InvalidMetric(_) => "InvalidMetric",
        ZeroVelocity { .. } => "ZeroVelocity",
        OutsideChart { .. } => "OutsideChart",
        ConvexityViolation { .. } => "ConvexityViolation",
        SingularVerticalHessian => "SingularVerticalHessian",
        RandersCondition { .. } => "RandersConditionViolated",
        WindTooStrong { .. } => "WindTooStrong",
        NonPositiveLapse { .. } => "NonPositiveLapse",
        LeftChart { .. } => "LeftChart",
        StepFailure { .. } => "StepFailure",
        NoConvergence { .. } => "NoConvergence",
        SingularJacobian { .. } => "SingularJacobian",
        TangentSeed => "TangentSeed",
        NotPerpendicular { .. } => "NotPerpendicular",
        NotCritical { .. } => "NotCritical",
        NoStabilization { .. } => "NoStabilization",
        BranchLost { .. } => "BranchLost",
        NotFermatGeodesic(_) => "NotFermatGeodesic",
        InvalidInput(_) => "InvalidInput",
    }
}
