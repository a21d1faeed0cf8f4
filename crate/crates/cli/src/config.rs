//! Run configuration: JSON in, validated core types out.
//!
//! Every optional field has a default; [`Config::resolve`] fills them all
//! back so artifacts record exactly what ran.

use std::collections::BTreeMap;

use fbt_core::bifurc::{BranchOptions, SweepOptions};
use fbt_core::expr::ExprError;
use fbt_core::metric::{DerivativeStrategy, ExprMatrix};
use fbt_core::morse::{Route, SpectralOptions};
use fbt_core::{BoundaryData, ChartBox, Expression, MetricKind, MetricSpec, OdeOptions, ScanOptions};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Start point, end point and the velocity seed for a two-point problem.
pub type Endpoints = (DVector<f64>, DVector<f64>, DVector<f64>);

/// A number or an expression string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Component {
    Number(f64),
    Text(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Euclidean,
    #[serde(alias = "sphere")]
    SphereStereo,
    Riemannian,
    Randers,
    Zermelo,
    Quadratic,
    Fermat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivatives {
    #[default]
    Automatic,
    FiniteDifference,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    pub kind: Kind,
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<Component>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<Component>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<Component>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<Component>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<Vec<Component>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<Component>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lapse: Option<Component>,
    #[serde(default)]
    pub reversed: bool,
    #[serde(default)]
    pub chart: ChartBlock,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default)]
    pub derivatives: Derivatives,
}

fn default_v_min() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryBlock {
    pub x0: Vec<f64>,
    /// Tangent vectors of the submanifold, one per entry.
    pub basis: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<Component>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v0: Option<Vec<Component>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Component>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_seed: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryBlock>,
    /// Initial coordinate time of the lightlike lift.
    #[serde(default)]
    pub t0: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyBlock {
    pub parameter: String,
    pub range: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Parameter value for `branch`; when absent every detected value is probed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

fn default_samples() -> usize {
    32
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub scan_grid: usize,
    pub theta_null: f64,
    pub theta_dip: f64,
    pub start_mesh: usize,
    pub max_mesh: usize,
    pub theta_ker_rel: f64,
    pub route: Route,
    pub refine_rel: f64,
    pub branch_levels: usize,
    pub rungs: Vec<f64>,
    pub seeds_per_rung: usize,
    pub invariant_samples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let ode = OdeOptions::default();
        let scan = ScanOptions::default();
        let spec = SpectralOptions::default();
        let sweep = SweepOptions::default();
        let branch = BranchOptions::default();
        Self {
            rtol: ode.rtol,
            atol: ode.atol,
            max_steps: ode.max_steps,
            scan_grid: scan.grid,
            theta_null: scan.theta_null,
            theta_dip: scan.theta_dip,
            start_mesh: spec.start_mesh,
            max_mesh: spec.max_mesh,
            theta_ker_rel: spec.theta_ker_rel,
            route: Route::Both,
            refine_rel: sweep.refine_rel,
            branch_levels: branch.levels,
            rungs: branch.rungs,
            seeds_per_rung: branch.seeds_per_rung,
            invariant_samples: 200,
            seed: 0,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: String,
    /// Rows of sampled-path CSVs.
    pub samples: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            samples: 201,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub metric: MetricBlock,
    #[serde(default)]
    pub problem: ProblemBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyBlock>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

fn schema(pointer: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn expr(pointer: &str, c: &Component) -> Result<Expression, CliError> {
    match c {
        Component::Number(v) => Ok(Expression::constant(*v)),
        Component::Text(s) => Expression::parse(s).map_err(|e| {
            let offset = match &e {
                ExprError::Syntax { offset, .. } => Some(*offset),
                _ => None,
            };
            CliError::Expression {
                pointer: pointer.into(),
                offset,
                message: e.to_string(),
            }
        }),
    }
}

fn vector(pointer: &str, items: &[Component], n: usize) -> Result<Vec<Expression>, CliError> {
    if items.len() != n {
        return Err(schema(pointer, format!("expected {n} entries, found {}", items.len())));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, c)| expr(&format!("{pointer}/{i}"), c))
        .collect()
}

fn matrix(pointer: &str, rows: &[Vec<Component>], n: usize) -> Result<ExprMatrix, CliError> {
    if rows.len() != n {
        return Err(schema(pointer, format!("expected {n} rows, found {}", rows.len())));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| vector(&format!("{pointer}/{i}"), r, n))
        .collect()
}

fn floats(pointer: &str, v: &[f64], n: usize) -> Result<DVector<f64>, CliError> {
    if v.len() != n {
        return Err(schema(pointer, format!("expected {n} entries, found {}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn required<'a, T>(pointer: &str, v: &'a Option<T>, why: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| schema(pointer, format!("required {why}")))
}

impl Config {
    /// Fills derived defaults (the chart box) so that the serialized form is complete.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let n = self.metric.dim;
        if n == 0 {
            return Err(schema("/metric/dim", "dimension must be positive"));
        }
        let c = &mut self.metric.chart;
        let w = c.half_width.take().unwrap_or(10.0);
        let lo = c.lo.take().unwrap_or_else(|| vec![-w; n]);
        let hi = c.hi.take().unwrap_or_else(|| vec![w; n]);
        if lo.len() != n {
            return Err(schema("/metric/chart/lo", format!("expected {n} entries")));
        }
        if hi.len() != n {
            return Err(schema("/metric/chart/hi", format!("expected {n} entries")));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(schema("/metric/chart", "empty chart box"));
        }
        c.lo = Some(lo);
        c.hi = Some(hi);
        if let Some(f) = &self.family {
            if f.samples < 2 {
                return Err(schema("/family/samples", "at least two samples"));
            }
            if f.range[0] >= f.range[1] {
                return Err(schema("/family/range", "range must be increasing"));
            }
        }
        self.metric_spec()?;
        self.check_problem()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.metric.dim
    }

    pub fn metric_spec(&self) -> Result<MetricSpec, CliError> {
        let m = &self.metric;
        let n = m.dim;
        let kind = match m.kind {
            Kind::Euclidean => MetricKind::Euclidean,
            Kind::SphereStereo => MetricKind::SphereStereo {
                curvature: match &m.curvature {
                    Some(c) => expr("/metric/curvature", c)?,
                    None => Expression::constant(1.0),
                },
            },
            Kind::Riemannian => MetricKind::Riemannian {
                g: matrix("/metric/g", required("/metric/g", &m.g, "for riemannian")?, n)?,
            },
            Kind::Quadratic => MetricKind::Quadratic {
                g: matrix("/metric/g", required("/metric/g", &m.g, "for quadratic")?, n)?,
            },
            Kind::Randers => MetricKind::Randers {
                h: matrix("/metric/h", required("/metric/h", &m.h, "for randers")?, n)?,
                beta: vector("/metric/beta", required("/metric/beta", &m.beta, "for randers")?, n)?,
            },
            Kind::Zermelo => MetricKind::Zermelo {
                h: matrix("/metric/h", required("/metric/h", &m.h, "for zermelo")?, n)?,
                wind: vector("/metric/wind", required("/metric/wind", &m.wind, "for zermelo")?, n)?,
            },
            Kind::Fermat => MetricKind::Fermat {
                g0: matrix("/metric/g", required("/metric/g", &m.g, "for fermat (spatial metric g0)")?, n)?,
                drift: vector("/metric/drift", required("/metric/drift", &m.drift, "for fermat")?, n)?,
                lapse: match &m.lapse {
                    Some(c) => expr("/metric/lapse", c)?,
                    None => Expression::constant(1.0),
                },
                reversed: m.reversed,
            },
        };
        let mut spec = MetricSpec::new(n, kind);
        spec.params = m.params.clone();
        if let (Some(lo), Some(hi)) = (&m.chart.lo, &m.chart.hi) {
            spec.chart = ChartBox {
                lo: lo.clone(),
                hi: hi.clone(),
            };
        }
        spec.v_min = m.v_min;
        spec.strategy = match m.derivatives {
            Derivatives::Automatic => DerivativeStrategy::Automatic,
            Derivatives::FiniteDifference => DerivativeStrategy::FiniteDifference { richardson: true },
        };
        Ok(spec)
    }

    fn check_problem(&self) -> Result<(), CliError> {
        let n = self.dim();
        let p = &self.problem;
        if let Some(x) = &p.x0 {
            vector("/problem/x0", x, n)?;
        }
        if let Some(v) = &p.v0 {
            vector("/problem/v0", v, n)?;
        }
        if let Some(t) = &p.tau {
            expr("/problem/tau", t)?;
        }
        for (name, v) in [("p", &p.p), ("q", &p.q), ("v_seed", &p.v_seed)] {
            if let Some(v) = v {
                floats(&format!("/problem/{name}"), v, n)?;
            }
        }
        if p.boundary.is_some() {
            self.boundary()?;
        }
        Ok(())
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.metric.params
    }

    pub fn ode(&self) -> OdeOptions {
        OdeOptions {
            rtol: self.solver.rtol,
            atol: self.solver.atol,
            max_steps: self.solver.max_steps,
            ..OdeOptions::default()
        }
    }

    pub fn scan(&self) -> ScanOptions {
        ScanOptions {
            grid: self.solver.scan_grid,
            theta_null: self.solver.theta_null,
            theta_dip: self.solver.theta_dip,
            ..ScanOptions::default()
        }
    }

    pub fn spectral(&self) -> SpectralOptions {
        SpectralOptions {
            start_mesh: self.solver.start_mesh,
            max_mesh: self.solver.max_mesh,
            theta_ker_rel: self.solver.theta_ker_rel,
            ..SpectralOptions::default()
        }
    }

    pub fn sweep(&self) -> SweepOptions {
        SweepOptions {
            scan: self.scan(),
            spectral: self.spectral(),
            refine_rel: self.solver.refine_rel,
            ode: self.ode(),
            ..SweepOptions::default()
        }
    }

    pub fn branch(&self) -> BranchOptions {
        BranchOptions {
            levels: self.solver.branch_levels,
            rungs: self.solver.rungs.clone(),
            seeds_per_rung: self.solver.seeds_per_rung,
            seed: self.solver.seed,
            ..BranchOptions::default()
        }
    }

    /// Initial point, velocity and span as expressions (they may use the family parameter).
    pub fn initial_exprs(&self) -> Result<(Vec<Expression>, Vec<Expression>, Expression), CliError> {
        let p = &self.problem;
        let x0 = vector("/problem/x0", required("/problem/x0", &p.x0, "initial point")?, self.dim())?;
        let (v0, tau) = self.velocity_and_span()?;
        Ok((x0, v0, tau))
    }

    pub fn velocity_and_span(&self) -> Result<(Vec<Expression>, Expression), CliError> {
        let p = &self.problem;
        let v0 = vector("/problem/v0", required("/problem/v0", &p.v0, "initial velocity")?, self.dim())?;
        let tau = match &p.tau {
            Some(t) => expr("/problem/tau", t)?,
            None => Expression::constant(1.0),
        };
        Ok((v0, tau))
    }

    pub fn endpoints(&self) -> Result<Endpoints, CliError> {
        let n = self.dim();
        let p = &self.problem;
        let a = floats("/problem/p", required("/problem/p", &p.p, "start point")?, n)?;
        let b = floats("/problem/q", required("/problem/q", &p.q, "end point")?, n)?;
        let seed = match &p.v_seed {
            Some(v) => floats("/problem/v_seed", v, n)?,
            None => &b - &a,
        };
        Ok((a, b, seed))
    }

    pub fn has_endpoints(&self) -> bool {
        self.problem.p.is_some() && self.problem.q.is_some() && self.problem.x0.is_none()
    }

    pub fn boundary(&self) -> Result<BoundaryData, CliError> {
        let n = self.dim();
        let b = required("/problem/boundary", &self.problem.boundary, "submanifold data")?;
        let x0 = floats("/problem/boundary/x0", &b.x0, n)?;
        let k = b.basis.len();
        if k >= n {
            return Err(schema("/problem/boundary/basis", format!("at most {} tangent vectors", n - 1)));
        }
        let mut basis = DMatrix::zeros(n, k);
        for (j, w) in b.basis.iter().enumerate() {
            basis.set_column(j, &floats(&format!("/problem/boundary/basis/{j}"), w, n)?);
        }
        let shape = match &b.shape {
            None => None,
            Some(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(schema("/problem/boundary/shape", format!("expected a {k}x{k} matrix")));
                }
                Some(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
            }
        };
        BoundaryData::new(x0, basis, shape).map_err(|e| schema("/problem/boundary", e.to_string()))
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<Config, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        let inner = e.into_inner();
        if inner.is_data() {
            CliError::Schema {
                pointer,
                message: inner.to_string(),
            }
        } else {
            CliError::Parse {
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        }
    })?;
    cfg.resolve()
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for s in path.iter() {
        match s {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}
