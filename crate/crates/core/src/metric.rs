//! Finsler metrics and quadratic pseudo-metrics on a single chart.
//!
//! Every kind reduces to one of two Lagrangian forms:
//!
//! * Randers type, `F = √(vᵀ h(x) v) + β(x)·v` and `L = F²` (Riemannian kinds
//!   have `β = 0`);
//! * quadratic, `L = vᵀ g(x) v` with `g` possibly indefinite.
//!
//! Zermelo and Fermat data are turned into Randers components by expression
//! composition when the metric is built. Derivatives of `L` come from nested
//! dual numbers ([`DerivativeStrategy::Automatic`]) or from central differences
//! of `L` ([`DerivativeStrategy::FiniteDifference`]).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ad::{seed2, Dual, Real};
use crate::error::{Error, Result};
use crate::expr::{ExprError, Expression, Params};
use crate::linalg::{lu_solve, symmetrize};

pub type ExprMatrix = Vec<Vec<Expression>>;

/// Parses a square matrix of expression strings.
pub fn parse_matrix<S: AsRef<str>>(rows: &[Vec<S>]) -> std::result::Result<ExprMatrix, ExprError> {
    rows.iter()
        .map(|r| r.iter().map(|s| Expression::parse(s.as_ref())).collect())
        .collect()
}

pub fn parse_vector<S: AsRef<str>>(items: &[S]) -> std::result::Result<Vec<Expression>, ExprError> {
    items.iter().map(|s| Expression::parse(s.as_ref())).collect()
}

#[derive(Clone, Debug)]
pub enum MetricKind {
    Euclidean,
    /// Stereographic chart of the round sphere of curvature `K`:
    /// `g = 4/(K(1+|x|²)²)·δ`.
    SphereStereo { curvature: Expression },
    Riemannian { g: ExprMatrix },
    Randers { h: ExprMatrix, beta: Vec<Expression> },
    /// Navigation data `(h, W)`; stored as the equivalent Randers metric.
    Zermelo { h: ExprMatrix, wind: Vec<Expression> },
    /// `L = vᵀ g v`, possibly indefinite.
    Quadratic { g: ExprMatrix },
    /// Fermat metric of `g0/f`, drift `V`; `reversed` selects `F₋`.
    Fermat {
        g0: ExprMatrix,
        drift: Vec<Expression>,
        lapse: Expression,
        reversed: bool,
    },
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::SphereStereo { .. } => "sphere_stereo",
            MetricKind::Riemannian { .. } => "riemannian",
            MetricKind::Randers { .. } => "randers",
            MetricKind::Zermelo { .. } => "zermelo",
            MetricKind::Quadratic { .. } => "quadratic",
            MetricKind::Fermat { .. } => "fermat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum DerivativeStrategy {
    Automatic,
    FiniteDifference { richardson: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ChartBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Everything needed to build a [`MetricField`].
#[derive(Clone, Debug)]
pub struct MetricSpec {
    pub dim: usize,
    pub kind: MetricKind,
    pub params: Params,
    pub chart: ChartBox,
    pub v_min: f64,
    pub strategy: DerivativeStrategy,
}

impl MetricSpec {
    pub fn new(dim: usize, kind: MetricKind) -> Self {
        Self {
            dim,
            kind,
            params: Params::new(),
            chart: ChartBox::cube(dim, 10.0),
            v_min: 1e-6,
            strategy: DerivativeStrategy::Automatic,
        }
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(dim, MetricKind::Euclidean)
    }

    pub fn sphere(dim: usize, curvature: f64) -> Self {
        Self::new(
            dim,
            MetricKind::SphereStereo {
                curvature: Expression::constant(curvature),
            },
        )
    }

    pub fn param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn chart(mut self, chart: ChartBox) -> Self {
        self.chart = chart;
        self
    }

    pub fn strategy(mut self, strategy: DerivativeStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn build(&self) -> Result<MetricField> {
        MetricField::new(self.clone())
    }
}

#[derive(Clone, Debug)]
enum Form {
    Euclidean,
    Sphere { k: f64 },
    Randers {
        h: Vec<Expression>,
        beta: Option<Vec<Expression>>,
    },
    Quadratic { g: Vec<Expression> },
}

/// A point of the tangent bundle in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl PhaseState {
    pub fn new(x: &[f64], v: &[f64]) -> Self {
        Self {
            x: DVector::from_column_slice(x),
            v: DVector::from_column_slice(v),
        }
    }
}

/// Value and all first and second chart derivatives of `L`.
#[derive(Clone, Debug)]
pub struct LagrangianJet {
    pub value: f64,
    pub dx: DVector<f64>,
    pub dv: DVector<f64>,
    pub dxx: DMatrix<f64>,
    /// `dxv[(i, j)] = ∂²L/∂xᵢ∂vⱼ`.
    pub dxv: DMatrix<f64>,
    pub dvv: DMatrix<f64>,
}

/// Immutable evaluator bundle for `F`, `L = F²` and their derivatives.
#[derive(Clone, Debug)]
pub struct MetricField {
    spec: MetricSpec,
    form: Form,
}

fn mat_check(name: &str, m: &ExprMatrix, n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidMetric(format!("`{name}` must be {n}x{n}")));
    }
    Ok(())
}

fn vec_check(name: &str, v: &[Expression], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::InvalidMetric(format!("`{name}` must have {n} components")));
    }
    Ok(())
}

fn flatten(m: &ExprMatrix) -> Vec<Expression> {
    m.iter().flat_map(|r| r.iter().cloned()).collect()
}

fn wind_check(h: &ExprMatrix, wind: &[Expression], p: &Params, x: &[f64]) -> Result<()> {
    let n = wind.len();
    let hm: Vec<f64> = flatten(h)
        .iter()
        .map(|e| e.eval(x, p))
        .collect::<std::result::Result<_, _>>()?;
    let w: Vec<f64> = wind.iter().map(|e| e.eval(x, p)).collect::<std::result::Result<_, _>>()?;
    let mut hww = 0.0;
    for i in 0..n {
        for j in 0..n {
            hww += w[i] * hm[i * n + j] * w[j];
        }
    }
    if !(hww < 1.0) {
        return Err(Error::WindTooStrong {
            norm_sq: hww,
            point: x.to_vec(),
        });
    }
    Ok(())
}

fn matvec(m: &[Expression], v: &[Expression], n: usize) -> Vec<Expression> {
    (0..n)
        .map(|i| Expression::sum(&(0..n).map(|k| m[i * n + k].mul(&v[k])).collect::<Vec<_>>()))
        .collect()
}

impl MetricField {
    pub fn new(spec: MetricSpec) -> Result<Self> {
        let n = spec.dim;
        if n < 1 {
            return Err(Error::InvalidMetric("dimension must be positive".into()));
        }
        if spec.chart.lo.len() != n || spec.chart.hi.len() != n {
            return Err(Error::InvalidMetric("chart box dimension mismatch".into()));
        }
        if !(spec.v_min > 0.0) {
            return Err(Error::InvalidMetric("v_min must be positive".into()));
        }
        let p = &spec.params;
        let bind_all = |es: Vec<Expression>| -> Result<Vec<Expression>> {
            es.iter()
                .map(|e| {
                    if e.arity() > n {
                        return Err(Error::InvalidMetric(format!(
                            "expression `{e}` references a coordinate beyond dimension {n}"
                        )));
                    }
                    Ok(e.bind(p)?)
                })
                .collect()
        };
        let form = match &spec.kind {
            MetricKind::Euclidean => Form::Euclidean,
            MetricKind::SphereStereo { curvature } => {
                let k = curvature.bind(p)?.eval_at::<f64>(&[])?;
                if !(k > 0.0) {
                    return Err(Error::InvalidMetric(format!("curvature must be positive, got {k}")));
                }
                Form::Sphere { k }
            }
            MetricKind::Riemannian { g } => {
                mat_check("g", g, n)?;
                Form::Randers {
                    h: bind_all(flatten(g))?,
                    beta: None,
                }
            }
            MetricKind::Randers { h, beta } => {
                mat_check("h", h, n)?;
                vec_check("beta", beta, n)?;
                Form::Randers {
                    h: bind_all(flatten(h))?,
                    beta: Some(bind_all(beta.clone())?),
                }
            }
            MetricKind::Zermelo { h, wind } => {
                mat_check("h", h, n)?;
                vec_check("wind", wind, n)?;
                // a constant wind of unit norm would otherwise surface as a division by zero
                let centre: Vec<f64> = spec.chart.lo.iter().zip(&spec.chart.hi).map(|(a, b)| 0.5 * (a + b)).collect();
                wind_check(h, wind, p, &centre)?;
                let (a, b) = zermelo_components(&flatten(h), wind, n);
                Form::Randers {
                    h: bind_all(a)?,
                    beta: Some(bind_all(b)?),
                }
            }
            MetricKind::Quadratic { g } => {
                mat_check("g", g, n)?;
                Form::Quadratic {
                    g: bind_all(flatten(g))?,
                }
            }
            MetricKind::Fermat {
                g0,
                drift,
                lapse,
                reversed,
            } => {
                mat_check("g0", g0, n)?;
                vec_check("drift", drift, n)?;
                let (h, b) = fermat_components(&flatten(g0), drift, lapse, *reversed, n);
                Form::Randers {
                    h: bind_all(h)?,
                    beta: Some(bind_all(b)?),
                }
            }
        };
        let metric = Self { spec, form };
        metric.validate_samples()?;
        Ok(metric)
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn v_min(&self) -> f64 {
        self.spec.v_min
    }

    pub fn chart(&self) -> &ChartBox {
        &self.spec.chart
    }

    pub fn kind_name(&self) -> &'static str {
        self.spec.kind.name()
    }

    /// Quadratic kinds are pseudo-metrics: no definiteness, `F_eval` returns `L`.
    pub fn is_pseudo(&self) -> bool {
        matches!(self.form, Form::Quadratic { .. })
    }

    /// `F(x,−v) = F(x,v)` by construction.
    pub fn is_reversible(&self) -> bool {
        match &self.form {
            Form::Euclidean | Form::Sphere { .. } | Form::Quadratic { .. } => true,
            Form::Randers { beta, .. } => beta.is_none(),
        }
    }

    // ------------------------------------------------------------ sampling

    /// Deterministic sample of chart points: centre, corners and 64 pseudo-random points.
    pub fn sample_points(&self) -> Vec<Vec<f64>> {
        let c = &self.spec.chart;
        let n = self.dim();
        let mut pts = vec![c.lo.iter().zip(&c.hi).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>()];
        if n <= 6 {
            for mask in 0..(1usize << n) {
                pts.push(
                    (0..n)
                        .map(|i| if mask >> i & 1 == 1 { c.hi[i] } else { c.lo[i] })
                        .collect(),
                );
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..64 {
            pts.push((0..n).map(|i| rng.random_range(c.lo[i]..=c.hi[i])).collect());
        }
        pts
    }

    fn validate_samples(&self) -> Result<()> {
        for x in self.sample_points() {
            self.check_point(&x)?;
        }
        Ok(())
    }

    /// Pointwise admissibility of the metric data (Randers condition, wind, lapse).
    fn check_point(&self, x: &[f64]) -> Result<()> {
        let n = self.dim();
        match &self.spec.kind {
            MetricKind::Fermat { lapse, .. } => {
                let f = lapse.bind(&self.spec.params)?.eval_at::<f64>(x)?;
                if !(f > 0.0) {
                    return Err(Error::NonPositiveLapse {
                        value: f,
                        point: x.to_vec(),
                    });
                }
            }
            MetricKind::Zermelo { h, wind } => wind_check(h, wind, &self.spec.params, x)?,
            _ => {}
        }
        if let Form::Randers { h, beta } = &self.form {
            let hm = self.eval_matrix::<f64>(h, x)?;
            let chol = nalgebra::Cholesky::new(DMatrix::from_row_slice(n, n, &hm));
            let chol = match chol {
                Some(c) => c,
                None => {
                    return Err(Error::InvalidMetric(format!(
                        "Riemannian part is not positive definite at {x:?}"
                    )))
                }
            };
            if let Some(beta) = beta {
                let b = DVector::from_vec(self.eval_vector::<f64>(beta, x)?);
                let norm = b.dot(&chol.solve(&b)).max(0.0).sqrt();
                if !(norm < 1.0) {
                    return Err(Error::RandersCondition {
                        norm,
                        point: x.to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    fn eval_matrix<T: Real>(&self, m: &[Expression], x: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for e in m {
            out.push(e.eval_at(x)?);
        }
        // symmetrize
        for i in 0..n {
            for j in i + 1..n {
                let s = (out[i * n + j] + out[j * n + i]) * T::cst(0.5);
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        Ok(out)
    }

    fn eval_vector<T: Real>(&self, v: &[Expression], x: &[T]) -> Result<Vec<T>> {
        v.iter().map(|e| Ok(e.eval_at(x)?)).collect()
    }

    fn check_state(&self, x: &[f64], v: &[f64]) -> Result<()> {
        if !self.spec.chart.contains(x) {
            return Err(Error::OutsideChart { point: x.to_vec() });
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < self.spec.v_min {
            return Err(Error::ZeroVelocity {
                norm,
                v_min: self.spec.v_min,
            });
        }
        self.check_point(x)
    }

    // ------------------------------------------------------------ generic core

    fn quad<T: Real>(m: &[T], v: &[T]) -> T {
        let n = v.len();
        let mut s = T::zero();
        for i in 0..n {
            let mut row = T::zero();
            for j in 0..n {
                row = row + m[i * n + j] * v[j];
            }
            s = s + v[i] * row;
        }
        s
    }

    fn sphere_factor<T: Real>(k: f64, x: &[T]) -> T {
        let r2 = x.iter().fold(T::zero(), |s, &a| s + a * a);
        let d = T::one() + r2;
        T::cst(4.0 / k) / (d * d)
    }

    /// `F` for Finsler kinds, `L` for quadratic kinds.
    pub fn finsler_t<T: Real>(&self, x: &[T], v: &[T]) -> Result<T> {
        match &self.form {
            Form::Euclidean => Ok(v.iter().fold(T::zero(), |s, &a| s + a * a).sqrt()),
            Form::Sphere { k } => {
                let vv = v.iter().fold(T::zero(), |s, &a| s + a * a);
                Ok((Self::sphere_factor(*k, x) * vv).sqrt())
            }
            Form::Randers { h, beta } => {
                let hm = self.eval_matrix(h, x)?;
                let a = Self::quad(&hm, v);
                if a.re() <= 0.0 {
                    return Err(Error::InvalidMetric("h(v,v) is not positive".into()));
                }
                let mut f = a.sqrt();
                if let Some(beta) = beta {
                    let b = self.eval_vector(beta, x)?;
                    for i in 0..v.len() {
                        f = f + b[i] * v[i];
                    }
                }
                Ok(f)
            }
            Form::Quadratic { g } => {
                let gm = self.eval_matrix(g, x)?;
                Ok(Self::quad(&gm, v))
            }
        }
    }

    /// The Lagrangian: `F²` for Finsler kinds, `vᵀ g v` for quadratic kinds.
    pub fn lagrangian_t<T: Real>(&self, x: &[T], v: &[T]) -> Result<T> {
        match &self.form {
            Form::Euclidean => Ok(v.iter().fold(T::zero(), |s, &a| s + a * a)),
            Form::Sphere { k } => {
                let vv = v.iter().fold(T::zero(), |s, &a| s + a * a);
                Ok(Self::sphere_factor(*k, x) * vv)
            }
            Form::Randers { beta: None, h } => {
                let hm = self.eval_matrix(h, x)?;
                Ok(Self::quad(&hm, v))
            }
            Form::Randers { .. } => {
                let f = self.finsler_t(x, v)?;
                Ok(f * f)
            }
            Form::Quadratic { .. } => self.finsler_t(x, v),
        }
    }

    /// Value, gradient and Hessian of `L` in `z = (x, v)` by nested duals.
    /// Returns `(value, grad[2n], hess[2n×2n] row-major)`.
    fn jet_t<T: Real>(&self, x: &[T], v: &[T]) -> Result<(T, Vec<T>, Vec<T>)> {
        let n = x.len();
        let m = 2 * n;
        let z: Vec<T> = x.iter().chain(v).copied().collect();
        let mut grad = vec![T::zero(); m];
        let mut hess = vec![T::zero(); m * m];
        let mut value = T::zero();
        for i in 0..m {
            for j in i..m {
                let s = seed2(&z, i, j);
                let l = self.lagrangian_t(&s[..n], &s[n..])?;
                if i == j {
                    grad[i] = l.eps.re;
                    value = l.re.re;
                }
                hess[i * m + j] = l.eps.eps;
                hess[j * m + i] = l.eps.eps;
            }
        }
        Ok((value, grad, hess))
    }

    /// Geodesic spray over a generic scalar. Only the passes that feed
    /// `L_x`, `L_xv` and `L_vv` are evaluated.
    pub fn spray_t<T: Real>(&self, x: &[T], v: &[T]) -> Result<Vec<T>> {
        let n = x.len();
        if let Form::Euclidean = self.form {
            return Ok(vec![T::zero(); n]);
        }
        let z: Vec<T> = x.iter().chain(v).copied().collect();
        let mut lx = vec![T::zero(); n];
        let mut lxv = vec![T::zero(); n * n];
        let mut lvv = vec![T::zero(); n * n];
        for i in 0..2 * n {
            for j in n.max(i)..2 * n {
                let s = seed2(&z, i, j);
                let l = self.lagrangian_t(&s[..n], &s[n..])?;
                if i < n {
                    lxv[i * n + j - n] = l.eps.eps;
                    if j == n {
                        lx[i] = l.eps.re;
                    }
                } else {
                    lvv[(i - n) * n + j - n] = l.eps.eps;
                    lvv[(j - n) * n + i - n] = l.eps.eps;
                }
            }
        }
        let mut rhs = Vec::with_capacity(n);
        for j in 0..n {
            let mut r = lx[j];
            for i in 0..n {
                r = r - lxv[i * n + j] * v[i];
            }
            rhs.push(r);
        }
        lu_solve(lvv, rhs, n, 1e-13).ok_or(Error::SingularVerticalHessian)
    }

    // ------------------------------------------------------------ public f64 API

    /// `F(x, v)` (the Lagrangian value for quadratic kinds).
    pub fn finsler(&self, s: &PhaseState) -> Result<f64> {
        self.check_state(s.x.as_slice(), s.v.as_slice())?;
        self.finsler_t(s.x.as_slice(), s.v.as_slice())
    }

    /// `F` without chart or velocity-floor checks; used on integrated paths.
    pub fn finsler_unchecked(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.finsler_t(x, v)
    }

    pub fn lagrangian(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.lagrangian_t(x, v)
    }

    pub fn jet(&self, x: &[f64], v: &[f64]) -> Result<LagrangianJet> {
        let n = self.dim();
        let (value, grad, hess) = match self.spec.strategy {
            DerivativeStrategy::Automatic => self.jet_t(x, v)?,
            DerivativeStrategy::FiniteDifference { richardson } => self.jet_fd(x, v, richardson)?,
        };
        let m = 2 * n;
        let h = DMatrix::from_row_slice(m, m, &hess);
        Ok(LagrangianJet {
            value,
            dx: DVector::from_column_slice(&grad[..n]),
            dv: DVector::from_column_slice(&grad[n..]),
            dxx: h.view((0, 0), (n, n)).into_owned(),
            dxv: h.view((0, n), (n, n)).into_owned(),
            dvv: h.view((n, n), (n, n)).into_owned(),
        })
    }

    fn fd_steps(&self, x: &[f64], v: &[f64], base: f64) -> Vec<f64> {
        let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(self.spec.v_min);
        x.iter()
            .map(|xi| base * xi.abs().max(1.0))
            .chain(v.iter().map(|_| base * vnorm))
            .collect()
    }

    /// Central differences of `L`: first order step `1e-5·scale`, second
    /// order and mixed `1e-4·scale`; `scale` is `max(1,|xᵢ|)` for positions
    /// and `|v|` for velocities.
    fn jet_fd(&self, x: &[f64], v: &[f64], richardson: bool) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = x.len();
        let m = 2 * n;
        let z: Vec<f64> = x.iter().chain(v).copied().collect();
        let l = |z: &[f64]| self.lagrangian_t(&z[..n], &z[n..]);
        let value = l(&z)?;
        let grad_with = |h1: &[f64]| -> Result<Vec<f64>> {
            let mut g = vec![0.0; m];
            let mut zz = z.clone();
            for i in 0..m {
                zz[i] = z[i] + h1[i];
                let fp = l(&zz)?;
                zz[i] = z[i] - h1[i];
                let fm = l(&zz)?;
                zz[i] = z[i];
                g[i] = (fp - fm) / (2.0 * h1[i]);
            }
            Ok(g)
        };
        let hess_with = |h2: &[f64]| -> Result<Vec<f64>> {
            let mut hs = vec![0.0; m * m];
            let mut zz = z.clone();
            for i in 0..m {
                zz[i] = z[i] + h2[i];
                let fp = l(&zz)?;
                zz[i] = z[i] - h2[i];
                let fm = l(&zz)?;
                zz[i] = z[i];
                hs[i * m + i] = (fp - 2.0 * value + fm) / (h2[i] * h2[i]);
                for j in i + 1..m {
                    let mut e = |si: f64, sj: f64| {
                        zz[i] = z[i] + si * h2[i];
                        zz[j] = z[j] + sj * h2[j];
                        let r = l(&zz);
                        zz[i] = z[i];
                        zz[j] = z[j];
                        r
                    };
                    let d = (e(1.0, 1.0)? - e(1.0, -1.0)? - e(-1.0, 1.0)? + e(-1.0, -1.0)?)
                        / (4.0 * h2[i] * h2[j]);
                    hs[i * m + j] = d;
                    hs[j * m + i] = d;
                }
            }
            Ok(hs)
        };
        let h1 = self.fd_steps(x, v, 1e-5);
        let h2 = self.fd_steps(x, v, 1e-4);
        let mut grad = grad_with(&h1)?;
        let mut hess = hess_with(&h2)?;
        if richardson {
            let half = |h: &[f64]| h.iter().map(|a| 0.5 * a).collect::<Vec<_>>();
            let g2 = grad_with(&half(&h1))?;
            let hs2 = hess_with(&half(&h2))?;
            for (a, b) in grad.iter_mut().zip(g2) {
                *a = (4.0 * b - *a) / 3.0;
            }
            for (a, b) in hess.iter_mut().zip(hs2) {
                *a = (4.0 * b - *a) / 3.0;
            }
        }
        Ok((value, grad, hess))
    }

    /// `g^F_v = ½ ∂²L/∂v∂v`, symmetrised; positive definite for Finsler kinds.
    pub fn fundamental_tensor(&self, s: &PhaseState) -> Result<DMatrix<f64>> {
        self.check_state(s.x.as_slice(), s.v.as_slice())?;
        let mut g = self.jet(s.x.as_slice(), s.v.as_slice())?.dvv * 0.5;
        symmetrize(&mut g);
        if !self.is_pseudo() {
            let n = self.dim() as f64;
            let tol = 1e-10 * g.trace() / n;
            let min_eig = g.clone().symmetric_eigen().eigenvalues.min();
            if !(min_eig > tol) {
                return Err(Error::ConvexityViolation { min_eig, tol });
            }
        }
        Ok(g)
    }

    /// Acceleration `ẍ` solving `L_vv ẍ = L_x − L_xvᵀ v`.
    pub fn spray(&self, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        let a = match self.spec.strategy {
            DerivativeStrategy::Automatic => self.spray_t(x, v)?,
            DerivativeStrategy::FiniteDifference { .. } => {
                let j = self.jet(x, v)?;
                let rhs = &j.dx - j.dxv.transpose() * DVector::from_column_slice(v);
                let n = self.dim();
                lu_solve(
                    j.dvv.transpose().as_slice().to_vec(),
                    rhs.as_slice().to_vec(),
                    n,
                    1e-13,
                )
                .ok_or(Error::SingularVerticalHessian)?
            }
        };
        Ok(DVector::from_vec(a))
    }

    /// `(∂S/∂x, ∂S/∂v)` of the spray, column `j` being the derivative along `eⱼ`.
    pub fn spray_jacobian(&self, x: &[f64], v: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (_, a, b) = self.spray_with_jacobian(x, v)?;
        Ok((a, b))
    }

    /// Spray together with its Jacobian blocks, sharing the dual passes.
    pub fn spray_with_jacobian(&self, x: &[f64], v: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        if let Form::Euclidean = self.form {
            return Ok((DVector::zeros(n), a, b));
        }
        match self.spec.strategy {
            DerivativeStrategy::Automatic => {
                let mut s0 = DVector::zeros(n);
                for d in 0..2 * n {
                    let xd: Vec<Dual<f64>> = (0..n)
                        .map(|i| Dual::new(x[i], if d == i { 1.0 } else { 0.0 }))
                        .collect();
                    let vd: Vec<Dual<f64>> = (0..n)
                        .map(|i| Dual::new(v[i], if d == n + i { 1.0 } else { 0.0 }))
                        .collect();
                    let s = self.spray_t(&xd, &vd)?;
                    for i in 0..n {
                        s0[i] = s[i].re;
                        if d < n {
                            a[(i, d)] = s[i].eps;
                        } else {
                            b[(i, d - n)] = s[i].eps;
                        }
                    }
                }
                Ok((s0, a, b))
            }
            DerivativeStrategy::FiniteDifference { .. } => {
                let steps = self.fd_steps(x, v, 1e-4);
                for d in 0..2 * n {
                    let (mut xp, mut vp) = (x.to_vec(), v.to_vec());
                    let (mut xm, mut vm) = (x.to_vec(), v.to_vec());
                    if d < n {
                        xp[d] += steps[d];
                        xm[d] -= steps[d];
                    } else {
                        vp[d - n] += steps[d];
                        vm[d - n] -= steps[d];
                    }
                    let col = (self.spray(&xp, &vp)? - self.spray(&xm, &vm)?) / (2.0 * steps[d]);
                    if d < n {
                        a.set_column(d, &col);
                    } else {
                        b.set_column(d - n, &col);
                    }
                }
                Ok((self.spray(x, v)?, a, b))
            }
        }
    }

    /// Samples random states and reports worst-case violations of the metric axioms.
    pub fn check_invariants(&self, samples: usize, seed: u64) -> InvariantReport {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rep = InvariantReport::default();
        let c = &self.spec.chart;
        let (lnmin, lnmax) = (self.spec.v_min.ln(), 10f64.ln());
        for _ in 0..samples {
            let x: Vec<f64> = (0..n).map(|i| rng.random_range(c.lo[i]..=c.hi[i])).collect();
            let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let dn = dir.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
            let r = rng.random_range(lnmin..lnmax).exp().max(self.spec.v_min);
            let v: Vec<f64> = dir.iter().map(|a| a / dn * r).collect();
            rep.samples += 1;
            if let Err(e) = self.check_one(&x, &v, &mut rep) {
                rep.failures.push(format!("{x:?},{v:?}: {e}"));
            }
        }
        rep
    }

    fn check_one(&self, x: &[f64], v: &[f64], rep: &mut InvariantReport) -> Result<()> {
        let s = PhaseState::new(x, v);
        let f = self.finsler(&s)?;
        for t in [0.5, 2.0, 7.0] {
            let tv: Vec<f64> = v.iter().map(|a| a * t).collect();
            let ft = self.finsler_t(x, &tv)?;
            // quadratic kinds are 2-homogeneous
            let expect = if self.is_pseudo() { t * t * f } else { t * f };
            let err = (ft - expect).abs() / expect.abs().max(1e-300);
            rep.max_homogeneity_error = rep.max_homogeneity_error.max(err);
        }
        let jet = self.jet(x, v)?;
        let g = &jet.dvv * 0.5;
        let vv = DVector::from_column_slice(v);
        let gvv = vv.dot(&(&g * &vv));
        let l = if self.is_pseudo() { f } else { f * f };
        rep.max_euler_error = rep
            .max_euler_error
            .max((gvv - l).abs() / l.abs().max(1e-300));
        let asym = (&g - g.transpose()).abs().max() / g.abs().max().max(1e-300);
        rep.max_asymmetry = rep.max_asymmetry.max(asym);
        if !self.is_pseudo() {
            let mut gs = g.clone();
            symmetrize(&mut gs);
            let ratio = gs.clone().symmetric_eigen().eigenvalues.min() / (gs.trace() / self.dim() as f64);
            rep.min_definiteness = rep.min_definiteness.min(ratio);
        }
        let sp = self.spray(x, v)?;
        let tv: Vec<f64> = v.iter().map(|a| a * 2.0).collect();
        let sp2 = self.spray(x, &tv)?;
        let denom = (4.0 * sp.norm()).max(1e-12 * (1.0 + vv.norm_squared()));
        rep.max_spray_homogeneity_error = rep
            .max_spray_homogeneity_error
            .max((&sp2 - &sp * 4.0).norm() / denom);
        let g2 = self.jet(x, &tv)?.dvv * 0.5;
        rep.max_tensor_homogeneity_error = rep
            .max_tensor_homogeneity_error
            .max((&g2 - &g).abs().max() / g.abs().max().max(1e-300));
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub samples: usize,
    pub max_homogeneity_error: f64,
    pub max_euler_error: f64,
    pub max_asymmetry: f64,
    /// Smallest `λ_min(g)/(tr g / n)` seen; `+∞` for pseudo kinds.
    pub min_definiteness: f64,
    pub max_spray_homogeneity_error: f64,
    pub max_tensor_homogeneity_error: f64,
    pub failures: Vec<String>,
}

impl Default for InvariantReport {
    fn default() -> Self {
        Self {
            samples: 0,
            max_homogeneity_error: 0.0,
            max_euler_error: 0.0,
            max_asymmetry: 0.0,
            min_definiteness: f64::INFINITY,
            max_spray_homogeneity_error: 0.0,
            max_tensor_homogeneity_error: 0.0,
            failures: Vec::new(),
        }
    }
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
            && self.max_homogeneity_error <= 1e-9
            && self.max_euler_error <= 1e-6
            && self.max_asymmetry <= 1e-12
            && self.min_definiteness > 1e-10
            && self.max_spray_homogeneity_error <= 1e-7
            && self.max_tensor_homogeneity_error <= 1e-7
    }
}

/// Randers components `(a, b)` of the navigation problem on `(h, W)`:
/// `a(y,y) = (h(W,y)² + h(y,y)·λ)/λ²`, `b(y) = −h(W,y)/λ`, `λ = 1 − h(W,W)`.
pub(crate) fn zermelo_components(
    h: &[Expression],
    wind: &[Expression],
    n: usize,
) -> (Vec<Expression>, Vec<Expression>) {
    let hw = matvec(h, wind, n);
    let hww = Expression::sum(&(0..n).map(|i| wind[i].mul(&hw[i])).collect::<Vec<_>>());
    let lam = Expression::constant(1.0).sub(&hww);
    let lam2 = lam.mul(&lam);
    let mut a = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            a.push(hw[i].mul(&hw[j]).div(&lam2).add(&h[i * n + j].div(&lam)));
        }
    }
    let b = hw.iter().map(|e| e.neg().div(&lam)).collect();
    (a, b)
}

/// Fermat components: `h = (g̃V)(g̃V)ᵀ + g̃`, `β = ±g̃V` with `g̃ = g0/f`.
pub(crate) fn fermat_components(
    g0: &[Expression],
    drift: &[Expression],
    lapse: &Expression,
    reversed: bool,
    n: usize,
) -> (Vec<Expression>, Vec<Expression>) {
    let gt: Vec<Expression> = g0.iter().map(|e| e.div(lapse)).collect();
    let a = matvec(&gt, drift, n);
    let mut h = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            h.push(a[i].mul(&a[j]).add(&gt[i * n + j]));
        }
    }
    let b = a.iter().map(|e| if reversed { e.neg() } else { e.clone() }).collect();
    (h, b)
}
