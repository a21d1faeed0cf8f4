//! Geodesic integration, the exponential map and shooting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jacobi::expmap_jacobian_with;
use crate::linalg::singular_values;
use crate::metric::{MetricField, PhaseState};
use crate::ode::{integrate, DenseSolution, OdeOptions, Outcome};

/// Default Euler–Lagrange residual tolerance (relative to `1 + |v|²`).
pub const TOL_RES: f64 = 1e-6;

/// A geodesic `t ↦ (x(t), v(t))` on `[0, τ]` with dense output.
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    metric: MetricField,
    initial: PhaseState,
    tau: f64,
    speed: f64,
    opts: OdeOptions,
    sol: DenseSolution,
}

impl GeodesicPath {
    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn initial(&self) -> &PhaseState {
        &self.initial
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `F(x(0), v(0))`; the Lagrangian value for quadratic kinds.
    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn options(&self) -> &OdeOptions {
        &self.opts
    }

    pub fn solution(&self) -> &DenseSolution {
        &self.sol
    }

    /// Accepted integrator steps.
    pub fn grid(&self) -> &[f64] {
        &self.sol.t
    }

    pub fn dim(&self) -> usize {
        self.initial.x.len()
    }

    pub fn state_at(&self, t: f64) -> PhaseState {
        let y = self.sol.eval(t);
        let n = self.dim();
        PhaseState::new(&y[..n], &y[n..])
    }

    pub fn endpoint(&self) -> PhaseState {
        let n = self.dim();
        let y = self.sol.y.last().expect("non-empty");
        PhaseState::new(&y[..n], &y[n..])
    }

    /// Acceleration of the interpolant, used for residual checks.
    pub fn acceleration_at(&self, t: f64) -> DVector<f64> {
        let n = self.dim();
        DVector::from_column_slice(&self.sol.eval_derivative(t)[n..])
    }

    /// `max |F(γ(t), γ̇(t)) − F₀| / |F₀|` over the step grid and step midpoints
    /// (absolute when `F₀ = 0`).
    pub fn speed_deviation(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        let scale = if self.speed.abs() > 0.0 { self.speed.abs() } else { 1.0 };
        let g = self.grid();
        let mut ts: Vec<f64> = g.to_vec();
        ts.extend(g.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        for t in ts {
            let s = self.state_at(t);
            let f = self.metric.finsler_unchecked(s.x.as_slice(), s.v.as_slice())?;
            worst = worst.max((f - self.speed).abs() / scale);
        }
        Ok(worst)
    }

    /// Largest Euler–Lagrange residual `|γ̈ − S(γ, γ̇)| / (1 + |γ̇|²)` at 20
    /// deterministic interior instants.
    pub fn el_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            // golden-ratio points avoid step boundaries
            let frac = (0.5 + k as f64 * 0.618_033_988_749_894_9).fract();
            let t = self.tau * (0.02 + 0.96 * frac);
            let s = self.state_at(t);
            let acc = self.acceleration_at(t);
            let spray = self.metric.spray(s.x.as_slice(), s.v.as_slice())?;
            worst = worst.max((acc - spray).norm() / (1.0 + s.v.norm_squared()));
        }
        Ok(worst)
    }

    /// Uniform samples `(t, state)` including both ends.
    pub fn samples(&self, count: usize) -> Vec<(f64, PhaseState)> {
        let m = count.max(2) - 1;
        (0..=m)
            .map(|k| {
                let t = self.tau * k as f64 / m as f64;
                (t, self.state_at(t))
            })
            .collect()
    }
}

fn rhs(metric: &MetricField, n: usize) -> impl FnMut(f64, &[f64]) -> Result<Vec<f64>> + '_ {
    move |_t, y| {
        let a = metric.spray(&y[..n], &y[n..])?;
        let mut out = y[n..].to_vec();
        out.extend_from_slice(a.as_slice());
        Ok(out)
    }
}

/// Integrates `(x, v)' = (v, S(x, v))` over `[0, τ]`.
pub fn integrate_geodesic(m: &MetricField, s0: &PhaseState, tau: f64, opts: &OdeOptions) -> Result<GeodesicPath> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let n = m.dim();
    if s0.x.len() != n || s0.v.len() != n {
        return Err(Error::InvalidInput(format!("state dimension differs from metric dimension {n}")));
    }
    let speed = m.finsler(s0)?;
    let y0: Vec<f64> = s0.x.iter().chain(s0.v.iter()).copied().collect();
    let chart = m.chart().clone();
    let out = integrate(rhs(m, n), 0.0, &y0, tau, opts, |y| !chart.contains(&y[..n]))?;
    match out {
        Outcome::Completed(sol) => Ok(GeodesicPath {
            metric: m.clone(),
            initial: s0.clone(),
            tau,
            speed,
            opts: *opts,
            sol,
        }),
        Outcome::Stopped { t_stop, .. } => Err(Error::LeftChart { t_exit: t_stop }),
    }
}

/// `exp_p(v) = γ_v(1)`.
pub fn exp_map(m: &MetricField, p: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    exp_map_with(m, p, v, &OdeOptions::default())
}

pub fn exp_map_with(m: &MetricField, p: &DVector<f64>, v: &DVector<f64>, opts: &OdeOptions) -> Result<DVector<f64>> {
    let path = integrate_geodesic(m, &PhaseState { x: p.clone(), v: v.clone() }, 1.0, opts)?;
    Ok(path.endpoint().x)
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ConnectOptions {
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Convergence when `|exp_p(v) − q| ≤ tol·(1 + |q|)`.
    pub tol: f64,
    /// `σ_min/σ_max` of `D exp` below which the endpoint counts as conjugate.
    pub singular_ratio: f64,
    pub ode: OdeOptions,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            max_halvings: 8,
            tol: 1e-10,
            singular_ratio: 1e-8,
            ode: OdeOptions {
                rtol: 1e-11,
                atol: 1e-13,
                ..OdeOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectResult {
    pub v: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Converged onto a point where `D exp` is singular (one of a continuum).
    pub degenerate: bool,
    pub jacobian_ratio: f64,
}

fn ratio_of(j: &DMatrix<f64>) -> f64 {
    let s = singular_values(j);
    let smax = s[0];
    if smax == 0.0 {
        0.0
    } else {
        s[s.len() - 1] / smax
    }
}

/// Damped Newton shooting for `exp_p(v) = q`.
pub fn connect(
    m: &MetricField,
    p: &DVector<f64>,
    q: &DVector<f64>,
    v_seed: &DVector<f64>,
    opts: &ConnectOptions,
) -> Result<ConnectResult> {
    let tol = opts.tol * (1.0 + q.norm());
    let mut v = v_seed.clone();
    // residuals always come from the path-only integration so that Newton sees one map
    let mut r = exp_map_with(m, p, &v, &opts.ode)? - q;
    for it in 0..=opts.max_iter {
        let (_, j) = expmap_jacobian_with(m, p, &v, &opts.ode)?;
        let ratio = ratio_of(&j);
        if r.norm() <= tol {
            return Ok(ConnectResult {
                v,
                residual: r.norm(),
                iterations: it,
                degenerate: ratio < opts.singular_ratio,
                jacobian_ratio: ratio,
            });
        }
        if it == opts.max_iter {
            break;
        }
        if ratio < opts.singular_ratio {
            return Err(Error::SingularJacobian { ratio });
        }
        let step = j.lu().solve(&(-&r)).ok_or(Error::SingularJacobian { ratio })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &v + &step * lambda;
            if let Ok(e) = exp_map_with(m, p, &trial, &opts.ode) {
                let rn = e - q;
                if rn.norm() < r.norm() {
                    v = trial;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: it + 1,
                residual: r.norm(),
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: r.norm(),
    })
}

/// A submanifold `P` through `x₀` described to first and second order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub x0: DVector<f64>,
    /// `n×k`, columns spanning `T_{x₀}P`.
    pub basis: DMatrix<f64>,
    /// `k×k` symmetric shape operator acting on chart derivatives.
    pub shape: DMatrix<f64>,
}

impl BoundaryData {
    pub fn new(x0: DVector<f64>, basis: DMatrix<f64>, shape: Option<DMatrix<f64>>) -> Result<Self> {
        let (n, k) = basis.shape();
        if n != x0.len() {
            return Err(Error::InvalidInput("basis rows must match the point dimension".into()));
        }
        if k >= n {
            return Err(Error::InvalidInput(format!("submanifold dimension {k} must be below {n}")));
        }
        if k > 0 {
            let s = singular_values(&basis);
            if s[k - 1] <= 1e-10 * s[0] {
                return Err(Error::InvalidInput("basis columns are linearly dependent".into()));
            }
        }
        let shape = shape.unwrap_or_else(|| DMatrix::zeros(k, k));
        if shape.shape() != (k, k) {
            return Err(Error::InvalidInput(format!("shape operator must be {k}x{k}")));
        }
        if (&shape - shape.transpose()).abs().max() > 1e-12 * shape.abs().max().max(1.0) {
            return Err(Error::InvalidInput("shape operator must be symmetric".into()));
        }
        Ok(Self { x0, basis, shape })
    }

    /// `P = {x₀}`.
    pub fn point(x0: DVector<f64>) -> Self {
        let n = x0.len();
        Self {
            x0,
            basis: DMatrix::zeros(n, 0),
            shape: DMatrix::zeros(0, 0),
        }
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }
}

/// `max_j |g_v(v, w_j)| / (√|g_v(v,v)|·√|g_v(w_j,w_j)|)`.
pub fn perpendicular_residual(m: &MetricField, b: &BoundaryData, v: &DVector<f64>) -> Result<f64> {
    if b.k() == 0 {
        return Ok(0.0);
    }
    let g = m.jet(b.x0.as_slice(), v.as_slice())?.dvv * 0.5;
    let gv = &g * v;
    let vv = v.dot(&gv).abs().sqrt();
    let mut worst: f64 = 0.0;
    for w in b.basis.column_iter() {
        let ww = w.dot(&(&g * w)).abs().sqrt();
        worst = worst.max(w.dot(&gv).abs() / (vv * ww).max(1e-300));
    }
    Ok(worst)
}

/// Finds `v ∈ v_seed + T_{x₀}P` with `g_v(v, w) = 0` for every `w ∈ T_{x₀}P`.
pub fn orthogonal_initial(m: &MetricField, b: &BoundaryData, v_seed: &DVector<f64>) -> Result<DVector<f64>> {
    let k = b.k();
    if k == 0 {
        return Ok(v_seed.clone());
    }
    let w = &b.basis;
    let wtw = w.transpose() * w;
    let proj = w * wtw.clone().lu().solve(&(w.transpose() * v_seed)).expect("independent basis");
    if (v_seed - proj).norm() <= 1e-8 * v_seed.norm() {
        return Err(Error::TangentSeed);
    }
    let mut v = v_seed.clone();
    let mut res = f64::INFINITY;
    for _ in 0..50 {
        let jet = m.jet(b.x0.as_slice(), v.as_slice())?;
        res = perpendicular_residual(m, b, &v)?;
        if res <= 1e-13 {
            return Ok(v);
        }
        let phi = w.transpose() * &jet.dv * 0.5;
        let jac = w.transpose() * &jet.dvv * w * 0.5;
        let dc = jac.lu().solve(&(-phi)).ok_or(Error::SingularVerticalHessian)?;
        v += w * dc;
    }
    if res <= 1e-10 {
        return Ok(v);
    }
    Err(Error::NoConvergence { iterations: 50, residual: res })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{parse_matrix, parse_vector, MetricKind, MetricSpec};
    use std::f64::consts::PI;

    fn dv(a: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(a)
    }

    fn sphere() -> MetricField {
        MetricSpec::sphere(2, 1.0).build().unwrap()
    }

    /// Unit-speed great circle through (0,−1); the conformal factor is 1 on the unit circle.
    fn circle(t: f64) -> [f64; 2] {
        [t.sin(), -t.cos()]
    }

    #[test]
    fn euclidean_line() {
        let e = MetricSpec::euclidean(2).build().unwrap();
        let p = integrate_geodesic(&e, &PhaseState::new(&[0.0, 0.0], &[1.0, 0.0]), 3.0, &OdeOptions::default()).unwrap();
        let end = p.endpoint();
        assert!((end.x[0] - 3.0).abs() < 1e-12 && end.x[1].abs() < 1e-12);
        let q = exp_map(&e, &dv(&[1.0, 2.0]), &dv(&[0.5, -0.25])).unwrap();
        assert!((q - dv(&[1.5, 1.75])).norm() < 1e-12);
    }

    #[test]
    fn sphere_great_circle() {
        let s = sphere();
        let p = integrate_geodesic(&s, &PhaseState::new(&[0.0, -1.0], &[1.0, 0.0]), PI, &OdeOptions::default()).unwrap();
        let end = p.endpoint();
        assert!(end.x[0].abs() < 1e-8 && (end.x[1] - 1.0).abs() < 1e-8, "{}", end.x);
        for t in [0.3, 1.1, 2.0, 2.9] {
            let c = circle(t);
            let x = p.state_at(t).x;
            assert!((x[0] - c[0]).abs() < 1e-8 && (x[1] - c[1]).abs() < 1e-8);
        }
        assert!(p.speed_deviation().unwrap() < 1e-7);
        assert!(p.el_residual().unwrap() < TOL_RES);
        let q = exp_map(&s, &dv(&[0.0, -1.0]), &dv(&[PI, 0.0])).unwrap();
        assert!((q - dv(&[0.0, 1.0])).norm() < 1e-8);
        let q = exp_map(&s, &dv(&[0.0, -1.0]), &dv(&[PI / 2.0, 0.0])).unwrap();
        assert!((q - dv(&[1.0, 0.0])).norm() < 1e-8);
    }

    #[test]
    fn left_chart_is_reported() {
        let e = MetricSpec::euclidean(2).build().unwrap();
        let r = integrate_geodesic(&e, &PhaseState::new(&[0.0, 0.0], &[1.0, 0.0]), 20.0, &OdeOptions::default());
        match r {
            Err(Error::LeftChart { t_exit }) => assert!((t_exit - 10.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn constant_wind_geodesic_is_straight() {
        let z = MetricSpec::new(
            2,
            MetricKind::Zermelo {
                h: parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap(),
                wind: parse_vector(&["0.5", "0"]).unwrap(),
            },
        )
        .build()
        .unwrap();
        let p = integrate_geodesic(&z, &PhaseState::new(&[0.0, 0.0], &[1.0, 0.0]), 1.0, &OdeOptions::default()).unwrap();
        for (_, s) in p.samples(11) {
            assert!(s.x[1].abs() < 1e-14 && (s.v[0] - 1.0).abs() < 1e-12);
        }
        assert!(p.el_residual().unwrap() < 1e-12);
    }

    #[test]
    fn connect_examples() {
        let e = MetricSpec::euclidean(2).build().unwrap();
        let r = connect(&e, &dv(&[0.0, 0.0]), &dv(&[2.0, 1.0]), &dv(&[0.3, -0.7]), &ConnectOptions::default()).unwrap();
        assert!((r.v - dv(&[2.0, 1.0])).norm() < 1e-10);

        let s = sphere();
        let q = dv(&circle(1.0));
        let r = connect(&s, &dv(&[0.0, -1.0]), &q, &dv(&[0.9, 0.1]), &ConnectOptions::default()).unwrap();
        let f = s.finsler(&PhaseState { x: dv(&[0.0, -1.0]), v: r.v.clone() }).unwrap();
        assert!((f - 1.0).abs() < 1e-8);
        assert!((exp_map(&s, &dv(&[0.0, -1.0]), &r.v).unwrap() - q).norm() < 1e-9);

        let anti = connect(&s, &dv(&[0.0, -1.0]), &dv(&[0.0, 1.0]), &dv(&[3.0, 0.2]), &ConnectOptions::default());
        match anti {
            Err(Error::SingularJacobian { .. }) => {}
            Ok(r) => assert!(r.degenerate),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn orthogonal_initial_examples() {
        let e = MetricSpec::euclidean(2).build().unwrap();
        let b = BoundaryData::new(dv(&[0.0, 0.0]), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), None).unwrap();
        let v = orthogonal_initial(&e, &b, &dv(&[0.3, 1.0])).unwrap();
        assert!((v - dv(&[0.0, 1.0])).norm() < 1e-12);
        assert!(matches!(orthogonal_initial(&e, &b, &dv(&[1.0, 0.0])), Err(Error::TangentSeed)));

        let r = MetricSpec::new(
            2,
            MetricKind::Randers {
                h: parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap(),
                beta: parse_vector(&["0.5", "0"]).unwrap(),
            },
        )
        .build()
        .unwrap();
        let v = orthogonal_initial(&r, &b, &dv(&[0.0, 1.0])).unwrap();
        assert!(perpendicular_residual(&r, &b, &v).unwrap() <= 1e-10);
        // F·(v₁/|v| + ½) = 0 forces v₁ = −1/√3 on the seed line v₂ = 1
        assert!((v[0] + 1.0 / 3f64.sqrt()).abs() < 1e-10 && (v[1] - 1.0).abs() < 1e-15);

        let s = sphere();
        let b = BoundaryData::new(dv(&[0.0, -1.0]), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), None).unwrap();
        let v = orthogonal_initial(&s, &b, &dv(&[0.0, 1.0])).unwrap();
        assert!(v[0].abs() < 1e-14 && v[1] > 0.0);
    }
}
