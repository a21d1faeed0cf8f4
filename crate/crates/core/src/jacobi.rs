//! Jacobi frames from the linearised spray, the exponential-map Jacobian and
//! detection of conjugate and focal instants.
//!
//! A frame is a pair `(M, Ṁ)` of `n×n` matrices whose columns solve
//! `J̈ = D_xS·J + D_vS·J̇` along the geodesic. It is integrated together with
//! the geodesic itself, so no interpolation error enters the linearisation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geoflow::{perpendicular_residual, BoundaryData, GeodesicPath};
use crate::linalg::{null_space, singular_values};
use crate::metric::{MetricField, PhaseState};
use crate::ode::{integrate, DenseSolution, OdeOptions, Outcome};

#[derive(Clone, Debug, PartialEq)]
pub enum FrameInit {
    /// `M(0) = 0`, `Ṁ(0) = I`.
    Conjugate,
    /// `M(0) = [W | 0]`, `Ṁ(0) = [W·S̃ | N]` with `N` spanning the
    /// `g_{v₀}`-orthogonal complement of `T_{x₀}P = span W`.
    Focal(BoundaryData),
}

#[derive(Clone, Debug)]
pub struct JacobiFrame {
    n: usize,
    tau: f64,
    sol: DenseSolution,
    metric: MetricField,
}

impl JacobiFrame {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &[f64] {
        &self.sol.t
    }

    pub fn state_at(&self, t: f64) -> PhaseState {
        let y = self.sol.eval(t);
        PhaseState::new(&y[..self.n], &y[self.n..2 * self.n])
    }

    pub fn matrix(&self, t: f64) -> DMatrix<f64> {
        let n = self.n;
        let y = self.sol.eval(t);
        DMatrix::from_column_slice(n, n, &y[2 * n..2 * n + n * n])
    }

    pub fn matrix_dot(&self, t: f64) -> DMatrix<f64> {
        let n = self.n;
        let y = self.sol.eval(t);
        DMatrix::from_column_slice(n, n, &y[2 * n + n * n..])
    }

    /// `max |M̈ − A·M − B·Ṁ| / (1 + |M| + |Ṁ|)` at 20 interior instants.
    pub fn linearization_residual(&self) -> Result<f64> {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            let frac = (0.5 + k as f64 * 0.618_033_988_749_894_9).fract();
            let t = self.tau * (0.02 + 0.96 * frac);
            let s = self.state_at(t);
            let (_, a, b) = self.metric.spray_with_jacobian(s.x.as_slice(), s.v.as_slice())?;
            let m = self.matrix(t);
            let md = self.matrix_dot(t);
            let d = self.sol.eval_derivative(t);
            let mdd = DMatrix::from_column_slice(n, n, &d[2 * n + n * n..]);
            let r = (mdd - a * &m - b * &md).norm() / (1.0 + m.norm() + md.norm());
            worst = worst.max(r);
        }
        Ok(worst)
    }
}

fn initial_matrices(m: &MetricField, s0: &PhaseState, init: &FrameInit) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.dim();
    match init {
        FrameInit::Conjugate => Ok((DMatrix::zeros(n, n), DMatrix::identity(n, n))),
        FrameInit::Focal(b) => {
            let k = b.k();
            let g = m.jet(s0.x.as_slice(), s0.v.as_slice())?.dvv * 0.5;
            let wtg = b.basis.transpose() * &g;
            let normal = null_space(&wtg, n);
            if normal.ncols() != n - k {
                return Err(Error::InvalidInput("degenerate normal complement".into()));
            }
            let mut m0 = DMatrix::zeros(n, n);
            let mut md0 = DMatrix::zeros(n, n);
            m0.view_mut((0, 0), (n, k)).copy_from(&b.basis);
            md0.view_mut((0, 0), (n, k)).copy_from(&(&b.basis * &b.shape));
            md0.view_mut((0, k), (n, n - k)).copy_from(&normal);
            Ok((m0, md0))
        }
    }
}

/// Integrates geodesic and frame jointly from `s0` over `[0, τ]`.
pub fn frame_from_state(
    m: &MetricField,
    s0: &PhaseState,
    tau: f64,
    init: &FrameInit,
    opts: &OdeOptions,
) -> Result<JacobiFrame> {
    let n = m.dim();
    m.finsler(s0)?;
    let (m0, md0) = initial_matrices(m, s0, init)?;
    let mut y0: Vec<f64> = s0.x.iter().chain(s0.v.iter()).copied().collect();
    y0.extend_from_slice(m0.as_slice());
    y0.extend_from_slice(md0.as_slice());
    let rhs = |_t: f64, y: &[f64]| -> Result<Vec<f64>> {
        let (s, a, b) = m.spray_with_jacobian(&y[..n], &y[n..2 * n])?;
        let mm = DMatrix::from_column_slice(n, n, &y[2 * n..2 * n + n * n]);
        let md = DMatrix::from_column_slice(n, n, &y[2 * n + n * n..]);
        let mdd = a * &mm + b * &md;
        let mut out = Vec::with_capacity(y.len());
        out.extend_from_slice(&y[n..2 * n]);
        out.extend_from_slice(s.as_slice());
        out.extend_from_slice(md.as_slice());
        out.extend_from_slice(mdd.as_slice());
        Ok(out)
    };
    let chart = m.chart().clone();
    match integrate(rhs, 0.0, &y0, tau, opts, |y| !chart.contains(&y[..n]))? {
        Outcome::Completed(sol) => Ok(JacobiFrame {
            n,
            tau,
            sol,
            metric: m.clone(),
        }),
        Outcome::Stopped { t_stop, .. } => Err(Error::LeftChart { t_exit: t_stop }),
    }
}

/// Frame along an existing geodesic (same metric, initial state, span and tolerances).
pub fn jacobi_frame(path: &GeodesicPath, init: &FrameInit) -> Result<JacobiFrame> {
    frame_from_state(path.metric(), path.initial(), path.tau(), init, path.options())
}

/// `D exp_p(v)`: the columns are `∂exp_p(v)/∂vⱼ`.
pub fn expmap_jacobian(m: &MetricField, p: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(expmap_jacobian_with(m, p, v, &OdeOptions::default())?.1)
}

/// `(exp_p(v), D exp_p(v))` from one joint integration.
pub fn expmap_jacobian_with(
    m: &MetricField,
    p: &DVector<f64>,
    v: &DVector<f64>,
    opts: &OdeOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = frame_from_state(m, &PhaseState { x: p.clone(), v: v.clone() }, 1.0, &FrameInit::Conjugate, opts)?;
    Ok((f.state_at(1.0).x, f.matrix(1.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanOptions {
    pub grid: usize,
    pub theta_null: f64,
    pub theta_dip: f64,
    pub refine_tol: f64,
    /// Candidates closer than this many grid cells are merged.
    pub merge_cells: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            grid: 400,
            theta_null: 1e-6,
            theta_dip: 1e-4,
            refine_tol: 1e-10,
            merge_cells: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugateInstant {
    pub t: f64,
    pub multiplicity: usize,
    pub sigma_min: f64,
    /// `σ_min/σ_max` at `t`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugateReport {
    pub instants: Vec<ConjugateInstant>,
    pub tau: f64,
    pub grid: usize,
    pub theta_null: f64,
    pub theta_dip: f64,
    /// Merges of nearby candidates.
    pub warnings: Vec<String>,
    /// Multiplicities above the expected bound.
    pub flagged: Vec<String>,
}

fn sv(m: &DMatrix<f64>) -> (f64, f64, Vec<f64>) {
    let s = singular_values(m);
    let smax = s[0];
    let smin = s[s.len() - 1];
    (smin, if smax > 0.0 { smin / smax } else { 0.0 }, s)
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const R: f64 = 0.618_033_988_749_894_9;
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = f(d);
        }
    }
    // the ends may be better than the interior bracket for boundary minima
    let mid = 0.5 * (a + b);
    [(mid, f(mid)), (a, f(a)), (b, f(b))]
        .into_iter()
        .fold((mid, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
        .0
}

fn bisect_sign<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    while b - a > tol {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if (fm > 0.0) == (fa > 0.0) && fm != 0.0 {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Detects instants in `(0, τ]` where the frame drops rank.
pub fn scan_frame(frame: &JacobiFrame, opts: &ScanOptions) -> ConjugateReport {
    let tau = frame.tau;
    let n = frame.n;
    let g = opts.grid.max(4);
    let ts: Vec<f64> = (1..=g).map(|k| tau * k as f64 / g as f64).collect();
    let mats: Vec<DMatrix<f64>> = ts.iter().map(|&t| frame.matrix(t)).collect();
    let dets: Vec<f64> = mats.iter().map(|m| m.determinant()).collect();
    let ratios: Vec<f64> = mats.iter().map(|m| sv(m).1).collect();
    let ratio_at = |t: f64| sv(&frame.matrix(t)).1;
    let det_at = |t: f64| frame.matrix(t).determinant();

    let mut refined: Vec<f64> = Vec::new();
    for k in 1..g {
        if dets[k - 1] != 0.0 && dets[k] != 0.0 && (dets[k - 1] > 0.0) != (dets[k] > 0.0) {
            refined.push(bisect_sign(det_at, ts[k - 1], ts[k], opts.refine_tol));
        }
    }
    for k in 1..g - 1 {
        if ratios[k] <= ratios[k - 1] && ratios[k] <= ratios[k + 1] {
            refined.push(golden_min(ratio_at, ts[k - 1], ts[k + 1], opts.refine_tol));
        }
    }
    if ratios[g - 1] < ratios[g - 2] {
        refined.push(golden_min(ratio_at, ts[g - 2], tau, opts.refine_tol));
    }
    refined.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut found: Vec<ConjugateInstant> = Vec::new();
    for t in refined {
        let (smin, ratio, s) = sv(&frame.matrix(t));
        if ratio >= opts.theta_dip {
            continue;
        }
        let mult = s.iter().filter(|&&x| x < opts.theta_null * s[0]).count();
        if mult == 0 {
            // shallow dip: above the null threshold but below the dip threshold
            continue;
        }
        let inst = ConjugateInstant {
            t,
            multiplicity: mult,
            sigma_min: smin,
            ratio,
        };
        match found.last_mut() {
            Some(prev) if (t - prev.t).abs() < 1e-6 => {
                if ratio < prev.ratio {
                    *prev = inst;
                }
            }
            _ => found.push(inst),
        }
    }

    let cell = tau / g as f64;
    let mut warnings = Vec::new();
    let mut merged: Vec<ConjugateInstant> = Vec::new();
    for inst in found {
        match merged.last_mut() {
            Some(prev) if inst.t - prev.t < opts.merge_cells * cell => {
                let msg = format!(
                    "resolution: instants {:.10} and {:.10} closer than {} grid cells merged",
                    prev.t, inst.t, opts.merge_cells
                );
                log::warn!("{msg}");
                warnings.push(msg);
                prev.multiplicity += inst.multiplicity;
                if inst.ratio < prev.ratio {
                    prev.t = inst.t;
                    prev.ratio = inst.ratio;
                    prev.sigma_min = inst.sigma_min;
                }
            }
            _ => merged.push(inst),
        }
    }
    let flagged = merged
        .iter()
        .filter(|i| i.multiplicity > n)
        .map(|i| format!("multiplicity {} at t = {} exceeds n = {n}", i.multiplicity, i.t))
        .collect();
    ConjugateReport {
        instants: merged,
        tau,
        grid: g,
        theta_null: opts.theta_null,
        theta_dip: opts.theta_dip,
        warnings,
        flagged,
    }
}

/// Instants conjugate to `γ(0)` along `γ`.
pub fn conjugate_scan(path: &GeodesicPath, opts: &ScanOptions) -> Result<ConjugateReport> {
    let frame = jacobi_frame(path, &FrameInit::Conjugate)?;
    let mut rep = scan_frame(&frame, opts);
    // for Riemannian-type metrics the velocity field never vanishes, so m ≤ n − 1
    let n = path.dim();
    for i in &rep.instants {
        if i.multiplicity > n - 1 {
            rep.flagged
                .push(format!("multiplicity {} at t = {} exceeds n − 1 = {}", i.multiplicity, i.t, n - 1));
        }
    }
    Ok(rep)
}

/// `P`-focal instants along a geodesic leaving `P` perpendicularly.
pub fn focal_scan(path: &GeodesicPath, b: &BoundaryData, opts: &ScanOptions) -> Result<ConjugateReport> {
    if (&path.initial().x - &b.x0).norm() > 1e-12 * (1.0 + b.x0.norm()) {
        return Err(Error::InvalidInput("path does not start at the submanifold base point".into()));
    }
    let residual = perpendicular_residual(path.metric(), b, &path.initial().v)?;
    if residual > 1e-8 {
        return Err(Error::NotPerpendicular { residual });
    }
    let frame = jacobi_frame(path, &FrameInit::Focal(b.clone()))?;
    Ok(scan_frame(&frame, opts))
}
