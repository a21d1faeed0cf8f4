//! One-parameter families of metrics: index sweeps along a trivial branch of
//! geodesics, detection of critical parameters, deflated multi-start search
//! for nearby geodesics and a heuristic reading of the bifurcation alternative.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expression, Params};
use crate::geoflow::{connect, exp_map_with, integrate_geodesic, ConnectOptions, GeodesicPath, TOL_RES};
use crate::jacobi::{expmap_jacobian_with, ConjugateInstant, ScanOptions};
use crate::linalg::{lstsq, null_direction};
use crate::metric::{MetricField, MetricSpec, PhaseState};
use crate::morse::{cross_check, extrapolated_spectrum, Boundary, SpectralOptions};
use crate::ode::OdeOptions;

/// How the geodesic that exists for every parameter value is obtained.
#[derive(Clone, Debug)]
pub enum TrivialBranch {
    /// `γ_λ` starts at `x0(λ)` with velocity `v0(λ)` and runs for `tau(λ)`.
    /// The expressions may reference the family parameter only.
    Initial {
        x0: Vec<Expression>,
        v0: Vec<Expression>,
        tau: Expression,
    },
    /// `γ_λ` joins fixed `p` and `q` in unit time, continued in `λ` from `v_seed`.
    Connect {
        p: DVector<f64>,
        q: DVector<f64>,
        v_seed: DVector<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub parameter: String,
    pub range: (f64, f64),
    pub samples: usize,
    /// Metric whose expressions reference `parameter`.
    pub template: MetricSpec,
    pub branch: TrivialBranch,
}

impl FamilySpec {
    pub fn metric_at(&self, lambda: f64) -> Result<MetricField> {
        self.template.clone().param(&self.parameter, lambda).build()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        let (a, b) = self.range;
        let n = self.samples.max(2);
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn params(&self, lambda: f64) -> Params {
        let mut p = self.template.params.clone();
        p.insert(self.parameter.clone(), lambda);
        p
    }

    fn eval_all(&self, e: &[Expression], lambda: f64) -> Result<DVector<f64>> {
        let params = self.params(lambda);
        let v: std::result::Result<Vec<f64>, _> = e.iter().map(|x| x.eval(&[], &params)).collect();
        Ok(DVector::from_vec(v?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepOptions {
    pub scan: ScanOptions,
    pub spectral: SpectralOptions,
    /// Critical parameters are refined to `refine_rel·(b − a)`.
    pub refine_rel: f64,
    /// Smallest coarse mesh used while refining.
    pub refine_mesh: usize,
    /// Largest allowed jump of the branch (endpoint or initial velocity)
    /// between adjacent samples, relative to `1 + |value|`.
    pub continuity_tol: f64,
    pub ode: OdeOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            scan: ScanOptions::default(),
            spectral: SpectralOptions::default(),
            refine_rel: 1e-6,
            refine_mesh: 128,
            continuity_tol: 0.5,
            ode: OdeOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub m_minus: usize,
    pub m_zero: usize,
    /// Extrapolated pencil eigenvalue of smallest magnitude (signed).
    pub min_abs_eig: f64,
    pub counting_m_minus: usize,
    pub counting_m_zero: usize,
    pub agree: bool,
    pub instants: Vec<ConjugateInstant>,
    pub initial_x: Vec<f64>,
    pub initial_v: Vec<f64>,
    pub tau: f64,
    pub endpoint: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CriticalParameter {
    pub mu: f64,
    /// Final bracket of the refinement (or the flanking samples).
    pub bracket: (f64, f64),
    pub index_left: usize,
    pub nullity_left: usize,
    pub index_right: usize,
    pub nullity_right: usize,
    pub nullity_at_mu: usize,
    /// `false` for degenerate plateaus without an index jump.
    pub index_jump: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BifurcationScan {
    pub parameter: String,
    pub range: (f64, f64),
    pub records: Vec<SweepRecord>,
    pub detections: Vec<CriticalParameter>,
    pub refine_tol: f64,
    pub warnings: Vec<String>,
}

struct Trivial {
    path: GeodesicPath,
    connect_v: Option<DVector<f64>>,
}

fn branch_at(f: &FamilySpec, lambda: f64, guess: Option<&DVector<f64>>, opts: &SweepOptions) -> Result<Trivial> {
    let lost = |e: Error| Error::BranchLost {
        lambda,
        reason: e.to_string(),
    };
    let m = f.metric_at(lambda).map_err(lost)?;
    match &f.branch {
        TrivialBranch::Initial { x0, v0, tau } => {
            let x = f.eval_all(x0, lambda).map_err(lost)?;
            let v = f.eval_all(v0, lambda).map_err(lost)?;
            let t = tau.eval(&[], &f.params(lambda)).map_err(|e| lost(e.into()))?;
            let path = integrate_geodesic(&m, &PhaseState { x, v }, t, &opts.ode).map_err(lost)?;
            Ok(Trivial { path, connect_v: None })
        }
        TrivialBranch::Connect { p, q, v_seed } => {
            let seed = guess.unwrap_or(v_seed);
            let v = match connect(&m, p, q, seed, &ConnectOptions::default()) {
                Ok(r) => r.v,
                // at a degenerate parameter Newton's Jacobian is singular; fall back to least squares
                Err(Error::SingularJacobian { .. }) => {
                    let sh = Shooter::new(&m, p, q);
                    deflated_newton(&sh, seed, &[], &BranchOptions::default())
                        .ok_or_else(|| lost(Error::SingularJacobian { ratio: 0.0 }))?
                }
                Err(e) => return Err(lost(e)),
            };
            let path = integrate_geodesic(&m, &PhaseState { x: p.clone(), v: v.clone() }, 1.0, &opts.ode).map_err(lost)?;
            Ok(Trivial {
                path,
                connect_v: Some(v),
            })
        }
    }
}

fn record(lambda: f64, t: &Trivial, boundary: &Boundary, opts: &SweepOptions) -> Result<SweepRecord> {
    let rep = cross_check(&t.path, boundary, &opts.scan, &opts.spectral).map_err(|e| Error::BranchLost {
        lambda,
        reason: e.to_string(),
    })?;
    let spectral = rep.spectral.as_ref().expect("spectral route ran");
    Ok(SweepRecord {
        lambda,
        m_minus: rep.m_minus,
        m_zero: rep.m_zero,
        min_abs_eig: spectral.min_abs_eig(),
        counting_m_minus: rep.counting_m_minus.unwrap_or(0),
        counting_m_zero: rep.counting_m_zero.unwrap_or(0),
        agree: rep.agree.unwrap_or(false),
        instants: rep.instants.unwrap_or_default(),
        initial_x: t.path.initial().x.iter().copied().collect(),
        initial_v: t.path.initial().v.iter().copied().collect(),
        tau: t.path.tau(),
        endpoint: t.path.endpoint().x.iter().copied().collect(),
    })
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

fn jump(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (1.0 + s)
}

/// Index and nullity along the trivial branch at every sample, followed by
/// detection and refinement of critical parameters.
pub fn sweep_family(f: &FamilySpec, boundary: &Boundary, opts: &SweepOptions) -> Result<BifurcationScan> {
    let lambdas = f.lambdas();
    let records: Vec<SweepRecord> = match f.branch {
        TrivialBranch::Initial { .. } => par_map(&lambdas, |&l| {
            let t = branch_at(f, l, None, opts)?;
            record(l, &t, boundary, opts)
        })
        .into_iter()
        .collect::<Result<_>>()?,
        TrivialBranch::Connect { .. } => {
            let mut out = Vec::with_capacity(lambdas.len());
            let mut guess: Option<DVector<f64>> = None;
            for &l in &lambdas {
                let t = branch_at(f, l, guess.as_ref(), opts)?;
                guess = t.connect_v.clone();
                out.push(record(l, &t, boundary, opts)?);
            }
            out
        }
    };
    let mut warnings = Vec::new();
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let d = match f.branch {
            TrivialBranch::Initial { .. } => jump(&a.endpoint, &b.endpoint),
            TrivialBranch::Connect { .. } => jump(&a.initial_v, &b.initial_v),
        };
        if d > opts.continuity_tol {
            return Err(Error::BranchLost {
                lambda: b.lambda,
                reason: format!("branch jumps by {d:.3e} between adjacent samples"),
            });
        }
    }
    for r in &records {
        if !r.agree {
            warnings.push(format!(
                "index routes disagree at lambda = {}: counting {}/{}, spectral {}/{}",
                r.lambda, r.counting_m_minus, r.counting_m_zero, r.m_minus, r.m_zero
            ));
        }
    }
    let refine_tol = opts.refine_rel * (f.range.1 - f.range.0).abs();
    let mut detections = Vec::new();
    for (lo, hi) in candidate_intervals(&records) {
        let (l, r) = (&records[lo], &records[hi]);
        if l.m_minus != r.m_minus {
            match refine(f, boundary, opts, l, r, refine_tol) {
                Ok(c) => detections.push(c),
                Err(e) => {
                    warnings.push(format!("refinement on [{}, {}] failed: {e}", l.lambda, r.lambda));
                    detections.push(CriticalParameter {
                        mu: 0.5 * (l.lambda + r.lambda),
                        bracket: (l.lambda, r.lambda),
                        index_left: l.m_minus,
                        nullity_left: l.m_zero,
                        index_right: r.m_minus,
                        nullity_right: r.m_zero,
                        nullity_at_mu: l.m_minus.abs_diff(r.m_minus),
                        index_jump: true,
                    });
                }
            }
        } else {
            let best = records[lo..=hi]
                .iter()
                .filter(|x| x.m_zero > 0)
                .min_by(|a, b| a.min_abs_eig.abs().partial_cmp(&b.min_abs_eig.abs()).unwrap())
                .expect("plateau contains a degenerate sample");
            detections.push(CriticalParameter {
                mu: best.lambda,
                bracket: (l.lambda, r.lambda),
                index_left: l.m_minus,
                nullity_left: l.m_zero,
                index_right: r.m_minus,
                nullity_right: r.m_zero,
                nullity_at_mu: best.m_zero,
                index_jump: false,
            });
        }
    }
    Ok(BifurcationScan {
        parameter: f.parameter.clone(),
        range: f.range,
        records,
        detections,
        refine_tol,
        warnings,
    })
}

/// Merged sample-index intervals around index jumps and degenerate runs.
fn candidate_intervals(records: &[SweepRecord]) -> Vec<(usize, usize)> {
    let n = records.len();
    let mut raw: Vec<(usize, usize)> = Vec::new();
    for i in 0..n.saturating_sub(1) {
        if records[i].m_minus != records[i + 1].m_minus {
            raw.push((i, i + 1));
        }
    }
    for (i, r) in records.iter().enumerate() {
        if r.m_zero > 0 {
            raw.push((i.saturating_sub(1), (i + 1).min(n - 1)));
        }
    }
    raw.sort();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (a, b) in raw {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged
}

/// Bisection on the `j`-th extrapolated eigenvalue, `j` the smaller flank index.
fn refine(
    f: &FamilySpec,
    boundary: &Boundary,
    opts: &SweepOptions,
    left: &SweepRecord,
    right: &SweepRecord,
    tol: f64,
) -> Result<CriticalParameter> {
    let j = left.m_minus.min(right.m_minus);
    let mesh = opts.refine_mesh.max(opts.spectral.start_mesh);
    let connect_guess = |r: &SweepRecord| DVector::from_column_slice(&r.initial_v);
    let spectrum_at = |l: f64, guess: Option<&DVector<f64>>| -> Result<Vec<f64>> {
        let t = branch_at(f, l, guess, opts)?;
        Ok(extrapolated_spectrum(&t.path, boundary, mesh, &opts.spectral)?.values)
    };
    let is_connect = matches!(f.branch, TrivialBranch::Connect { .. });
    let gl = is_connect.then(|| connect_guess(left));
    let (mut a, mut b) = (left.lambda, right.lambda);
    let sa = spectrum_at(a, gl.as_ref())?;
    let sb = spectrum_at(b, gl.as_ref())?;
    let pick = |s: &[f64]| s.get(j).copied().unwrap_or(f64::NAN);
    let (mut fa, mut fb) = (pick(&sa), pick(&sb));
    let (mut spec_a, mut spec_b) = (sa, sb);
    if !(fa * fb <= 0.0) {
        return Err(Error::InvalidInput(format!(
            "eigenvalue {j} does not change sign on the bracket ({fa:e}, {fb:e})"
        )));
    }
    while (b - a) > tol {
        let c = 0.5 * (a + b);
        let sc = spectrum_at(c, gl.as_ref())?;
        let fc = pick(&sc);
        if fc == 0.0 {
            a = c;
            b = c;
            fa = 0.0;
            fb = 0.0;
            spec_a = sc.clone();
            spec_b = sc;
            break;
        }
        if fa * fc < 0.0 {
            b = c;
            fb = fc;
            spec_b = sc;
        } else {
            a = c;
            fa = fc;
            spec_a = sc;
        }
    }
    let mu = if fb != fa { a - fa * (b - a) / (fb - fa) } else { 0.5 * (a + b) };
    let crossing = spec_a
        .iter()
        .zip(&spec_b)
        .filter(|(x, y)| x.signum() != y.signum() || **x == 0.0 || **y == 0.0)
        .count()
        .max(1);
    Ok(CriticalParameter {
        mu,
        bracket: (a, b),
        index_left: left.m_minus,
        nullity_left: left.m_zero,
        index_right: right.m_minus,
        nullity_right: right.m_zero,
        nullity_at_mu: crossing,
        index_jump: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictLabel {
    SufficientConditionMet,
    NecessaryOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub mu: f64,
    pub left: (usize, usize),
    pub right: (usize, usize),
    pub label: VerdictLabel,
}

/// Disjoint index intervals `[m⁻, m⁻+m⁰]` on the two sides, at least one side non-degenerate.
pub fn detect_bifurcation(scan: &BifurcationScan) -> Vec<Verdict> {
    scan.detections
        .iter()
        .map(|c| {
            let (l0, l1) = (c.index_left, c.index_left + c.nullity_left);
            let (r0, r1) = (c.index_right, c.index_right + c.nullity_right);
            let disjoint = l1 < r0 || r1 < l0;
            let label = if disjoint && (c.nullity_left == 0 || c.nullity_right == 0) {
                VerdictLabel::SufficientConditionMet
            } else {
                VerdictLabel::NecessaryOnly
            };
            Verdict {
                mu: c.mu,
                left: (c.index_left, c.nullity_left),
                right: (c.index_right, c.nullity_right),
                label,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchOptions {
    /// Probe `μ ± kδ` for `k = 1..=levels`.
    pub levels: usize,
    /// `δ = delta_rel·(b − a)`.
    pub delta_rel: f64,
    /// Perturbation radii relative to `|v_trivial|`.
    pub rungs: Vec<f64>,
    pub seeds_per_rung: usize,
    /// Jitter standard deviation relative to the rung radius.
    pub jitter_rel: f64,
    pub seed: u64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Endpoint tolerance relative to `1 + |q|`.
    pub tol: f64,
    /// Minimum separation of reported initial velocities.
    pub distinct: f64,
    /// Iterates farther than this (relative to `|v_trivial|`) from the seed are abandoned.
    pub max_wander: f64,
    pub ode: OdeOptions,
}

impl Default for BranchOptions {
    fn default() -> Self {
        Self {
            levels: 2,
            delta_rel: 1e-2,
            rungs: vec![1e-3, 1e-2, 1e-1],
            seeds_per_rung: 16,
            jitter_rel: 0.25,
            seed: 0,
            max_iter: 30,
            max_halvings: 8,
            tol: 1e-10,
            distinct: 1e-6,
            max_wander: 1.0,
            ode: OdeOptions {
                rtol: 1e-11,
                atol: 1e-13,
                ..OdeOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchSolution {
    pub v: Vec<f64>,
    pub speed: f64,
    /// `max|x − x_triv| + max|ẋ − ẋ_triv|` over the unit parameter interval.
    pub c1_distance: f64,
    pub boundary_residual: f64,
    pub el_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelEvidence {
    pub lambda: f64,
    /// Signed multiple of `δ`.
    pub offset: i64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub trivial_v: Vec<f64>,
    pub trivial_speed: f64,
    pub kernel: Vec<f64>,
    pub solutions: Vec<BranchSolution>,
    pub seeds_tried: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchEvidence {
    pub mu: f64,
    pub delta: f64,
    pub levels: Vec<LevelEvidence>,
    pub warnings: Vec<String>,
}

impl BranchEvidence {
    pub fn solution_count(&self) -> usize {
        self.levels.iter().map(|l| l.solutions.len()).sum()
    }
}

struct Shooter<'a> {
    m: &'a MetricField,
    p: DVector<f64>,
    q: DVector<f64>,
    ode: OdeOptions,
}

impl<'a> Shooter<'a> {
    fn new(m: &'a MetricField, p: &DVector<f64>, q: &DVector<f64>) -> Self {
        Self {
            m,
            p: p.clone(),
            q: q.clone(),
            ode: BranchOptions::default().ode,
        }
    }

    fn residual(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(exp_map_with(self.m, &self.p, v, &self.ode)? - &self.q)
    }
}

/// `m(v) = ∏(1/‖v − vⱼ‖² + 1)` and its gradient.
fn deflation(v: &DVector<f64>, known: &[DVector<f64>]) -> (f64, DVector<f64>) {
    let mut m = 1.0;
    let mut glog = DVector::zeros(v.len());
    for k in known {
        let d = v - k;
        let d2 = d.norm_squared().max(1e-300);
        let fac = 1.0 / d2 + 1.0;
        m *= fac;
        glog += &d * (-2.0 / (d2 * d2) / fac);
    }
    (m, glog * m)
}

fn deflated_newton(sh: &Shooter, seed: &DVector<f64>, known: &[DVector<f64>], o: &BranchOptions) -> Option<DVector<f64>> {
    let tol = o.tol * (1.0 + sh.q.norm());
    let scale = seed.norm().max(1e-12);
    let mut v = seed.clone();
    let mut r = sh.residual(&v).ok()?;
    let mut best = r.norm();
    for it in 0..o.max_iter {
        if r.norm() <= tol {
            return Some(v);
        }
        // stalled runs are not worth the remaining budget
        if it == 10 && r.norm() > 0.1 * best.max(tol) && r.norm() > 1e-6 {
            return None;
        }
        if it == 0 {
            best = r.norm();
        }
        let (_, j) = expmap_jacobian_with(sh.m, &sh.p, &v, &sh.ode).ok()?;
        let (mv, gm) = deflation(&v, known);
        let g = &r * mv;
        let jt = &j * mv + &r * gm.transpose();
        let step = lstsq(&jt, &(-&g), 1e-12);
        let gn = g.norm();
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..=o.max_halvings {
            let trial = &v + &step * lam;
            if let Ok(rt) = sh.residual(&trial) {
                let (mt, _) = deflation(&trial, known);
                if (mt * rt.norm()) < gn {
                    v = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if !accepted || (&v - seed).norm() > o.max_wander * scale {
            return None;
        }
    }
    (r.norm() <= tol).then_some(v)
}

fn c1_distance(a: &GeodesicPath, b: &GeodesicPath) -> f64 {
    let (mut dx, mut dv) = (0.0f64, 0.0f64);
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let (sa, sb) = (a.state_at(t), b.state_at(t));
        dx = dx.max((&sa.x - &sb.x).norm());
        dv = dv.max((&sa.v - &sb.v).norm());
    }
    dx + dv
}

fn hunt_level(f: &FamilySpec, lambda: f64, offset: i64, o: &BranchOptions) -> Result<LevelEvidence> {
    let m = f.metric_at(lambda)?;
    let (p, v_triv, q) = match &f.branch {
        TrivialBranch::Initial { x0, v0, tau } => {
            let p = f.eval_all(x0, lambda)?;
            let t = tau.eval(&[], &f.params(lambda))?;
            let v = f.eval_all(v0, lambda)? * t;
            let q = exp_map_with(&m, &p, &v, &o.ode)?;
            (p, v, q)
        }
        TrivialBranch::Connect { p, q, v_seed } => {
            let sh = Shooter::new(&m, p, q);
            let v = deflated_newton(&sh, v_seed, &[], o).ok_or_else(|| Error::BranchLost {
                lambda,
                reason: "trivial connection not found".into(),
            })?;
            (p.clone(), v, q.clone())
        }
    };
    let mut sh = Shooter::new(&m, &p, &q);
    sh.ode = o.ode;
    let triv_path = integrate_geodesic(&m, &PhaseState { x: p.clone(), v: v_triv.clone() }, 1.0, &o.ode)?;
    let (_, j) = expmap_jacobian_with(&m, &p, &v_triv, &o.ode)?;
    let kernel = null_direction(&j);
    let vn = v_triv.norm();
    let n = p.len();
    let mut known = vec![v_triv.clone()];
    let mut solutions = Vec::new();
    let mut tried = 0;
    for (ri, &rho) in o.rungs.iter().enumerate() {
        let radius = rho * vn;
        let mut rng = ChaCha8Rng::seed_from_u64(
            o.seed ^ (offset as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((ri as u64 + 1) << 32),
        );
        let seeds: Vec<DVector<f64>> = (0..o.seeds_per_rung)
            .map(|s| {
                let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
                let jitter = DVector::from_fn(n, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * o.jitter_rel * radius
                });
                &v_triv + &kernel * (sign * radius) + jitter
            })
            .collect();
        tried += seeds.len();
        let frozen = known.clone();
        let found = par_map(&seeds, |s| deflated_newton(&sh, s, &frozen, o));
        for v in found.into_iter().flatten() {
            if known.iter().any(|k| (&v - k).norm() < o.distinct) {
                continue;
            }
            let path = match integrate_geodesic(&m, &PhaseState { x: p.clone(), v: v.clone() }, 1.0, &o.ode) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let boundary_residual = (path.endpoint().x - &q).norm();
            let el = path.el_residual().unwrap_or(f64::INFINITY);
            if boundary_residual > 1e-8 || el > TOL_RES {
                log::debug!("discarding solution with residuals {boundary_residual:e}/{el:e}");
                continue;
            }
            solutions.push(BranchSolution {
                v: v.iter().copied().collect(),
                speed: path.speed(),
                c1_distance: c1_distance(&path, &triv_path),
                boundary_residual,
                el_residual: el,
            });
            known.push(v);
        }
    }
    solutions.sort_by(|a, b| a.v.partial_cmp(&b.v).unwrap());
    Ok(LevelEvidence {
        lambda,
        offset,
        p: p.iter().copied().collect(),
        q: q.iter().copied().collect(),
        trivial_v: v_triv.iter().copied().collect(),
        trivial_speed: triv_path.speed(),
        kernel: kernel.iter().copied().collect(),
        solutions,
        seeds_tried: tried,
    })
}

/// Deflated multi-start shooting for geodesics with the trivial branch's
/// endpoints at `μ` and at `μ ± kδ`. Point-to-point problems only.
pub fn find_branches(f: &FamilySpec, mu: f64, boundary: &Boundary, o: &BranchOptions) -> Result<BranchEvidence> {
    if !matches!(boundary, Boundary::PointPoint) {
        return Err(Error::InvalidInput(
            "branch search supports point-to-point boundary conditions only".into(),
        ));
    }
    let delta = o.delta_rel * (f.range.1 - f.range.0).abs();
    let mut offsets = vec![0i64];
    for k in 1..=o.levels as i64 {
        offsets.push(-k);
        offsets.push(k);
    }
    let mut levels = Vec::new();
    let mut warnings = Vec::new();
    for k in offsets {
        let lambda = mu + k as f64 * delta;
        match hunt_level(f, lambda, k, o) {
            Ok(l) => levels.push(l),
            Err(e) => warnings.push(format!("level lambda = {lambda}: {e}")),
        }
    }
    levels.sort_by_key(|l| l.offset);
    Ok(BranchEvidence {
        mu,
        delta,
        levels,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternativeLabel {
    ILike,
    IiLike,
    IiiLike,
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnosis {
    pub label: AlternativeLabel,
    pub at_mu: usize,
    pub left: usize,
    pub right: usize,
    /// For the one-sided reading: whether two solutions at one level have
    /// speeds differing by more than `1e-6` relative.
    pub distinct_speeds: Option<bool>,
    pub note: &'static str,
}

pub const DIAGNOSTIC_NOTE: &str = "diagnostic, not a certificate";

/// Heuristic reading of the evidence; `n_i` is the solution count at `μ` that reads as alternative (i).
pub fn classify_alternative(e: &BranchEvidence, n_i: usize) -> Diagnosis {
    let count = |pred: &dyn Fn(i64) -> bool| -> usize {
        e.levels.iter().filter(|l| pred(l.offset)).map(|l| l.solutions.len()).sum()
    };
    let at_mu = count(&|k| k == 0);
    let left = count(&|k| k < 0);
    let right = count(&|k| k > 0);
    let one_side_pair = |neg: bool| -> Option<bool> {
        let mut flag = None;
        for l in e.levels.iter().filter(|l| if neg { l.offset < 0 } else { l.offset > 0 }) {
            if l.solutions.len() >= 2 {
                let s: Vec<f64> = l.solutions.iter().map(|s| s.speed).collect();
                let distinct = s
                    .iter()
                    .any(|a| s.iter().any(|b| (a - b).abs() > 1e-6 * a.abs().max(b.abs())));
                flag = Some(flag.unwrap_or(false) || distinct);
            }
        }
        flag
    };
    let (label, distinct_speeds) = if at_mu >= n_i {
        (AlternativeLabel::ILike, None)
    } else if left > 0 && right > 0 {
        (AlternativeLabel::IiLike, None)
    } else if left == 0 && right > 0 && one_side_pair(false).is_some() {
        (AlternativeLabel::IiiLike, one_side_pair(false))
    } else if right == 0 && left > 0 && one_side_pair(true).is_some() {
        (AlternativeLabel::IiiLike, one_side_pair(true))
    } else {
        (AlternativeLabel::Undetermined, None)
    };
    Diagnosis {
        label,
        at_mu,
        left,
        right,
        distinct_speeds,
        note: DIAGNOSTIC_NOTE,
    }
}
