//! Zermelo navigation and Fermat metrics of stationary spacetimes.
//!
//! Both reduce to Randers metrics. Travel times are `∫F(x, ẋ) dt`; a Fermat
//! geodesic lifts to a lightlike curve `(x, t)` of
//! `𝔤 = g̃0 + 2·g̃0(V, ·)dt − dt²` with `g̃0 = g0/f` and `ṫ = F(x, ẋ)`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expression, Params};
use crate::geoflow::{integrate_geodesic, GeodesicPath, TOL_RES};
use crate::metric::{ChartBox, ExprMatrix, MetricField, MetricKind, MetricSpec, PhaseState};

/// Base metric `h` and wind `W` with `h(W, W) < 1`.
#[derive(Clone, Debug)]
pub struct ZermeloData {
    pub dim: usize,
    pub h: ExprMatrix,
    pub wind: Vec<Expression>,
    pub params: Params,
    pub chart: ChartBox,
}

impl ZermeloData {
    pub fn new(h: ExprMatrix, wind: Vec<Expression>) -> Self {
        let dim = wind.len();
        Self {
            dim,
            h,
            wind,
            params: Params::new(),
            chart: ChartBox::cube(dim, 10.0),
        }
    }

    fn spec(&self) -> MetricSpec {
        let mut s = MetricSpec::new(
            self.dim,
            MetricKind::Zermelo {
                h: self.h.clone(),
                wind: self.wind.clone(),
            },
        );
        s.params = self.params.clone();
        s.chart = self.chart.clone();
        s
    }

    /// `sup h(W, W)^{1/2}` over the metric sample points.
    pub fn wind_supremum(&self) -> Result<f64> {
        let n = self.dim;
        let mut base = MetricSpec::new(n, MetricKind::Riemannian { g: self.h.clone() });
        base.params = self.params.clone();
        base.chart = self.chart.clone();
        let field = base.build()?;
        let mut sup: f64 = 0.0;
        for x in field.sample_points() {
            let w: Vec<f64> = self
                .wind
                .iter()
                .map(|e| e.eval(&x, &self.params))
                .collect::<std::result::Result<_, _>>()?;
            let s = PhaseState::new(&x, &w);
            let norm = if w.iter().all(|c| *c == 0.0) { 0.0 } else { field.finsler(&s)? };
            sup = sup.max(norm);
        }
        Ok(sup)
    }
}

/// Randers metric `F = √a + b` whose unit-speed geodesics are time-optimal under the wind.
pub fn zermelo_to_randers(z: &ZermeloData) -> Result<MetricField> {
    let m = z.spec().build()?;
    // ‖b‖_a < 1 holds by construction; the build checks it at every sample point
    Ok(m)
}

/// `T = ∫F(x, ẋ) dt`, by Gauss quadrature on the integrator's grid.
pub fn travel_time(m: &MetricField, path: &GeodesicPath) -> Result<f64> {
    let g = path.grid();
    let mut total = 0.0;
    for w in g.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        for (xi, wt) in GAUSS5 {
            let t = 0.5 * (a + b) + 0.5 * (b - a) * xi;
            let s = path.state_at(t);
            total += 0.5 * (b - a) * wt * m.finsler(&s)?;
        }
    }
    Ok(total)
}

/// Travel time along straight segments between consecutive points.
pub fn travel_time_polyline(m: &MetricField, points: &[DVector<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for w in points.windows(2) {
        let d = &w[1] - &w[0];
        if d.norm() == 0.0 {
            continue;
        }
        for (xi, wt) in GAUSS5 {
            let s = 0.5 + 0.5 * xi;
            let x = &w[0] + &d * s;
            total += 0.5 * wt * m.finsler(&PhaseState { x, v: d.clone() })?;
        }
    }
    Ok(total)
}

/// Closed-form time to cover displacement `d` in a constant Euclidean wind `w`:
/// the ground velocity `d/T` satisfies `|d/T − w| = 1`.
pub fn constant_wind_time(d: &[f64], w: &[f64]) -> f64 {
    let dw: f64 = d.iter().zip(w).map(|(a, b)| a * b).sum();
    let dd: f64 = d.iter().map(|a| a * a).sum();
    let ww: f64 = w.iter().map(|a| a * a).sum();
    (-dw + (dw * dw + dd * (1.0 - ww)).sqrt()) / (1.0 - ww)
}

const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Spatial data `(g0, V, f)` of a conformally stationary spacetime.
#[derive(Clone, Debug)]
pub struct StationaryData {
    pub dim: usize,
    pub g0: ExprMatrix,
    pub drift: Vec<Expression>,
    pub lapse: Expression,
    pub params: Params,
    pub chart: ChartBox,
}

impl StationaryData {
    pub fn new(g0: ExprMatrix, drift: Vec<Expression>, lapse: Expression) -> Self {
        let dim = drift.len();
        Self {
            dim,
            g0,
            drift,
            lapse,
            params: Params::new(),
            chart: ChartBox::cube(dim, 10.0),
        }
    }

    fn fermat_spec(&self, reversed: bool) -> MetricSpec {
        let mut s = MetricSpec::new(
            self.dim,
            MetricKind::Fermat {
                g0: self.g0.clone(),
                drift: self.drift.clone(),
                lapse: self.lapse.clone(),
                reversed,
            },
        );
        s.params = self.params.clone();
        s.chart = self.chart.clone();
        s
    }

    /// `(A, B) = (g̃0(V, y), g̃0(y, y))` at `x`.
    pub fn invariants(&self, x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
        let n = self.dim;
        let f = self.lapse.eval(x, &self.params)?;
        if !(f > 0.0) {
            return Err(Error::NonPositiveLapse {
                value: f,
                point: x.to_vec(),
            });
        }
        let v: Vec<f64> = self
            .drift
            .iter()
            .map(|e| e.eval(x, &self.params))
            .collect::<std::result::Result<_, _>>()?;
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let g = self.g0[i][j].eval(x, &self.params)? / f;
                a += g * v[i] * y[j];
                b += g * y[i] * y[j];
            }
        }
        Ok((a, b))
    }
}

/// `(F, F₋)` with `F = √(A² + B) + A`, `F₋ = √(A² + B) − A`.
pub fn fermat_metric(s: &StationaryData) -> Result<(MetricField, MetricField)> {
    Ok((s.fermat_spec(false).build()?, s.fermat_spec(true).build()?))
}

/// The spacetime metric on `M0 × ℝ` as a quadratic kind of dimension `n + 1`,
/// time last, with the time chart `[−t_extent, t_extent]`.
pub fn lorentz_metric(s: &StationaryData, t_extent: f64) -> Result<MetricField> {
    let n = s.dim;
    let gt: Vec<Vec<Expression>> = s
        .g0
        .iter()
        .map(|row| row.iter().map(|e| e.div(&s.lapse)).collect())
        .collect();
    let gv: Vec<Expression> = (0..n)
        .map(|i| Expression::sum(&(0..n).map(|k| gt[i][k].mul(&s.drift[k])).collect::<Vec<_>>()))
        .collect();
    let mut g: ExprMatrix = Vec::with_capacity(n + 1);
    for i in 0..n {
        let mut row = gt[i].clone();
        row.push(gv[i].clone());
        g.push(row);
    }
    let mut last = gv;
    last.push(Expression::constant(-1.0));
    g.push(last);
    let mut spec = MetricSpec::new(n + 1, MetricKind::Quadratic { g });
    spec.params = s.params.clone();
    let mut lo = s.chart.lo.clone();
    let mut hi = s.chart.hi.clone();
    lo.push(-t_extent);
    hi.push(t_extent);
    spec.chart = ChartBox { lo, hi };
    spec.build()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LightlikeLift {
    /// Affine parameter in `[0, 1]`; the spatial part has constant `h`-speed.
    pub s: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub t: Vec<f64>,
    /// `max |𝔤(ż, ż)|` over the samples.
    pub null_residual: f64,
    /// Point-set distance between the spatial projection of the spacetime
    /// geodesic through `z(0)` and the Fermat geodesic, when requested.
    pub projection_gap: Option<f64>,
}

fn fermat_residual(f: &MetricField, path: &GeodesicPath) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let frac = (0.5 + k as f64 * 0.618_033_988_749_894_9).fract();
        let t = path.tau() * (0.02 + 0.96 * frac);
        let st = path.state_at(t);
        let spray = f.spray(st.x.as_slice(), st.v.as_slice())?;
        worst = worst.max((path.acceleration_at(t) - spray).norm() / (1.0 + st.v.norm_squared()));
    }
    Ok(worst)
}

/// Lifts an `F`-geodesic to the lightlike curve `z(s) = (x(s), t0 + ∫F)`.
///
/// The geodesic is reparametrized to constant `h`-speed on `[0, 1]`, which is
/// the affine parametrization of the lift: `𝔤(ż, ∂ₜ) = A − F = −√h(ẋ, ẋ)` is conserved.
pub fn lift_lightlike(
    s: &StationaryData,
    path: &GeodesicPath,
    t0: f64,
    samples: usize,
    with_projection: bool,
) -> Result<LightlikeLift> {
    let (f, _) = fermat_metric(s)?;
    let res = fermat_residual(&f, path).map_err(|e| Error::NotFermatGeodesic(e.to_string()))?;
    if res > TOL_RES {
        return Err(Error::NotFermatGeodesic(format!("Euler-Lagrange residual {res:e}")));
    }
    let tau = path.tau();
    let hspeed = |t: f64| -> Result<f64> {
        let st = path.state_at(t);
        let (a, b) = s.invariants(st.x.as_slice(), st.v.as_slice())?;
        Ok((a * a + b).sqrt())
    };
    // cumulative h-length and F-length on a fine table
    let cells = 2000;
    let mut tt = Vec::with_capacity(cells + 1);
    let mut hl = vec![0.0];
    let mut fl = vec![0.0];
    tt.push(0.0);
    for i in 0..cells {
        let (a, b) = (tau * i as f64 / cells as f64, tau * (i + 1) as f64 / cells as f64);
        let (mut dh, mut df) = (0.0, 0.0);
        for (xi, w) in GAUSS5 {
            let t = 0.5 * (a + b) + 0.5 * (b - a) * xi;
            dh += 0.5 * (b - a) * w * hspeed(t)?;
            df += 0.5 * (b - a) * w * f.finsler(&path.state_at(t))?;
        }
        tt.push(b);
        hl.push(hl[i] + dh);
        fl.push(fl[i] + df);
    }
    let total = hl[cells];
    let lor = lorentz_metric(s, 1e4)?;
    let count = samples.max(2);
    let mut out_s = Vec::with_capacity(count);
    let mut out_x = Vec::with_capacity(count);
    let mut out_t = Vec::with_capacity(count);
    let mut worst: f64 = 0.0;
    let mut z0: Option<(Vec<f64>, Vec<f64>)> = None;
    for k in 0..count {
        let sv = k as f64 / (count - 1) as f64;
        let target = sv * total;
        let i = hl.partition_point(|&v| v < target).clamp(1, cells);
        let (h0, h1) = (hl[i - 1], hl[i]);
        let frac = if h1 > h0 { (target - h0) / (h1 - h0) } else { 0.0 };
        let mut t = tt[i - 1] + frac * (tt[i] - tt[i - 1]);
        // one Newton correction against the local h-speed
        let mut hcur = hl[i - 1];
        let ta = tt[i - 1];
        for (xi, w) in GAUSS5 {
            let u = 0.5 * (ta + t) + 0.5 * (t - ta) * xi;
            hcur += 0.5 * (t - ta) * w * hspeed(u)?;
        }
        let sp = hspeed(t)?;
        if sp > 0.0 {
            t = (t - (hcur - target) / sp).clamp(0.0, tau);
        }
        let st = path.state_at(t);
        let flen = fl[i - 1] + frac * (fl[i] - fl[i - 1]);
        let time = t0 + flen;
        // dx/ds = ẋ·dt/ds = ẋ·total/σ
        let xs: Vec<f64> = st.v.iter().map(|v| v * total / sp).collect();
        let fx = f.finsler(&PhaseState::new(st.x.as_slice(), &xs))?;
        let mut zx: Vec<f64> = st.x.iter().copied().collect();
        zx.push(time);
        let mut zv = xs.clone();
        zv.push(fx);
        let g = lor.lagrangian(&zx, &zv)?;
        worst = worst.max(g.abs());
        if k == 0 {
            z0 = Some((zx, zv));
        }
        out_s.push(sv);
        out_x.push(st.x.iter().copied().collect());
        out_t.push(time);
    }
    let projection_gap = if with_projection {
        let (zx, zv) = z0.expect("at least two samples");
        Some(projection_gap(&f, &lor, path, &zx, &zv)?)
    } else {
        None
    };
    Ok(LightlikeLift {
        s: out_s,
        x: out_x,
        t: out_t,
        null_residual: worst,
        projection_gap,
    })
}

fn polyline(points: impl Iterator<Item = DVector<f64>>) -> Vec<DVector<f64>> {
    points.collect()
}

fn dist_to_polyline(p: &DVector<f64>, line: &[DVector<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for w in line.windows(2) {
        let d = &w[1] - &w[0];
        let l2 = d.norm_squared();
        let s = if l2 > 0.0 { ((p - &w[0]).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
        best = best.min((p - (&w[0] + &d * s)).norm());
    }
    best
}

fn one_sided(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().map(|p| dist_to_polyline(p, b)).fold(0.0, f64::max)
}

/// Each curve is compared against the other extended by 20%, so that the
/// distance does not depend on where either parametrization stops.
fn projection_gap(f: &MetricField, lor: &MetricField, path: &GeodesicPath, zx: &[f64], zv: &[f64]) -> Result<f64> {
    let n = path.dim();
    let opts = crate::ode::OdeOptions {
        rtol: 1e-11,
        atol: 1e-13,
        ..*path.options()
    };
    let z_short = integrate_geodesic(lor, &PhaseState::new(zx, zv), 1.0, &opts)?;
    let z_long = integrate_geodesic(lor, &PhaseState::new(zx, zv), 1.2, &opts)?;
    let x_long = integrate_geodesic(f, path.initial(), 1.2 * path.tau(), &opts)?;
    let pts = 2000;
    let proj = |p: &GeodesicPath| {
        polyline(
            p.samples(pts)
                .into_iter()
                .map(|(_, s)| DVector::from_iterator(n, s.x.iter().take(n).copied())),
        )
    };
    let x_pts = proj(path);
    let xl = proj(&x_long);
    let zs = proj(&z_short);
    let zl = proj(&z_long);
    Ok(one_sided(&x_pts, &zl).max(one_sided(&zs, &xl)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoflow::{connect, ConnectOptions};
    use crate::metric::{parse_matrix, parse_vector};
    use crate::ode::OdeOptions;

    fn eye() -> ExprMatrix {
        parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap()
    }

    fn wind(w: &[&str]) -> ZermeloData {
        ZermeloData::new(eye(), parse_vector(w).unwrap())
    }

    #[test]
    fn zermelo_examples() {
        let m = zermelo_to_randers(&wind(&["0.5", "0"])).unwrap();
        let f = |y: [f64; 2]| m.finsler(&PhaseState::new(&[0.3, -0.2], &y)).unwrap();
        assert!((f([1.0, 0.0]) - 2.0 / 3.0).abs() < 1e-14);
        assert!((f([-1.0, 0.0]) - 2.0).abs() < 1e-14);
        let calm = zermelo_to_randers(&ZermeloData::new(
            parse_matrix(&[vec!["1+x1^2", "0.1"], vec!["0.1", "2"]]).unwrap(),
            parse_vector(&["0", "0"]).unwrap(),
        ))
        .unwrap();
        for x in calm.sample_points() {
            let y = [0.7, -0.4];
            let h = (1.0 + x[0] * x[0]) * 0.49 + 2.0 * 0.1 * 0.7 * -0.4 + 2.0 * 0.16;
            let got = calm.finsler(&PhaseState::new(&x, &y)).unwrap();
            assert!((got - h.sqrt()).abs() < 1e-12);
        }
        let e = zermelo_to_randers(&wind(&["1.0", "0"]));
        assert!(matches!(e, Err(Error::WindTooStrong { .. })), "{e:?}");
        assert!((wind(&["0.3", "0.4"]).wind_supremum().unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn travel_times() {
        let calm = zermelo_to_randers(&wind(&["0", "0"])).unwrap();
        let seg = [DVector::from_column_slice(&[0.0, 0.0]), DVector::from_column_slice(&[1.0, 0.0])];
        assert!((travel_time_polyline(&calm, &seg).unwrap() - 1.0).abs() < 1e-14);
        let m = zermelo_to_randers(&wind(&["0.5", "0"])).unwrap();
        assert!((travel_time_polyline(&m, &seg).unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((constant_wind_time(&[1.0, 0.0], &[0.5, 0.0]) - 2.0 / 3.0).abs() < 1e-15);

        let d = [0.8, -1.1];
        let p = DVector::zeros(2);
        let q = DVector::from_column_slice(&d);
        let r = connect(&m, &p, &q, &q, &ConnectOptions::default()).unwrap();
        let path = integrate_geodesic(&m, &PhaseState { x: p, v: r.v }, 1.0, &OdeOptions::default()).unwrap();
        let t = travel_time(&m, &path).unwrap();
        assert!((t - constant_wind_time(&d, &[0.5, 0.0])).abs() < 1e-6);
    }

    #[test]
    fn round_trip_is_slower_than_calm() {
        let calm = zermelo_to_randers(&wind(&["0", "0"])).unwrap();
        let m = zermelo_to_randers(&wind(&["0.5", "0"])).unwrap();
        for d in [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]] {
            let a = DVector::zeros(2);
            let b = DVector::from_column_slice(&d);
            let there = travel_time_polyline(&m, &[a.clone(), b.clone()]).unwrap();
            let back = travel_time_polyline(&m, &[b.clone(), a.clone()]).unwrap();
            let still = travel_time_polyline(&calm, &[a, b]).unwrap();
            // strict even for a crosswind: 2|d|/√(1−|W|²) > 2|d|
            assert!(there + back > 2.0 * still + 1e-3);
        }
    }

    fn stationary(v: &str) -> StationaryData {
        StationaryData::new(eye(), parse_vector(&[v, "0"]).unwrap(), Expression::constant(1.0))
    }

    #[test]
    fn fermat_examples() {
        let (f, fm) = fermat_metric(&stationary("0")).unwrap();
        let y = [0.3, -1.2];
        let e = (0.09f64 + 1.44).sqrt();
        assert!((f.finsler(&PhaseState::new(&[0.0, 0.0], &y)).unwrap() - e).abs() < 1e-15);
        assert!((fm.finsler(&PhaseState::new(&[0.0, 0.0], &y)).unwrap() - e).abs() < 1e-15);

        let s = stationary("0.3");
        let (f, fm) = fermat_metric(&s).unwrap();
        let got = f.finsler(&PhaseState::new(&[0.0, 0.0], &[1.0, 0.0])).unwrap();
        assert!((got - (1.09f64.sqrt() + 0.3)).abs() < 1e-15);
        assert!((got - 1.34403).abs() < 1e-5);
        for x in f.sample_points() {
            let y = [x[1] - 0.2, 0.5 + x[0]];
            let ny = [-y[0], -y[1]];
            let (a, b) = s.invariants(&x, &y).unwrap();
            let fy = f.finsler(&PhaseState::new(&x, &y)).unwrap();
            let fmy = fm.finsler(&PhaseState::new(&x, &y)).unwrap();
            let fmny = fm.finsler(&PhaseState::new(&x, &ny)).unwrap();
            assert!((fy + fmy - 2.0 * (a * a + b).sqrt()).abs() < 1e-12);
            assert!((fmny - fy).abs() < 1e-12);
        }
    }

    #[test]
    fn lightlike_lift() {
        let s = stationary("0");
        let (f, _) = fermat_metric(&s).unwrap();
        let path = integrate_geodesic(&f, &PhaseState::new(&[0.0, 0.0], &[1.0, 0.0]), 2.0, &OdeOptions::default())
            .unwrap();
        let lift = lift_lightlike(&s, &path, 0.0, 50, false).unwrap();
        assert!(lift.null_residual < 1e-14);
        for (x, t) in lift.x.iter().zip(&lift.t) {
            assert!((x[0] - t).abs() < 1e-12);
        }

        let s = StationaryData::new(
            parse_matrix(&[vec!["1+0.1*x2^2", "0"], vec!["0", "1"]]).unwrap(),
            parse_vector(&["0.3", "0"]).unwrap(),
            Expression::parse("1+0.05*x1^2").unwrap(),
        );
        let (f, _) = fermat_metric(&s).unwrap();
        let path = integrate_geodesic(&f, &PhaseState::new(&[0.0, 0.2], &[0.8, 0.6]), 2.0, &OdeOptions::default())
            .unwrap();
        let lift = lift_lightlike(&s, &path, 1.0, 200, true).unwrap();
        assert!(lift.null_residual <= 1e-9, "{}", lift.null_residual);
        assert!(lift.projection_gap.unwrap() <= 1e-5, "{:?}", lift.projection_gap);

        let euclid = MetricSpec::euclidean(2).build().unwrap();
        let wrong = integrate_geodesic(&euclid, &PhaseState::new(&[0.5, 0.0], &[0.0, 1.0]), 1.0, &OdeOptions::default())
            .unwrap();
        let s2 = StationaryData::new(
            parse_matrix(&[vec!["1", "0"], vec!["0", "1+x1^2"]]).unwrap(),
            parse_vector(&["0.3", "0"]).unwrap(),
            Expression::constant(1.0),
        );
        assert!(matches!(
            lift_lightlike(&s2, &wrong, 0.0, 10, false),
            Err(Error::NotFermatGeodesic(_))
        ));
    }
}
