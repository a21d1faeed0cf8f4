//! Browser bindings for three interactive views: a geodesic fan with its
//! conjugate points, the Morse index along a one-parameter family, and a
//! Zermelo route under constant wind.
//!
//! The `*_json` functions are the wasm exports; the plain functions behind
//! them are ordinary Rust and are what the tests exercise.

use fbt_core::bifurc::{detect_bifurcation, sweep_family, FamilySpec, SweepOptions, TrivialBranch};
use fbt_core::geoflow::{connect, integrate_geodesic, ConnectOptions};
use fbt_core::metric::{parse_matrix, parse_vector};
use fbt_core::nav::{constant_wind_time, travel_time, zermelo_to_randers};
use fbt_core::{
    conjugate_scan, Boundary, ChartBox, Error, Expression, GeodesicPath, MetricField, MetricKind, MetricSpec,
    OdeOptions, PhaseState, ScanOptions, ZermeloData,
};
use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Res<T> = Result<T, String>;

fn err(e: Error) -> String {
    e.to_string()
}

fn warped(lambda: f64) -> MetricSpec {
    let g = parse_matrix(&[vec!["1", "0"], vec!["0", "exp(-lambda*x1^2)"]]).unwrap();
    MetricSpec::new(2, MetricKind::Riemannian { g })
        .param("lambda", lambda)
        .chart(ChartBox::cube(2, 3.0))
}

/// Metric shown in the fan view.
pub fn fan_metric(kind: &str, param: f64) -> Res<MetricField> {
    let spec = match kind {
        "sphere" => MetricSpec::sphere(2, param).chart(ChartBox::cube(2, 4.0)),
        "warped" => warped(param),
        "randers" => MetricSpec::new(
            2,
            MetricKind::Randers {
                h: parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap(),
                beta: parse_vector(&["-a*x2/(1+x1^2+x2^2)", "a*x1/(1+x1^2+x2^2)"]).unwrap(),
            },
        )
        .param("a", param)
        .chart(ChartBox::cube(2, 3.0)),
        other => return Err(format!("unknown metric `{other}`")),
    };
    spec.build().map_err(err)
}

#[derive(Debug, Serialize)]
pub struct Conjugate {
    pub ray: usize,
    pub t: f64,
    pub x: [f64; 2],
    pub multiplicity: usize,
}

#[derive(Debug, Serialize)]
pub struct Fan {
    pub start: [f64; 2],
    pub paths: Vec<Vec<[f64; 2]>>,
    pub conjugate: Vec<Conjugate>,
}

/// Integrates up to `tau`, or to just before the path leaves the chart.
fn clipped(m: &MetricField, s: &PhaseState, tau: f64) -> Result<GeodesicPath, Error> {
    match integrate_geodesic(m, s, tau, &OdeOptions::default()) {
        Err(Error::LeftChart { t_exit }) => integrate_geodesic(m, s, 0.999 * t_exit, &OdeOptions::default()),
        r => r,
    }
}

fn points(path: &GeodesicPath, count: usize) -> Vec<[f64; 2]> {
    path.samples(count).into_iter().map(|(_, s)| [s.x[0], s.x[1]]).collect()
}

/// Unit-speed geodesics from `start` with headings spread over `±spread` around `heading`.
pub fn fan(kind: &str, param: f64, start: [f64; 2], heading: f64, spread: f64, rays: usize, tau: f64) -> Res<Fan> {
    let m = fan_metric(kind, param)?;
    let rays = rays.max(1);
    let mut out = Fan {
        start,
        paths: Vec::new(),
        conjugate: Vec::new(),
    };
    for k in 0..rays {
        let a = if rays == 1 {
            heading
        } else {
            heading - spread + 2.0 * spread * k as f64 / (rays - 1) as f64
        };
        let dir = [a.cos(), a.sin()];
        let f = m.finsler(&PhaseState::new(&start, &dir)).map_err(err)?;
        let s = PhaseState::new(&start, &[dir[0] / f, dir[1] / f]);
        let path = clipped(&m, &s, tau).map_err(err)?;
        let scan = conjugate_scan(&path, &ScanOptions::default()).map_err(err)?;
        for i in scan.instants {
            let x = path.state_at(i.t).x;
            out.conjugate.push(Conjugate {
                ray: k,
                t: i.t,
                x: [x[0], x[1]],
                multiplicity: i.multiplicity,
            });
        }
        out.paths.push(points(&path, 160));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct IndexSample {
    pub lambda: f64,
    pub m_minus: usize,
    pub m_zero: usize,
    pub min_abs_eig: f64,
}

#[derive(Debug, Serialize)]
pub struct IndexSweep {
    pub samples: Vec<IndexSample>,
    pub critical: Vec<f64>,
    pub sufficient: Vec<bool>,
}

/// Morse index of the segment `x1 = 0`, `x2 ∈ [−τ/2, τ/2]` of the warped
/// metric, whose curvature along it is `λ`, for `λ ∈ [lo, hi]`.
pub fn index_sweep(lo: f64, hi: f64, samples: usize, tau: f64) -> Res<IndexSweep> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi || samples < 2 {
        return Err("need lo < hi and at least two samples".into());
    }
    let f = FamilySpec {
        parameter: "lambda".into(),
        range: (lo, hi),
        samples,
        template: warped(0.0),
        branch: TrivialBranch::Initial {
            x0: vec![Expression::constant(0.0), Expression::constant(-tau / 2.0)],
            v0: vec![Expression::constant(0.0), Expression::constant(1.0)],
            tau: Expression::constant(tau),
        },
    };
    let scan = sweep_family(&f, &Boundary::PointPoint, &SweepOptions::default()).map_err(err)?;
    let verdicts = detect_bifurcation(&scan);
    Ok(IndexSweep {
        samples: scan
            .records
            .iter()
            .map(|r| IndexSample {
                lambda: r.lambda,
                m_minus: r.m_minus,
                m_zero: r.m_zero,
                min_abs_eig: r.min_abs_eig,
            })
            .collect(),
        critical: scan.detections.iter().map(|d| d.mu).collect(),
        sufficient: verdicts
            .iter()
            .map(|v| v.label == fbt_core::bifurc::VerdictLabel::SufficientConditionMet)
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct Route {
    pub there: Vec<[f64; 2]>,
    pub back: Vec<[f64; 2]>,
    pub time_there: f64,
    pub time_back: f64,
    pub closed_form_there: f64,
    pub calm_time: f64,
}

/// Fastest routes `0 → q` and back under the constant wind `w`.
pub fn zermelo_route(w: [f64; 2], q: [f64; 2]) -> Res<Route> {
    let h = parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap();
    let wind = vec![Expression::constant(w[0]), Expression::constant(w[1])];
    let m = zermelo_to_randers(&ZermeloData::new(h, wind)).map_err(err)?;
    let p = DVector::zeros(2);
    let q = DVector::from_column_slice(&q);
    if q.norm() < 1e-6 {
        return Err("target coincides with the start".into());
    }
    let leg = |a: &DVector<f64>, b: &DVector<f64>| -> Result<(GeodesicPath, f64), Error> {
        let r = connect(&m, a, b, &(b - a), &ConnectOptions::default())?;
        let path = integrate_geodesic(&m, &PhaseState { x: a.clone(), v: r.v }, 1.0, &OdeOptions::default())?;
        let t = travel_time(&m, &path)?;
        Ok((path, t))
    };
    let (there, t1) = leg(&p, &q).map_err(err)?;
    let (back, t2) = leg(&q, &p).map_err(err)?;
    Ok(Route {
        there: points(&there, 60),
        back: points(&back, 60),
        time_there: t1,
        time_back: t2,
        closed_form_there: constant_wind_time(&[q[0], q[1]], &w),
        calm_time: q.norm(),
    })
}

fn to_js<T: Serialize>(r: Res<T>) -> Result<String, JsError> {
    match r {
        Ok(v) => serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())),
        Err(e) => Err(JsError::new(&e)),
    }
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn fan_json(
    kind: &str,
    param: f64,
    sx: f64,
    sy: f64,
    heading: f64,
    spread: f64,
    rays: usize,
    tau: f64,
) -> Result<String, JsError> {
    to_js(fan(kind, param, [sx, sy], heading, spread, rays, tau))
}

#[wasm_bindgen]
pub fn index_sweep_json(lo: f64, hi: f64, samples: usize, tau: f64) -> Result<String, JsError> {
    to_js(index_sweep(lo, hi, samples, tau))
}

#[wasm_bindgen]
pub fn zermelo_json(wx: f64, wy: f64, qx: f64, qy: f64) -> Result<String, JsError> {
    to_js(zermelo_route([wx, wy], [qx, qy]))
}
