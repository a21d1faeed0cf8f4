use clap::ValueEnum;
use fbt_core::bifurc::{classify_alternative, detect_bifurcation, find_branches, sweep_family, FamilySpec, TrivialBranch};
use fbt_core::geoflow::{connect, orthogonal_initial, ConnectOptions};
use fbt_core::jacobi::expmap_jacobian_with;
use fbt_core::morse::Route;
use fbt_core::nav::travel_time_polyline;
use fbt_core::{
    conjugate_scan, cross_check, fermat_metric, focal_scan, index_by_counting, index_spectral, integrate_geodesic,
    lift_lightlike, travel_time, Boundary, ConjugateReport, Expression, GeodesicPath, MetricField, MetricKind,
    MetricSpec, PhaseState, StationaryData, ZermeloData,
};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::config::{Config, Kind};
use crate::error::CliError;
use crate::output::{Cell, Csv, OutDir};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    MetricCheck,
    Geodesic,
    Expmap,
    Conjugate,
    Focal,
    Index,
    Sweep,
    Branch,
    Zermelo,
    Fermat,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::MetricCheck => "metric-check",
            Command::Geodesic => "geodesic",
            Command::Expmap => "expmap",
            Command::Conjugate => "conjugate",
            Command::Focal => "focal",
            Command::Index => "index",
            Command::Sweep => "sweep",
            Command::Branch => "branch",
            Command::Zermelo => "zermelo",
            Command::Fermat => "fermat",
        }
    }
}

type Res<T> = Result<T, CliError>;

/// Runs one command, writing its artifacts into `out`.
pub fn run(cmd: Command, cfg: &Config, out: &mut OutDir) -> Res<()> {
    let config = serde_json::to_value(cfg).expect("config serializes");
    out.json("config.json", &config)?;
    let with_config = |mut v: Value| {
        v["command"] = json!(cmd.name());
        v["config"] = config.clone();
        v
    };
    match cmd {
        Command::MetricCheck => {
            let m = cfg.metric_spec()?.build()?;
            let r = m.check_invariants(cfg.solver.invariant_samples, cfg.solver.seed);
            let mut v = serde_json::to_value(&r).unwrap();
            v["passed"] = json!(r.passed());
            v["kind"] = json!(m.kind_name());
            v["reversible"] = json!(m.is_reversible());
            out.json("metric_check.json", &with_config(v))
        }
        Command::Geodesic => {
            let m = cfg.metric_spec()?.build()?;
            let path = geodesic(cfg, &m)?;
            out.write("geodesic.csv", &path_csv(&m, &path, cfg.output.samples)?)?;
            let v = json!({
                "tau": path.tau(),
                "speed": path.speed(),
                "speed_deviation": path.speed_deviation()?,
                "el_residual": path.el_residual()?,
                "initial": state_json(path.initial()),
                "endpoint": state_json(&path.endpoint()),
            });
            out.json("geodesic.json", &with_config(v))
        }
        Command::Expmap => {
            let m = cfg.metric_spec()?.build()?;
            let (p, v) = initial_pair(cfg, &m)?;
            let (q, j) = expmap_jacobian_with(&m, &p, &v, &cfg.ode())?;
            let sv = j.clone().singular_values();
            let v = json!({
                "p": p.as_slice(),
                "v": v.as_slice(),
                "exp": q.as_slice(),
                "jacobian": (0..j.nrows()).map(|i| j.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
                "singular_values": sv.as_slice(),
            });
            out.json("expmap.json", &with_config(v))
        }
        Command::Conjugate => {
            let m = cfg.metric_spec()?.build()?;
            let path = geodesic(cfg, &m)?;
            let r = conjugate_scan(&path, &cfg.scan())?;
            out.write("conjugate.csv", &instants_csv(&r))?;
            out.json("conjugate.json", &with_config(serde_json::to_value(&r).unwrap()))
        }
        Command::Focal => {
            let m = cfg.metric_spec()?.build()?;
            let b = cfg.boundary()?;
            let path = perpendicular_geodesic(cfg, &m, &b)?;
            let r = focal_scan(&path, &b, &cfg.scan())?;
            out.write("focal.csv", &instants_csv(&r))?;
            let mut v = serde_json::to_value(&r).unwrap();
            v["initial"] = state_json(path.initial());
            out.json("focal.json", &with_config(v))
        }
        Command::Index => {
            let m = cfg.metric_spec()?.build()?;
            let (path, boundary) = match &cfg.problem.boundary {
                Some(_) => {
                    let b = cfg.boundary()?;
                    (perpendicular_geodesic(cfg, &m, &b)?, Boundary::Perpendicular(b))
                }
                None => (geodesic(cfg, &m)?, Boundary::PointPoint),
            };
            let r = match cfg.solver.route {
                Route::Both => cross_check(&path, &boundary, &cfg.scan(), &cfg.spectral())?,
                Route::Spectral => index_spectral(&path, &boundary, &cfg.spectral())?,
                Route::Counting => {
                    let scan = match &boundary {
                        Boundary::PointPoint => conjugate_scan(&path, &cfg.scan())?,
                        Boundary::Perpendicular(b) => focal_scan(&path, b, &cfg.scan())?,
                    };
                    index_by_counting(&scan, path.tau())
                }
            };
            out.json("index.json", &with_config(serde_json::to_value(&r).unwrap()))
        }
        Command::Sweep => {
            let f = family(cfg)?;
            let scan = sweep_family(&f, &Boundary::PointPoint, &cfg.sweep())?;
            let mut csv = Csv::new(&["lambda", "m_minus", "m_zero", "min_abs_eig"].map(String::from));
            for r in &scan.records {
                csv.row(&[Cell::F(r.lambda), Cell::I(r.m_minus), Cell::I(r.m_zero), Cell::F(r.min_abs_eig)]);
            }
            out.write("sweep.csv", &csv.into_string())?;
            let v = json!({
                "parameter": scan.parameter,
                "range": [scan.range.0, scan.range.1],
                "refine_tol": scan.refine_tol,
                "detections": scan.detections,
                "verdicts": detect_bifurcation(&scan),
                "warnings": scan.warnings,
                "records": scan.records,
            });
            out.json("detections.json", &with_config(v))
        }
        Command::Branch => {
            let f = family(cfg)?;
            let o = cfg.branch();
            let targets: Vec<(f64, Option<usize>)> = match cfg.family.as_ref().and_then(|b| b.mu) {
                Some(mu) => vec![(mu, None)],
                None => {
                    let scan = sweep_family(&f, &Boundary::PointPoint, &cfg.sweep())?;
                    scan.detections.iter().map(|d| (d.mu, Some(d.nullity_at_mu))).collect()
                }
            };
            let mut results = Vec::new();
            for (mu, nullity) in targets {
                let e = find_branches(&f, mu, &Boundary::PointPoint, &o)?;
                let n_i = match nullity {
                    Some(n) => n,
                    None => trivial_nullity(cfg, &f, &e)?,
                };
                let d = classify_alternative(&e, n_i);
                results.push(json!({ "mu": mu, "nullity": n_i, "diagnosis": d, "evidence": e }));
            }
            out.json("branch.json", &with_config(json!({ "results": results })))
        }
        Command::Zermelo => zermelo(cfg, out, &with_config),
        Command::Fermat => fermat(cfg, out, &with_config),
    }
}

fn state_json(s: &PhaseState) -> Value {
    json!({ "x": s.x.as_slice(), "v": s.v.as_slice() })
}

fn eval_vec(e: &[Expression], cfg: &Config) -> Res<DVector<f64>> {
    let vals: Result<Vec<f64>, _> = e.iter().map(|x| x.eval(&[], cfg.params())).collect();
    Ok(DVector::from_vec(vals.map_err(fbt_core::Error::from)?))
}

/// Start point and initial velocity over unit time.
fn initial_pair(cfg: &Config, m: &MetricField) -> Res<(DVector<f64>, DVector<f64>)> {
    if cfg.has_endpoints() {
        let (p, q, seed) = cfg.endpoints()?;
        let r = connect(m, &p, &q, &seed, &connect_options(cfg))?;
        return Ok((p, r.v));
    }
    let (x0, v0, tau) = cfg.initial_exprs()?;
    let t = tau.eval(&[], cfg.params()).map_err(fbt_core::Error::from)?;
    Ok((eval_vec(&x0, cfg)?, eval_vec(&v0, cfg)? * t))
}

fn connect_options(cfg: &Config) -> ConnectOptions {
    ConnectOptions {
        ode: cfg.ode(),
        ..ConnectOptions::default()
    }
}

/// The problem geodesic: from `x0, v0` over `tau`, or the connecting geodesic `p → q` over unit time.
fn geodesic(cfg: &Config, m: &MetricField) -> Res<GeodesicPath> {
    let (s, tau) = if cfg.has_endpoints() {
        let (p, v) = initial_pair(cfg, m)?;
        (PhaseState { x: p, v }, 1.0)
    } else {
        let (x0, v0, tau) = cfg.initial_exprs()?;
        let t = tau.eval(&[], cfg.params()).map_err(fbt_core::Error::from)?;
        (
            PhaseState {
                x: eval_vec(&x0, cfg)?,
                v: eval_vec(&v0, cfg)?,
            },
            t,
        )
    };
    Ok(integrate_geodesic(m, &s, tau, &cfg.ode())?)
}

/// Geodesic leaving the submanifold orthogonally, `v0` serving as the seed direction.
fn perpendicular_geodesic(cfg: &Config, m: &MetricField, b: &fbt_core::BoundaryData) -> Res<GeodesicPath> {
    let (v0, tau) = cfg.velocity_and_span()?;
    let seed = eval_vec(&v0, cfg)?;
    let v = orthogonal_initial(m, b, &seed)?;
    let t = tau.eval(&[], cfg.params()).map_err(fbt_core::Error::from)?;
    Ok(integrate_geodesic(m, &PhaseState { x: b.x0.clone(), v }, t, &cfg.ode())?)
}

fn path_csv(m: &MetricField, path: &GeodesicPath, samples: usize) -> Res<String> {
    let n = path.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("v{i}")));
    header.push("F".into());
    let mut csv = Csv::new(&header);
    for (t, s) in path.samples(samples) {
        let f = m.finsler(&s)?;
        let mut row = vec![Cell::F(t)];
        row.extend(s.x.iter().map(|v| Cell::F(*v)));
        row.extend(s.v.iter().map(|v| Cell::F(*v)));
        row.push(Cell::F(f));
        csv.row(&row);
    }
    Ok(csv.into_string())
}

fn instants_csv(r: &ConjugateReport) -> String {
    let mut csv = Csv::new(&["t", "multiplicity", "sigma_min"].map(String::from));
    for i in &r.instants {
        csv.row(&[Cell::F(i.t), Cell::I(i.multiplicity), Cell::F(i.sigma_min)]);
    }
    csv.into_string()
}

fn family(cfg: &Config) -> Res<FamilySpec> {
    let fb = cfg.family.as_ref().ok_or_else(|| CliError::Schema {
        pointer: "/family".into(),
        message: "required for this command".into(),
    })?;
    let mut template = cfg.metric_spec()?;
    template.params.remove(&fb.parameter);
    let branch = if cfg.has_endpoints() {
        let (p, q, v_seed) = cfg.endpoints()?;
        TrivialBranch::Connect { p, q, v_seed }
    } else {
        let (x0, v0, tau) = cfg.initial_exprs()?;
        TrivialBranch::Initial { x0, v0, tau }
    };
    Ok(FamilySpec {
        parameter: fb.parameter.clone(),
        range: (fb.range[0], fb.range[1]),
        samples: fb.samples,
        template,
        branch,
    })
}

/// Nullity of the trivial branch at `μ`, from the unperturbed level of the evidence.
fn trivial_nullity(cfg: &Config, f: &FamilySpec, e: &fbt_core::BranchEvidence) -> Res<usize> {
    let Some(level) = e.levels.iter().find(|l| l.offset == 0) else {
        return Ok(0);
    };
    let m = f.metric_at(e.mu)?;
    let s = PhaseState::new(&level.p, &level.trivial_v);
    let path = integrate_geodesic(&m, &s, 1.0, &cfg.ode())?;
    Ok(index_spectral(&path, &Boundary::PointPoint, &cfg.spectral())?.m_zero)
}

fn require_kind(cfg: &Config, kind: Kind, cmd: &str) -> Res<()> {
    if cfg.metric.kind != kind {
        return Err(CliError::Schema {
            pointer: "/metric/kind".into(),
            message: format!("`{cmd}` needs a {kind:?} metric"),
        });
    }
    Ok(())
}

fn zermelo(cfg: &Config, out: &mut OutDir, with_config: &dyn Fn(Value) -> Value) -> Res<()> {
    require_kind(cfg, Kind::Zermelo, "zermelo")?;
    let spec = cfg.metric_spec()?;
    let MetricKind::Zermelo { h, wind } = spec.kind.clone() else {
        unreachable!()
    };
    let mut data = ZermeloData::new(h.clone(), wind);
    data.params = spec.params.clone();
    data.chart = spec.chart.clone();
    let m = spec.build()?;
    let calm = MetricSpec {
        kind: MetricKind::Riemannian { g: h },
        ..spec
    }
    .build()?;
    let path = geodesic(cfg, &m)?;
    let time = travel_time(&m, &path)?;
    let points: Vec<DVector<f64>> = path.samples(cfg.output.samples).into_iter().map(|(_, s)| s.x).collect();
    let calm_time = travel_time_polyline(&calm, &points)?;
    let mut v = json!({
        "travel_time": time,
        "calm_time_same_path": calm_time,
        "wind_supremum": data.wind_supremum()?,
        "initial": state_json(path.initial()),
        "endpoint": state_json(&path.endpoint()),
    });
    if cfg.has_endpoints() {
        let (p, q, seed) = cfg.endpoints()?;
        let back = connect(&m, &q, &p, &-seed, &connect_options(cfg))?;
        let back_path = integrate_geodesic(&m, &PhaseState { x: q, v: back.v }, 1.0, &cfg.ode())?;
        let t_back = travel_time(&m, &back_path)?;
        v["return_time"] = json!(t_back);
        v["round_trip_time"] = json!(time + t_back);
    }
    out.write("zermelo_path.csv", &path_csv(&m, &path, cfg.output.samples)?)?;
    out.json("zermelo.json", &with_config(v))
}

fn fermat(cfg: &Config, out: &mut OutDir, with_config: &dyn Fn(Value) -> Value) -> Res<()> {
    require_kind(cfg, Kind::Fermat, "fermat")?;
    let spec = cfg.metric_spec()?;
    let MetricKind::Fermat { g0, drift, lapse, reversed } = spec.kind.clone() else {
        unreachable!()
    };
    let mut s = StationaryData::new(g0, drift, lapse);
    s.params = spec.params.clone();
    s.chart = spec.chart.clone();
    let (f_plus, f_minus) = fermat_metric(&s)?;
    let m = if reversed { &f_minus } else { &f_plus };
    let path = geodesic(cfg, m)?;
    let arrival = travel_time(m, &path)?;
    let n = cfg.dim();
    let mut v = json!({
        "arrival_time": arrival,
        "reversed": reversed,
        "initial": state_json(path.initial()),
        "endpoint": state_json(&path.endpoint()),
    });
    if reversed {
        // the lift is defined for future-pointing F-geodesics
        v["lift"] = Value::Null;
    } else {
        let lift = lift_lightlike(&s, &path, cfg.problem.t0, cfg.output.samples, true)?;
        let mut header = vec!["s".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("t".into());
        let mut csv = Csv::new(&header);
        for k in 0..lift.s.len() {
            let mut row = vec![Cell::F(lift.s[k])];
            row.extend(lift.x[k].iter().map(|x| Cell::F(*x)));
            row.push(Cell::F(lift.t[k]));
            csv.row(&row);
        }
        out.write("fermat_lift.csv", &csv.into_string())?;
        v["null_residual"] = json!(lift.null_residual);
        v["projection_gap"] = json!(lift.projection_gap);
        v["arrival_coordinate_time"] = json!(lift.t.last().copied());
    }
    out.write("fermat_path.csv", &path_csv(m, &path, cfg.output.samples)?)?;
    out.json("fermat.json", &with_config(v))
}
