//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p fbt-core --test acceptance -- --nocapture --test-threads 1`
//! to see the report lines in order.

mod support;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use fbt_core::bifurc::{
    classify_alternative, detect_bifurcation, find_branches, sweep_family, AlternativeLabel, BranchOptions,
    FamilySpec, SweepOptions, TrivialBranch,
};
use fbt_core::geoflow::{connect, exp_map_with, integrate_geodesic, ConnectOptions};
use fbt_core::jacobi::{conjugate_scan, expmap_jacobian_with, ScanOptions};
use fbt_core::metric::{parse_matrix, parse_vector};
use fbt_core::morse::{cross_check, Boundary, SpectralOptions};
use fbt_core::nav::{constant_wind_time, fermat_metric, lift_lightlike, travel_time, zermelo_to_randers};
use fbt_core::{ChartBox, Expression, MetricKind, MetricSpec, OdeOptions, PhaseState, StationaryData, ZermeloData};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn report(n: &str, start: Instant, budget: Duration, ok: bool, detail: &str) {
    let took = start.elapsed();
    let in_budget = took <= budget;
    let pass = ok && in_budget;
    println!(
        "criterion {n}: {} ({detail}; {:.1} s of {} s)",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs()
    );
    assert!(ok, "criterion {n} failed: {detail}");
    assert!(in_budget, "criterion {n} exceeded its runtime budget");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn criterion_01_sphere_conjugate_point() {
    let start = Instant::now();
    let s2 = MetricSpec::sphere(2, 1.0).build().unwrap();
    let p2 = integrate_geodesic(&s2, &PhaseState::new(&[0.0, -1.0], &[1.0, 0.0]), 3.2, &OdeOptions::default()).unwrap();
    let r2 = conjugate_scan(&p2, &ScanOptions::default()).unwrap();
    let s3 = MetricSpec::sphere(3, 1.0).build().unwrap();
    let p3 = integrate_geodesic(
        &s3,
        &PhaseState::new(&[0.0, -1.0, 0.0], &[1.0, 0.0, 0.0]),
        3.2,
        &OdeOptions::default(),
    )
    .unwrap();
    let r3 = conjugate_scan(&p3, &ScanOptions::default()).unwrap();
    let one = |r: &fbt_core::ConjugateReport, mult| {
        r.instants.len() == 1 && (r.instants[0].t - PI).abs() <= 1e-6 && r.instants[0].multiplicity == mult
    };
    let ok = one(&r2, 1) && one(&r3, 2);
    let fmt = |r: &fbt_core::ConjugateReport| {
        r.instants
            .iter()
            .map(|i| format!("t={:.9} m={}", i.t, i.multiplicity))
            .collect::<Vec<_>>()
            .join(", ")
    };
    report("1", start, secs(5), ok, &format!("n=2: [{}], n=3: [{}]", fmt(&r2), fmt(&r3)));
}

fn agree_at(path: &fbt_core::GeodesicPath, expect: usize) -> (bool, String) {
    match cross_check(path, &Boundary::PointPoint, &ScanOptions::default(), &SpectralOptions::default()) {
        Ok(r) => {
            let ok = r.agree == Some(true) && r.m_minus == expect && r.counting_m_minus == Some(expect);
            (
                ok,
                format!(
                    "{}/{} vs {}/{}",
                    r.counting_m_minus.unwrap_or(99),
                    r.counting_m_zero.unwrap_or(99),
                    r.m_minus,
                    r.m_zero
                ),
            )
        }
        Err(e) => (false, e.to_string()),
    }
}

fn warped_path(lambda: f64, equator: bool) -> fbt_core::GeodesicPath {
    let m = warped_template().param("lambda", lambda).build().unwrap();
    let s = if equator {
        PhaseState::new(&[0.0, -1.0], &[0.0, 1.0])
    } else {
        PhaseState::new(&[-1.0, 0.0], &[1.0, 0.0])
    };
    integrate_geodesic(&m, &s, 2.0, &OdeOptions::default()).unwrap()
}

#[test]
fn criterion_02_index_theorem_cross_check() {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut item = |name: &str, r: (bool, String)| {
        ok &= r.0;
        parts.push(format!("{name} {} [{}]", if r.0 { "ok" } else { "FAILED" }, r.1));
    };
    let e = MetricSpec::euclidean(2).build().unwrap();
    let p = integrate_geodesic(&e, &PhaseState::new(&[0.0, 0.0], &[1.0, 0.5]), 3.0, &OdeOptions::default()).unwrap();
    item("euclidean", agree_at(&p, 0));
    let s = MetricSpec::sphere(2, 1.0).build().unwrap();
    for (tau, m) in [(1.5 * PI, 1), (2.5 * PI, 2)] {
        let p = integrate_geodesic(&s, &PhaseState::new(&[0.0, -1.0], &[1.0, 0.0]), tau, &OdeOptions::default()).unwrap();
        item(&format!("sphere {:.1}pi", tau / PI), agree_at(&p, m));
    }
    match first_root(&meridian_potential, 0.5, 5.0, -1.0, 1.0) {
        Some(mu) => {
            item("warped mu-0.2", agree_at(&warped_path(mu - 0.2, false), 0));
            item("warped mu+0.2", agree_at(&warped_path(mu + 0.2, false), 1));
        }
        None => item(
            "warped mu+-0.2",
            (false, "the scalar oracle has no critical lambda in [0.5, 5]".into()),
        ),
    }
    let z = zermelo_to_randers(&ZermeloData::new(
        parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap(),
        parse_vector(&["0.5", "0"]).unwrap(),
    ))
    .unwrap();
    for v in [[1.0, 0.0], [-1.0, 0.0], [0.6, 0.8], [-0.3, -1.0]] {
        let p = integrate_geodesic(&z, &PhaseState::new(&[0.0, 0.0], &v), 2.0, &OdeOptions::default()).unwrap();
        item(&format!("wind {v:?}"), agree_at(&p, 0));
    }
    report("2", start, secs(60), ok, &parts.join("; "));
}

#[test]
fn criterion_02_supplementary_equatorial_family() {
    let start = Instant::now();
    let mu = first_root(&|l, _| l, 0.5, 5.0, -1.0, 1.0).unwrap();
    let (a, da) = agree_at(&warped_path(mu - 0.2, true), 0);
    let (b, db) = agree_at(&warped_path(mu + 0.2, true), 1);
    report(
        "2 (supplementary equatorial family)",
        start,
        secs(60),
        a && b,
        &format!("mu={mu:.9}; mu-0.2 [{da}], mu+0.2 [{db}]"),
    );
}

#[test]
fn criterion_03_expmap_jacobian_oracle() {
    let start = Instant::now();
    let cat = catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fine = OdeOptions {
        rtol: 1e-12,
        atol: 1e-14,
        ..OdeOptions::default()
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut by_metric = vec![0usize; cat.len()];
    while done < 50 {
        let (_, m) = &cat[done % cat.len()];
        let p = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0f64));
        if dir.norm() < 0.2 {
            continue;
        }
        let v = dir.normalize() * rng.random_range(0.3..1.5);
        let w = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0f64)).normalize();
        let Ok((_, j)) = expmap_jacobian_with(m, &p, &v, &OdeOptions::default()) else {
            continue;
        };
        let (Ok(plus), Ok(minus)) = (
            exp_map_with(m, &p, &(&v + &w * eps), &fine),
            exp_map_with(m, &p, &(&v - &w * eps), &fine),
        ) else {
            continue;
        };
        let fd = (plus - minus) / (2.0 * eps);
        let jw = &j * &w;
        worst = worst.max((&jw - fd).norm() / jw.norm());
        by_metric[done % cat.len()] += 1;
        done += 1;
    }
    report(
        "3",
        start,
        secs(30),
        worst <= 1e-4,
        &format!("50 cases over {} metrics, worst relative error {worst:.3e}", cat.len()),
    );
}

fn sweep_opts() -> SweepOptions {
    SweepOptions::default()
}

#[test]
fn criterion_04_bifurcation_detection() {
    let start = Instant::now();
    let oracle = first_root(&meridian_potential, 0.5, 5.0, -1.0, 1.0);
    let scan = sweep_family(&warped_meridian(64), &Boundary::PointPoint, &sweep_opts());
    let (ok, detail) = match (&scan, oracle) {
        (Err(e), _) => (false, format!("sweep failed: {e}")),
        (Ok(s), oracle) => {
            let d = &s.detections;
            let max_index = s.records.iter().map(|r| r.m_minus).max().unwrap_or(0);
            let shape = d.len() == 1 && d[0].index_left == 0 && d[0].index_right == 1 && d[0].nullity_at_mu == 1;
            match oracle {
                Some(mu) => {
                    let close = shape && (d[0].mu - mu).abs() <= 1e-4;
                    (close, format!("{} detections, oracle mu={mu:.9}", d.len()))
                }
                None => (
                    false,
                    format!(
                        "{} detections, max index along the sweep {max_index}; the scalar oracle \
                         u''+(l-l^2 t^2)u=0 has no critical lambda in [0.5, 5] (u=exp(-l t^2/2) never vanishes)",
                        d.len()
                    ),
                ),
            }
        }
    };
    report("4", start, secs(120), ok, &detail);
}

#[test]
fn criterion_04_supplementary_equatorial_family() {
    let start = Instant::now();
    let oracle = first_root(&|l, _| l, 0.5, 5.0, -1.0, 1.0).unwrap();
    let s = sweep_family(&warped_equator(64), &Boundary::PointPoint, &sweep_opts()).unwrap();
    let d = &s.detections;
    let ok = d.len() == 1
        && d[0].index_left == 0
        && d[0].index_right == 1
        && d[0].nullity_at_mu == 1
        && (d[0].mu - oracle).abs() <= 1e-4
        && detect_bifurcation(&s)[0].label == fbt_core::bifurc::VerdictLabel::SufficientConditionMet;
    let detail = match d.first() {
        Some(c) => format!(
            "{} detections, mu={:.9}, oracle={oracle:.9}, |diff|={:.2e}, jump {}->{}",
            d.len(),
            c.mu,
            (c.mu - oracle).abs(),
            c.index_left,
            c.index_right
        ),
        None => "no detection".into(),
    };
    report("4 (supplementary equatorial family)", start, secs(120), ok, &detail);
}

fn antipodal_family() -> FamilySpec {
    FamilySpec {
        parameter: "lambda".into(),
        range: (0.5, 2.0),
        samples: 8,
        template: MetricSpec::new(
            2,
            MetricKind::SphereStereo {
                curvature: Expression::parse("lambda").unwrap(),
            },
        ),
        branch: TrivialBranch::Connect {
            p: DVector::from_column_slice(&[0.0, -1.0]),
            q: DVector::from_column_slice(&[0.0, 1.0]),
            v_seed: DVector::from_column_slice(&[PI, 0.0]),
        },
    }
}

fn antipodal_evidence(seed: u64) -> fbt_core::BranchEvidence {
    let o = BranchOptions {
        levels: 0,
        seed,
        ..BranchOptions::default()
    };
    find_branches(&antipodal_family(), 1.0, &Boundary::PointPoint, &o).unwrap()
}

#[test]
fn criterion_05_exponential_non_injectivity() {
    let start = Instant::now();
    let e = antipodal_evidence(5);
    let l = &e.levels[0];
    let v = DVector::from_column_slice(&l.trivial_v);
    let close: Vec<&fbt_core::bifurc::BranchSolution> = l
        .solutions
        .iter()
        .filter(|s| (DVector::from_column_slice(&s.v) - &v).norm() <= 0.2 && s.boundary_residual <= 1e-8)
        .collect();
    let distinct = close.iter().enumerate().all(|(i, a)| {
        close[i + 1..]
            .iter()
            .all(|b| (DVector::from_column_slice(&a.v) - DVector::from_column_slice(&b.v)).norm() >= 1e-6)
    });
    let d = classify_alternative(&e, 3);
    let ok = close.len() >= 3 && distinct && d.label == AlternativeLabel::ILike;
    report(
        "5",
        start,
        secs(60),
        ok,
        &format!(
            "{} preimages within 0.2 of v=({:.6}, {:.6}), {} in total, label {:?} ({})",
            close.len(),
            v[0],
            v[1],
            l.solutions.len(),
            d.label,
            d.note
        ),
    );
}

fn stress_family(k: usize, rng: &mut ChaCha8Rng) -> FamilySpec {
    if k.is_multiple_of(2) {
        let base = if rng.random_bool(0.5) { warped_equator(16) } else { warped_meridian(16) };
        let tau: f64 = rng.random_range(1.5..3.0);
        let TrivialBranch::Initial { x0, v0, .. } = base.branch.clone() else {
            unreachable!()
        };
        // shift the start so the branch stays centred on the same line
        let half = tau / 2.0;
        let x0 = if v0[0].to_string() == "1" {
            exprs(&[&format!("{}", -half), "0"])
        } else {
            let _ = x0;
            exprs(&["0", &format!("{}", -half)])
        };
        FamilySpec {
            branch: TrivialBranch::Initial {
                x0,
                v0,
                tau: Expression::constant(tau),
            },
            ..base
        }
    } else {
        let a: f64 = rng.random_range(0.1..0.3);
        let c: f64 = rng.random_range(0.0..0.3);
        FamilySpec {
            parameter: "lambda".into(),
            range: (0.0, 1.0),
            samples: 16,
            template: MetricSpec::new(
                2,
                MetricKind::Randers {
                    h: parse_matrix(&[vec![format!("1+{c}*x2^2"), "0".into()], vec!["0".into(), "1".into()]])
                        .unwrap(),
                    beta: parse_vector(&[format!("lambda*{a}*x2"), "0".into()]).unwrap(),
                },
            )
            .chart(ChartBox::cube(2, 2.0)),
            branch: TrivialBranch::Initial {
                x0: exprs(&["-1", "0.3"]),
                v0: exprs(&["1", "0"]),
                tau: Expression::constant(2.0),
            },
        }
    }
}

#[test]
fn criterion_06_necessary_condition_soundness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = Vec::new();
    let mut probes = 0;
    let mut found = 0;
    let mut detected = 0;
    for k in 0..10 {
        let f = stress_family(k, &mut rng);
        let scan = match sweep_family(&f, &Boundary::PointPoint, &sweep_opts()) {
            Ok(s) => s,
            Err(e) => {
                violations.push(format!("family {k}: sweep failed: {e}"));
                continue;
            }
        };
        let mus: Vec<f64> = scan
            .detections
            .iter()
            .filter(|d| d.nullity_at_mu >= 1)
            .map(|d| d.mu)
            .collect();
        detected += mus.len();
        let lambdas = f.lambdas();
        for _ in 0..3 {
            let lambda = lambdas[rng.random_range(0..lambdas.len())];
            let o = BranchOptions {
                levels: 0,
                seed: k as u64,
                rungs: vec![1e-3, 1e-2],
                seeds_per_rung: 4,
                ..BranchOptions::default()
            };
            probes += 1;
            let Ok(e) = find_branches(&f, lambda, &Boundary::PointPoint, &o) else {
                continue;
            };
            for s in e.levels.iter().flat_map(|l| l.solutions.iter()) {
                found += 1;
                let near = mus.iter().any(|m| (m - lambda).abs() <= scan.refine_tol);
                if s.c1_distance <= 1e-2 && !near {
                    violations.push(format!("family {k}: lambda={lambda} c1={:.2e}", s.c1_distance));
                }
            }
        }
    }
    report(
        "6",
        start,
        secs(300),
        violations.is_empty(),
        &format!(
            "10 families, {detected} detected parameters, {probes} probes, {found} non-trivial solutions, violations: [{}]",
            violations.join(", ")
        ),
    );
}

fn zermelo_times(seed: u64) -> (Vec<(f64, f64, f64)>, f64) {
    let w = [0.3, 0.4];
    let z = zermelo_to_randers(&ZermeloData::new(
        parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap(),
        parse_vector(&["0.3", "0.4"]).unwrap(),
    ))
    .unwrap();
    let grid = WindGrid::solve(200, 2.5, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < 20 {
        let raw = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (t_grid, d) = grid.time_to(raw);
        if d[0].hypot(d[1]) < 0.2 {
            continue;
        }
        let p = DVector::zeros(2);
        let q = DVector::from_column_slice(&d);
        let r = connect(&z, &p, &q, &q, &ConnectOptions::default()).unwrap();
        let path = integrate_geodesic(&z, &PhaseState { x: p, v: r.v }, 1.0, &OdeOptions::default()).unwrap();
        let t = travel_time(&z, &path).unwrap();
        out.push((t, constant_wind_time(&d, &w), t_grid));
    }
    (out, grid.cell)
}

#[test]
fn criterion_07_zermelo_travel_time() {
    let start = Instant::now();
    let (rows, cell) = zermelo_times(7);
    let grid_tol = cell / (1.0 - 0.5);
    let closed = rows.iter().map(|(t, c, _)| (t - c).abs()).fold(0.0, f64::max);
    let grid = rows.iter().map(|(t, _, g)| (t - g).abs()).fold(0.0, f64::max);
    report(
        "7",
        start,
        secs(120),
        closed <= 1e-6 && grid <= grid_tol,
        &format!("20 displacements, worst closed-form gap {closed:.2e}, worst grid gap {grid:.4} (cell time {grid_tol:.4})"),
    );
}

#[test]
fn criterion_08_fermat_lift() {
    let start = Instant::now();
    let cases = [
        StationaryData::new(
            parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap(),
            parse_vector(&["0.3", "0"]).unwrap(),
            Expression::constant(1.0),
        ),
        StationaryData::new(
            parse_matrix(&[vec!["1+0.1*x2^2", "0"], vec!["0", "1"]]).unwrap(),
            parse_vector(&["0.3", "0"]).unwrap(),
            Expression::parse("1+0.05*x1^2").unwrap(),
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, s) in cases.iter().enumerate() {
        let (f, _) = fermat_metric(s).unwrap();
        // unit F-speed, so τ = 2 is a length-2 arc
        let v = [0.8, 0.6];
        let speed = f.finsler(&PhaseState::new(&[0.0, 0.2], &v)).unwrap();
        let v = [v[0] / speed, v[1] / speed];
        let path = integrate_geodesic(&f, &PhaseState::new(&[0.0, 0.2], &v), 2.0, &OdeOptions::default()).unwrap();
        let lift = lift_lightlike(s, &path, 0.0, 400, true).unwrap();
        let gap = lift.projection_gap.unwrap();
        ok &= lift.null_residual <= 1e-9 && gap <= 1e-5;
        parts.push(format!("case {i}: null {:.2e}, gap {gap:.2e}", lift.null_residual));
    }
    report("8", start, secs(30), ok, &parts.join("; "));
}

#[test]
fn criterion_09_invariant_suites() {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (name, m) in catalog() {
        let inv = m.check_invariants(200, 9);
        let (mut speed, mut reparam, mut back): (f64, f64, f64) = (0.0, 0.0, 0.0);
        let mut flows = 0;
        while flows < 25 {
            let x = [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if v[0] * v[0] + v[1] * v[1] < 0.04 {
                continue;
            }
            let s0 = PhaseState::new(&x, &v);
            let o = OdeOptions::default();
            let Ok(path) = integrate_geodesic(&m, &s0, 1.0, &o) else { continue };
            // the doubled run must stay in the chart too
            let runs: Result<Vec<_>, _> = [0.5, 2.0]
                .iter()
                .map(|&c| {
                    let fast = integrate_geodesic(&m, &PhaseState::new(&x, &[c * v[0], c * v[1]]), 1.0, &o)?;
                    let slow = integrate_geodesic(&m, &s0, c, &o)?;
                    Ok::<_, fbt_core::Error>((c, fast, slow))
                })
                .collect();
            let Ok(runs) = runs else { continue };
            flows += 1;
            speed = speed.max(path.speed_deviation().unwrap() / path.speed());
            for (c, fast, slow) in runs {
                for k in 0..=50 {
                    let t = k as f64 / 50.0;
                    reparam = reparam.max((fast.state_at(t).x - slow.state_at(c * t).x).norm());
                }
            }
            if reversible(name) {
                let end = path.endpoint();
                let rev = integrate_geodesic(&m, &PhaseState { x: end.x, v: -end.v }, 1.0, &o).unwrap();
                back = back.max((rev.endpoint().x - &s0.x).norm());
            }
        }
        let this = inv.passed() && speed <= 1e-7 && reparam <= 1e-8 && back <= 1e-7;
        ok &= this;
        if !this {
            parts.push(format!(
                "{name}: invariants {:?}, speed {speed:.1e}, reparam {reparam:.1e}, reverse {back:.1e}",
                inv.failures
            ));
        } else {
            parts.push(format!("{name} ok"));
        }
    }
    report("9", start, secs(60), ok, &parts.join("; "));
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let sweep = || {
        let s = sweep_family(&warped_meridian(64), &Boundary::PointPoint, &sweep_opts()).unwrap();
        serde_json::to_string(&s).unwrap()
    };
    let branches = || serde_json::to_string(&antipodal_evidence(5)).unwrap();
    let zermelo = || {
        let (rows, _) = zermelo_times(7);
        rows.iter()
            .map(|(a, b, c)| format!("{a:.16e},{b:.16e},{c:.16e}\n"))
            .collect::<String>()
    };
    let same4 = sweep() == sweep();
    let same5 = branches() == branches();
    let same7 = zermelo() == zermelo();
    report(
        "10",
        start,
        secs(600),
        same4 && same5 && same7,
        &format!("criterion 4 artifacts identical: {same4}, criterion 5: {same5}, criterion 7: {same7}"),
    );
}
