//! Morse index and nullity of a geodesic by two routes.
//!
//! *Counting* sums conjugate (or focal) multiplicities inside `(0, τ)`.
//! *Spectral* discretises the second variation of `∫L dt` with P1 finite
//! elements and counts eigenvalues of the pencil against a `W^{1,2}` mass
//! matrix. The discrete shadow of a true null eigenvalue is `O(h²)`, so the
//! low end of the spectrum is Richardson-extrapolated from meshes `N` and `2N`
//! before thresholding.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geoflow::{BoundaryData, GeodesicPath, TOL_RES};
use crate::jacobi::{conjugate_scan, focal_scan, ConjugateInstant, ConjugateReport, ScanOptions};

#[derive(Clone, Debug, PartialEq)]
pub enum Boundary {
    PointPoint,
    Perpendicular(BoundaryData),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Counting,
    Spectral,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralOptions {
    pub start_mesh: usize,
    pub max_mesh: usize,
    /// `θ_ker = theta_ker_rel·|λ|_max`.
    pub theta_ker_rel: f64,
    pub tol_res: f64,
    /// Number of consecutive mesh levels whose counts must agree.
    pub stable_levels: usize,
    /// Eigenvalues below `window_rel·|λ|_max` are extrapolated.
    pub window_rel: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            start_mesh: 16,
            max_mesh: 1024,
            theta_ker_rel: 1e-7,
            tol_res: TOL_RES,
            stable_levels: 3,
            window_rel: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelCounts {
    pub coarse: usize,
    pub fine: usize,
    pub m_minus: usize,
    pub m_zero: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralData {
    /// Fine mesh of the accepted level.
    pub mesh: usize,
    /// Lowest extrapolated eigenvalues, ascending.
    pub eigenvalues_near_zero: Vec<f64>,
    pub theta_ker: f64,
    pub lambda_max: f64,
    pub history: Vec<LevelCounts>,
}

impl SpectralData {
    /// Extrapolated eigenvalue of smallest magnitude (signed).
    pub fn min_abs_eig(&self) -> f64 {
        self.eigenvalues_near_zero
            .iter()
            .copied()
            .fold(f64::INFINITY, |a, b| if b.abs() < a.abs() { b } else { a })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexReport {
    pub m_minus: usize,
    pub m_zero: usize,
    pub route: Route,
    /// Present when both routes ran.
    pub agree: Option<bool>,
    pub instants: Option<Vec<ConjugateInstant>>,
    pub spectral: Option<SpectralData>,
    pub counting_m_minus: Option<usize>,
    pub counting_m_zero: Option<usize>,
}

/// Instants within this distance of `τ` count toward the nullity.
pub const END_TOL: f64 = 1e-8;

pub fn index_by_counting(report: &ConjugateReport, tau: f64) -> IndexReport {
    let mut m_minus = 0;
    let mut m_zero = 0;
    for i in &report.instants {
        if (i.t - tau).abs() <= END_TOL {
            m_zero += i.multiplicity;
        } else if i.t > 0.0 && i.t < tau {
            m_minus += i.multiplicity;
        }
    }
    IndexReport {
        m_minus,
        m_zero,
        route: Route::Counting,
        agree: None,
        instants: Some(report.instants.clone()),
        spectral: None,
        counting_m_minus: Some(m_minus),
        counting_m_zero: Some(m_zero),
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Stiffness (second variation) and mass matrices on a uniform mesh of `mesh` elements.
pub fn assemble(path: &GeodesicPath, boundary: &Boundary, mesh: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = path.dim();
    let tau = path.tau();
    let metric = path.metric();
    let pseudo = metric.is_pseudo();
    let k = match boundary {
        Boundary::PointPoint => 0,
        Boundary::Perpendicular(b) => b.k(),
    };
    let ndof = k + n * (mesh - 1);
    // node i ↦ (offset, embedding n×d)
    let embed = |i: usize| -> Option<(usize, DMatrix<f64>)> {
        if i == 0 {
            match boundary {
                Boundary::Perpendicular(b) if k > 0 => Some((0, b.basis.clone())),
                _ => None,
            }
        } else if i == mesh {
            None
        } else {
            Some((k + n * (i - 1), DMatrix::identity(n, n)))
        }
    };
    let mut a = DMatrix::zeros(ndof, ndof);
    let mut b = DMatrix::zeros(ndof, ndof);
    let h = tau / mesh as f64;
    for e in 0..mesh {
        let t0 = e as f64 * h;
        let mut ke = [[DMatrix::zeros(n, n), DMatrix::zeros(n, n)], [DMatrix::zeros(n, n), DMatrix::zeros(n, n)]];
        let mut me = ke.clone();
        for (xi, w) in GAUSS3 {
            let s = 0.5 * (xi + 1.0);
            let t = t0 + s * h;
            let wq = w * 0.5 * h;
            let st = path.state_at(t);
            let jet = metric.jet(st.x.as_slice(), st.v.as_slice())?;
            let g = if pseudo { DMatrix::identity(n, n) } else { &jet.dvv * 0.5 };
            let phi = [1.0 - s, s];
            let dphi = [-1.0 / h, 1.0 / h];
            let lxv_t = jet.dxv.transpose();
            for p in 0..2 {
                for q in 0..2 {
                    ke[p][q] += (&jet.dxx * (phi[p] * phi[q])
                        + &jet.dxv * (phi[p] * dphi[q])
                        + &lxv_t * (dphi[p] * phi[q])
                        + &jet.dvv * (dphi[p] * dphi[q]))
                        * wq;
                    me[p][q] += &g * ((phi[p] * phi[q] + dphi[p] * dphi[q]) * wq);
                }
            }
        }
        for p in 0..2 {
            let Some((op, ep)) = embed(e + p) else { continue };
            for q in 0..2 {
                let Some((oq, eq)) = embed(e + q) else { continue };
                let kb = ep.transpose() * &ke[p][q] * &eq;
                let mb = ep.transpose() * &me[p][q] * &eq;
                let mut av = a.view_mut((op, oq), kb.shape());
                av += kb;
                let mut bv = b.view_mut((op, oq), mb.shape());
                bv += mb;
            }
        }
    }
    if let Boundary::Perpendicular(bd) = boundary {
        if k > 0 {
            let s0 = path.initial();
            let jet = metric.jet(s0.x.as_slice(), s0.v.as_slice())?;
            let w = &bd.basis;
            let mut bk = w.transpose() * jet.dxv.transpose() * w + w.transpose() * &jet.dvv * w * &bd.shape;
            bk = (&bk + bk.transpose()) * 0.5;
            let mut av = a.view_mut((0, 0), (k, k));
            av += bk;
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let b = (&b + b.transpose()) * 0.5;
    Ok((a, b))
}

/// Ascending eigenvalues of `A u = λ B u` with `B` positive definite.
pub fn pencil_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let chol = nalgebra::Cholesky::new(b.clone())
        .ok_or_else(|| Error::InvalidInput("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let x = l.solve_lower_triangular(a).expect("non-singular factor");
    let c = l.solve_lower_triangular(&x.transpose()).expect("non-singular factor");
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ev)
}

/// Eigenvalues at mesh `coarse`, `2·coarse` and their extrapolation.
#[derive(Clone, Debug)]
pub struct ExtrapolatedSpectrum {
    pub coarse: usize,
    pub values: Vec<f64>,
    pub lambda_max: f64,
}

fn extrapolate(coarse: &[f64], fine: &[f64], window_rel: f64) -> (Vec<f64>, f64) {
    let lmax = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let window = window_rel * lmax;
    let values = fine
        .iter()
        .enumerate()
        .map(|(j, &lf)| {
            if j < coarse.len() && lf < window {
                (4.0 * lf - coarse[j]) / 3.0
            } else {
                lf
            }
        })
        .collect();
    (values, lmax)
}

fn spectrum(path: &GeodesicPath, boundary: &Boundary, mesh: usize) -> Result<Vec<f64>> {
    let (a, b) = assemble(path, boundary, mesh)?;
    pencil_eigenvalues(&a, &b)
}

/// Extrapolated spectrum at a fixed mesh pair.
pub fn extrapolated_spectrum(
    path: &GeodesicPath,
    boundary: &Boundary,
    coarse: usize,
    opts: &SpectralOptions,
) -> Result<ExtrapolatedSpectrum> {
    let c = spectrum(path, boundary, coarse)?;
    let f = spectrum(path, boundary, 2 * coarse)?;
    let (values, lambda_max) = extrapolate(&c, &f, opts.window_rel);
    Ok(ExtrapolatedSpectrum {
        coarse,
        values,
        lambda_max,
    })
}

fn counts(values: &[f64], theta: f64) -> (usize, usize) {
    let m_minus = values.iter().filter(|&&l| l < -theta).count();
    let m_zero = values.iter().filter(|&&l| l.abs() <= theta).count();
    (m_minus, m_zero)
}

/// Index and nullity from the discretised second variation, refining the
/// mesh until the counts agree over `stable_levels` consecutive levels.
pub fn index_spectral(path: &GeodesicPath, boundary: &Boundary, opts: &SpectralOptions) -> Result<IndexReport> {
    let res = path.el_residual()?;
    if res > opts.tol_res {
        return Err(Error::NotCritical { residual: res });
    }
    if let Boundary::Perpendicular(b) = boundary {
        let r = crate::geoflow::perpendicular_residual(path.metric(), b, &path.initial().v)?;
        if r > 1e-8 {
            return Err(Error::NotPerpendicular { residual: r });
        }
    }
    let mut mesh = opts.start_mesh.max(2);
    let mut prev = spectrum(path, boundary, mesh)?;
    let mut history: Vec<LevelCounts> = Vec::new();
    while 2 * mesh <= opts.max_mesh {
        let fine = spectrum(path, boundary, 2 * mesh)?;
        let (values, lmax) = extrapolate(&prev, &fine, opts.window_rel);
        let theta = opts.theta_ker_rel * lmax;
        let (m_minus, m_zero) = counts(&values, theta);
        log::debug!("spectral level {mesh}/{}: m- = {m_minus}, m0 = {m_zero}", 2 * mesh);
        history.push(LevelCounts {
            coarse: mesh,
            fine: 2 * mesh,
            m_minus,
            m_zero,
        });
        let l = history.len();
        if l >= opts.stable_levels
            && history[l - opts.stable_levels..]
                .iter()
                .all(|h| h.m_minus == m_minus && h.m_zero == m_zero)
        {
            let keep = (m_minus + m_zero + 3).min(values.len());
            return Ok(IndexReport {
                m_minus,
                m_zero,
                route: Route::Spectral,
                agree: None,
                instants: None,
                spectral: Some(SpectralData {
                    mesh: 2 * mesh,
                    eigenvalues_near_zero: values[..keep].to_vec(),
                    theta_ker: theta,
                    lambda_max: lmax,
                    history,
                }),
                counting_m_minus: None,
                counting_m_zero: None,
            });
        }
        prev = fine;
        mesh *= 2;
    }
    Err(Error::NoStabilization { max_mesh: opts.max_mesh })
}

/// Runs both routes and compares them. Disagreement is reported, not raised.
pub fn cross_check(
    path: &GeodesicPath,
    boundary: &Boundary,
    scan: &ScanOptions,
    spectral: &SpectralOptions,
) -> Result<IndexReport> {
    let rep = match boundary {
        Boundary::PointPoint => conjugate_scan(path, scan)?,
        Boundary::Perpendicular(b) => focal_scan(path, b, scan)?,
    };
    let counting = index_by_counting(&rep, path.tau());
    let spec = index_spectral(path, boundary, spectral)?;
    let agree = counting.m_minus == spec.m_minus && counting.m_zero == spec.m_zero;
    if !agree {
        log::warn!(
            "index routes disagree: counting {}/{} vs spectral {}/{}",
            counting.m_minus,
            counting.m_zero,
            spec.m_minus,
            spec.m_zero
        );
    }
    Ok(IndexReport {
        m_minus: spec.m_minus,
        m_zero: spec.m_zero,
        route: Route::Both,
        agree: Some(agree),
        instants: counting.instants,
        spectral: spec.spectral,
        counting_m_minus: Some(counting.m_minus),
        counting_m_zero: Some(counting.m_zero),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoflow::integrate_geodesic;
    use crate::metric::{MetricField, MetricSpec, PhaseState};
    use crate::ode::OdeOptions;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    fn sphere_path(tau: f64) -> GeodesicPath {
        let s = MetricSpec::sphere(2, 1.0).build().unwrap();
        integrate_geodesic(&s, &PhaseState::new(&[0.0, -1.0], &[1.0, 0.0]), tau, &OdeOptions::default()).unwrap()
    }

    fn euclid() -> MetricField {
        MetricSpec::euclidean(2).build().unwrap()
    }

    #[test]
    fn counting_examples() {
        let empty = ConjugateReport {
            instants: vec![],
            tau: 1.0,
            grid: 400,
            theta_null: 1e-6,
            theta_dip: 1e-4,
            warnings: vec![],
            flagged: vec![],
        };
        let r = index_by_counting(&empty, 1.0);
        assert_eq!((r.m_minus, r.m_zero), (0, 0));
        let inst = |t| ConjugateInstant {
            t,
            multiplicity: 1,
            sigma_min: 0.0,
            ratio: 0.0,
        };
        let two = ConjugateReport {
            instants: vec![inst(PI), inst(2.0 * PI)],
            ..empty.clone()
        };
        let r = index_by_counting(&two, 2.5 * PI);
        assert_eq!((r.m_minus, r.m_zero), (2, 0));
        let end = ConjugateReport {
            instants: vec![inst(PI)],
            ..empty
        };
        let r = index_by_counting(&end, PI);
        assert_eq!((r.m_minus, r.m_zero), (0, 1));
    }

    #[test]
    fn spectral_euclidean_segment() {
        let p = integrate_geodesic(&euclid(), &PhaseState::new(&[0.0, 0.0], &[1.0, 0.5]), 3.0, &OdeOptions::default())
            .unwrap();
        let (a, b) = assemble(&p, &Boundary::PointPoint, 4).unwrap();
        assert!(pencil_eigenvalues(&a, &b).unwrap()[0] > 0.0);
        let r = index_spectral(&p, &Boundary::PointPoint, &SpectralOptions::default()).unwrap();
        assert_eq!((r.m_minus, r.m_zero), (0, 0));
    }

    #[test]
    fn spectral_sphere() {
        let r = index_spectral(&sphere_path(1.5 * PI), &Boundary::PointPoint, &SpectralOptions::default()).unwrap();
        assert_eq!((r.m_minus, r.m_zero), (1, 0));
        assert!(r.spectral.unwrap().mesh <= 256);
        let r = index_spectral(&sphere_path(PI), &Boundary::PointPoint, &SpectralOptions::default()).unwrap();
        assert_eq!((r.m_minus, r.m_zero), (0, 1));
    }

    #[test]
    fn cross_check_sphere_and_focal() {
        let r = cross_check(
            &sphere_path(2.5 * PI),
            &Boundary::PointPoint,
            &ScanOptions::default(),
            &SpectralOptions::default(),
        )
        .unwrap();
        assert_eq!((r.m_minus, r.m_zero, r.agree), (2, 0, Some(true)));

        // circle of radius 1 with S̃ = −1: focal at t = 1
        let b = BoundaryData::new(
            DVector::from_column_slice(&[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Some(DMatrix::from_element(1, 1, -1.0)),
        )
        .unwrap();
        for (tau, expect) in [(0.7, (0, 0)), (1.0, (0, 1)), (1.6, (1, 0))] {
            let p = integrate_geodesic(&euclid(), &PhaseState::new(&[1.0, 0.0], &[1.0, 0.0]), tau, &OdeOptions::default())
                .unwrap();
            let r = cross_check(
                &p,
                &Boundary::Perpendicular(b.clone()),
                &ScanOptions::default(),
                &SpectralOptions::default(),
            )
            .unwrap();
            assert_eq!((r.m_minus, r.m_zero), expect, "tau={tau}");
            assert_eq!(r.agree, Some(true), "tau={tau}: {r:?}");
        }
    }

    #[test]
    fn index_is_monotone_in_length() {
        let mut last = 0;
        for k in 1..=8 {
            let tau = 0.4 * PI * k as f64 + 0.1;
            let r = index_spectral(&sphere_path(tau), &Boundary::PointPoint, &SpectralOptions::default()).unwrap();
            assert!(r.m_minus >= last);
            assert_eq!(r.m_minus, (tau / PI).floor() as usize, "tau={tau}");
            last = r.m_minus;
        }
    }
}
