//! Explicit integrators with dense output.
//!
//! `Dopri5` is the Dormand–Prince 5(4) pair with PI step-size control and
//! the fourth-order continuous extension of Hairer & Wanner. `Rk4` takes a
//! fixed number of classical steps with cubic Hermite interpolation; it is the
//! reproducibility fallback.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub enum Method {
    Dopri5,
    Rk4 { steps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub method: Method,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            method: Method::Dopri5,
            max_steps: 200_000,
        }
    }
}

#[derive(Clone, Debug)]
enum Segment {
    /// Continuous extension coefficients `r1..r5`.
    Dopri { r: [Vec<f64>; 5] },
    Hermite { y0: Vec<f64>, f0: Vec<f64>, y1: Vec<f64>, f1: Vec<f64> },
}

/// Accepted step points plus a piecewise interpolant.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    segs: Vec<Segment>,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("non-empty solution")
    }

    pub fn dim(&self) -> usize {
        self.y[0].len()
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.segs.len();
        if n == 0 {
            return 0;
        }
        match self.t.binary_search_by(|p| p.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    /// State at `t`, clamped to the integrated span.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        if self.segs.is_empty() {
            return self.y[0].clone();
        }
        let t = t.clamp(self.t_start(), self.t_end());
        let i = self.locate(t);
        let h = self.t[i + 1] - self.t[i];
        let s = (t - self.t[i]) / h;
        match &self.segs[i] {
            Segment::Dopri { r } => {
                let s1 = 1.0 - s;
                (0..r[0].len())
                    .map(|k| r[0][k] + s * (r[1][k] + s1 * (r[2][k] + s * (r[3][k] + s1 * r[4][k]))))
                    .collect()
            }
            Segment::Hermite { y0, f0, y1, f1 } => {
                let (h00, h10, h01, h11) = (
                    (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
                    s * (1.0 - s) * (1.0 - s),
                    s * s * (3.0 - 2.0 * s),
                    s * s * (s - 1.0),
                );
                (0..y0.len())
                    .map(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k])
                    .collect()
            }
        }
    }

    /// Time derivative of the interpolant at `t`.
    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        if self.segs.is_empty() {
            return vec![0.0; self.dim()];
        }
        let t = t.clamp(self.t_start(), self.t_end());
        let i = self.locate(t);
        let h = self.t[i + 1] - self.t[i];
        let s = (t - self.t[i]) / h;
        match &self.segs[i] {
            Segment::Dopri { r } => {
                let (c3, c4, c5) = (1.0 - 2.0 * s, s * (2.0 - 3.0 * s), 2.0 * s * (1.0 - s) * (1.0 - 2.0 * s));
                (0..r[0].len())
                    .map(|k| (r[1][k] + c3 * r[2][k] + c4 * r[3][k] + c5 * r[4][k]) / h)
                    .collect()
            }
            Segment::Hermite { y0, f0, y1, f1 } => {
                let (d00, d10, d01, d11) = (
                    6.0 * s * s - 6.0 * s,
                    3.0 * s * s - 4.0 * s + 1.0,
                    6.0 * s - 6.0 * s * s,
                    3.0 * s * s - 2.0 * s,
                );
                (0..y0.len())
                    .map(|k| (d00 * y0[k] + d01 * y1[k]) / h + d10 * f0[k] + d11 * f1[k])
                    .collect()
            }
        }
    }
}

/// Outcome of an integration that may be stopped by a predicate.
#[derive(Clone, Debug)]
pub enum Outcome {
    Completed(DenseSolution),
    /// The predicate fired; the solution is truncated at the located crossing time.
    Stopped { solution: DenseSolution, t_stop: f64 },
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy(y: &[f64], h: f64, terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        let ch = c * h;
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += ch * v;
        }
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`.
///
/// `stop(y)` is checked at every accepted step; when it turns true the crossing
/// is located by bisection on the dense output and the solution is truncated.
pub fn integrate<F, S>(mut f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions, stop: S) -> Result<Outcome>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    S: Fn(&[f64]) -> bool,
{
    if !(t1 > t0) {
        return Err(Error::InvalidInput(format!("integration span [{t0}, {t1}] is empty")));
    }
    let mut sol = match opts.method {
        Method::Dopri5 => dopri5(&mut f, t0, y0, t1, opts, &stop)?,
        Method::Rk4 { steps } => rk4(&mut f, t0, y0, t1, steps.max(1), &stop)?,
    };
    let last = sol.y.last().expect("non-empty");
    if sol.segs.is_empty() || !stop(last) {
        return Ok(Outcome::Completed(sol));
    }
    // bisection inside the last segment
    let n = sol.t.len();
    let (mut lo, mut hi) = (sol.t[n - 2], sol.t[n - 1]);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if stop(&sol.eval(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    truncate(&mut sol, lo);
    Ok(Outcome::Stopped { solution: sol, t_stop: hi })
}

fn truncate(sol: &mut DenseSolution, t: f64) {
    let n = sol.t.len();
    let t_prev = sol.t[n - 2];
    let y = sol.eval(t);
    if t <= t_prev {
        sol.t.pop();
        sol.y.pop();
        sol.segs.pop();
        return;
    }
    let f0 = sol.eval_derivative(t_prev);
    let f1 = sol.eval_derivative(t);
    let y0 = sol.y[n - 2].clone();
    *sol.segs.last_mut().expect("segment") = Segment::Hermite { y0, f0, y1: y.clone(), f1 };
    sol.t[n - 1] = t;
    sol.y[n - 1] = y;
}

fn err_norm(y0: &[f64], y1: &[f64], e: &[f64], opts: &OdeOptions) -> f64 {
    let n = y0.len() as f64;
    let s: f64 = (0..y0.len())
        .map(|i| {
            let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
            (e[i] / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn initial_step<F>(f: &mut F, t0: f64, y0: &[f64], f0: &[f64], span: f64, opts: &OdeOptions) -> Result<f64>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y0.len() as f64;
    let sc: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let norm = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt();
    let d0 = norm(y0);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let f1 = f(t0 + h0, &y1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

fn dopri5<F, S>(f: &mut F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions, stop: &S) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    S: Fn(&[f64]) -> bool,
{
    const SAFE: f64 = 0.9;
    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;
    const FACC1: f64 = 5.0;
    const FACC2: f64 = 0.1;

    let mut sol = DenseSolution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        segs: Vec::new(),
    };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f(t, &y)?;
    let mut h = initial_step(f, t0, y0, &k1, t1 - t0, opts)?;
    let mut facold: f64 = 1e-4;
    let mut reject = false;
    let mut steps = 0usize;

    while t < t1 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepFailure {
                t,
                reason: format!("more than {} steps", opts.max_steps),
            });
        }
        let last = t + h >= t1 - 1e-14 * t1.abs().max(1.0);
        if last {
            h = t1 - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepFailure {
                t,
                reason: format!("step size {h:e} underflow"),
            });
        }
        let k2 = f(t + C[1] * h, &axpy(&y, h, &[(A21, &k1)]))?;
        let k3 = f(t + C[2] * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(t + C[3] * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(
            t + C[4] * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?;
        let ysti = axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let k6 = f(t + h, &ysti)?;
        let y1 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t + h, &y1)?;
        let e: Vec<f64> = (0..y.len())
            .map(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]))
            .collect();
        let err = err_norm(&y, &y1, &e, opts);
        if !err.is_finite() {
            h *= 0.1;
            reject = true;
            continue;
        }
        let fac11 = err.powf(EXPO1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(FACC2, FACC1);
            let mut hnew = h / fac;
            facold = err.max(1e-4);
            let ydiff: Vec<f64> = y1.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bspl: Vec<f64> = (0..y.len()).map(|i| h * k1[i] - ydiff[i]).collect();
            let r4: Vec<f64> = (0..y.len()).map(|i| ydiff[i] - h * k7[i] - bspl[i]).collect();
            let r5: Vec<f64> = (0..y.len())
                .map(|i| h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]))
                .collect();
            sol.segs.push(Segment::Dopri {
                r: [y.clone(), ydiff, bspl, r4, r5],
            });
            t = if last { t1 } else { t + h };
            y = y1;
            k1 = k7;
            sol.t.push(t);
            sol.y.push(y.clone());
            if stop(&y) {
                break;
            }
            if reject {
                hnew = hnew.min(h);
            }
            reject = false;
            h = hnew;
        } else {
            h /= (fac11 / SAFE).min(FACC1);
            reject = true;
        }
    }
    Ok(sol)
}

fn rk4<F, S>(f: &mut F, t0: f64, y0: &[f64], t1: f64, steps: usize, stop: &S) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    S: Fn(&[f64]) -> bool,
{
    let h = (t1 - t0) / steps as f64;
    let mut sol = DenseSolution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        segs: Vec::new(),
    };
    let mut y = y0.to_vec();
    let mut k1 = f(t0, &y)?;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k2 = f(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k1)]))?;
        let k3 = f(t + 0.5 * h, &axpy(&y, h, &[(0.5, &k2)]))?;
        let k4 = f(t + h, &axpy(&y, h, &[(1.0, &k3)]))?;
        let y1 = axpy(&y, h, &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)]);
        let tn = if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h };
        let f1 = f(tn, &y1)?;
        sol.segs.push(Segment::Hermite {
            y0: y.clone(),
            f0: k1.clone(),
            y1: y1.clone(),
            f1: f1.clone(),
        });
        sol.t.push(tn);
        sol.y.push(y1.clone());
        y = y1;
        k1 = f1;
        if stop(&y) {
            break;
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(_t: f64, y: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![y[1], -y[0]])
    }

    fn completed(o: Outcome) -> DenseSolution {
        match o {
            Outcome::Completed(s) => s,
            Outcome::Stopped { .. } => panic!("unexpected stop"),
        }
    }

    #[test]
    fn harmonic_oscillator_endpoint_and_dense_output() {
        let sol = completed(integrate(oscillator, 0.0, &[0.0, 1.0], 10.0, &OdeOptions::default(), |_| false).unwrap());
        let y = sol.y.last().unwrap();
        assert!((y[0] - 10f64.sin()).abs() < 1e-8);
        assert_eq!(sol.t_end(), 10.0);
        for k in 0..97 {
            let t = 0.1 * k as f64 + 0.0137;
            let y = sol.eval(t);
            assert!((y[0] - t.sin()).abs() < 1e-7, "t={t}");
            let d = sol.eval_derivative(t);
            assert!((d[0] - t.cos()).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let run = |n| {
            let opts = OdeOptions {
                method: Method::Rk4 { steps: n },
                ..OdeOptions::default()
            };
            let sol = completed(integrate(oscillator, 0.0, &[0.0, 1.0], 2.0, &opts, |_| false).unwrap());
            (sol.y.last().unwrap()[0] - 2f64.sin()).abs()
        };
        let ratio = run(50) / run(100);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }

    #[test]
    fn stop_predicate_locates_crossing() {
        let out = integrate(|_, _| Ok(vec![1.0]), 0.0, &[0.0], 5.0, &OdeOptions::default(), |y| y[0] > 1.7).unwrap();
        match out {
            Outcome::Stopped { solution, t_stop } => {
                assert!((t_stop - 1.7).abs() < 1e-12);
                assert!(solution.t_end() <= t_stop && solution.t_end() > 1.7 - 1e-12);
            }
            _ => panic!("expected stop"),
        }
    }
}
