//! Small dense helpers that must work over dual numbers as well as `f64`.

use nalgebra::{DMatrix, DVector};

use crate::ad::Real;

/// Solves `a·x = b` (row-major `a`, size n×n) by Gaussian elimination with
/// partial pivoting on the real parts. Returns `None` when a pivot falls below
/// `rel_tol` times the largest entry magnitude.
pub fn lu_solve<T: Real>(mut a: Vec<T>, mut b: Vec<T>, n: usize, rel_tol: f64) -> Option<Vec<T>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.re().abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let (piv, pmag) = (col..n)
            .map(|r| (r, a[r * n + col].re().abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if pmag <= rel_tol * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let p = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / p;
            if f.re() == 0.0 && f.is_finite() {
                continue;
            }
            for k in col..n {
                let t = a[col * n + k];
                a[r * n + k] = a[r * n + k] - f * t;
            }
            let t = b[col];
            b[r] = b[r] - f * t;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s = s - a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    Some(x)
}

/// Singular values sorted descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Right singular vector belonging to the smallest singular value.
pub fn null_direction(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    vt.row(imin).transpose().into_owned()
}

/// Minimum-norm least-squares solution of `a·x = b`, discarding singular
/// values below `rel_cut·σ_max`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_cut: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let mut x = DVector::zeros(a.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_cut * smax && s > 0.0 {
            let coef = u.column(i).dot(b) / s;
            x += vt.row(i).transpose() * coef;
        }
    }
    x
}

/// Orthonormal basis (columns) of the null space of `a` (k×n).
pub fn null_space(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to square so the full V is available
    let mut sq = DMatrix::zeros(n.max(a.nrows()), n);
    sq.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= 1e-12 * smax.max(1e-300))
        .map(|(i, _)| vt.row(i).transpose().into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}
