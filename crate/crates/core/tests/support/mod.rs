#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use fbt_core::bifurc::{FamilySpec, TrivialBranch};
use fbt_core::metric::{parse_matrix, parse_vector};
use fbt_core::{ChartBox, Expression, MetricField, MetricKind, MetricSpec};

pub fn exprs(s: &[&str]) -> Vec<Expression> {
    s.iter().map(|x| Expression::parse(x).unwrap()).collect()
}

pub fn riemannian(rows: &[[&str; 2]]) -> MetricKind {
    let rows: Vec<Vec<&str>> = rows.iter().map(|r| r.to_vec()).collect();
    MetricKind::Riemannian {
        g: parse_matrix(&rows).unwrap(),
    }
}

/// Named metrics used across the property and oracle suites. Every entry is
/// valid on its whole chart.
pub fn catalog() -> Vec<(&'static str, MetricField)> {
    let c = ChartBox::cube(2, 2.0);
    let eye = || parse_matrix(&[vec!["1", "0"], vec!["0", "1"]]).unwrap();
    vec![
        ("euclidean", MetricSpec::euclidean(2).build().unwrap()),
        ("sphere", MetricSpec::sphere(2, 1.0).chart(c.clone()).build().unwrap()),
        ("sphere_k2", MetricSpec::sphere(2, 2.0).chart(c.clone()).build().unwrap()),
        (
            "riemannian",
            MetricSpec::new(2, riemannian(&[["1+0.2*x2^2", "0.1*x1"], ["0.1*x1", "2+sin(x1)"]]))
                .chart(c.clone())
                .build()
                .unwrap(),
        ),
        (
            "warped",
            MetricSpec::new(2, riemannian(&[["1", "0"], ["0", "exp(-1.5*x1^2)"]]))
                .chart(c.clone())
                .build()
                .unwrap(),
        ),
        (
            "randers",
            MetricSpec::new(
                2,
                MetricKind::Randers {
                    h: parse_matrix(&[vec!["1+0.1*x2^2", "0"], vec!["0", "1"]]).unwrap(),
                    beta: parse_vector(&["0.2*x2", "-0.15*x1"]).unwrap(),
                },
            )
            .chart(c.clone())
            .build()
            .unwrap(),
        ),
        (
            "zermelo",
            MetricSpec::new(
                2,
                MetricKind::Zermelo {
                    h: eye(),
                    wind: parse_vector(&["0.3+0.1*sin(x2)", "0.1*x1"]).unwrap(),
                },
            )
            .chart(c.clone())
            .build()
            .unwrap(),
        ),
        (
            "fermat",
            MetricSpec::new(
                2,
                MetricKind::Fermat {
                    g0: parse_matrix(&[vec!["1", "0"], vec!["0", "1+0.1*x1^2"]]).unwrap(),
                    drift: parse_vector(&["0.3", "0.1*x2"]).unwrap(),
                    lapse: Expression::parse("1+0.05*x2^2").unwrap(),
                    reversed: false,
                },
            )
            .chart(c)
            .build()
            .unwrap(),
        ),
    ]
}

pub fn reversible(name: &str) -> bool {
    matches!(name, "euclidean" | "sphere" | "sphere_k2" | "riemannian" | "warped")
}

/// `dr² + e^{−λr²}dθ²` in the chart `(r, θ)`.
pub fn warped_template() -> MetricSpec {
    MetricSpec::new(2, riemannian(&[["1", "0"], ["0", "exp(-lambda*x1^2)"]])).chart(ChartBox::cube(2, 3.0))
}

/// Meridian branch `γ(t) = (t, 0)`, `t ∈ [−1, 1]`.
pub fn warped_meridian(samples: usize) -> FamilySpec {
    FamilySpec {
        parameter: "lambda".into(),
        range: (0.5, 5.0),
        samples,
        template: warped_template(),
        branch: TrivialBranch::Initial {
            x0: exprs(&["-1", "0"]),
            v0: exprs(&["1", "0"]),
            tau: Expression::constant(2.0),
        },
    }
}

/// Equatorial branch `γ(t) = (0, t)`, `t ∈ [−1, 1]`: Gaussian curvature `λ` along it.
pub fn warped_equator(samples: usize) -> FamilySpec {
    FamilySpec {
        branch: TrivialBranch::Initial {
            x0: exprs(&["0", "-1"]),
            v0: exprs(&["0", "1"]),
            tau: Expression::constant(2.0),
        },
        ..warped_meridian(samples)
    }
}

/// `u(b)` for `u″ + q(t)u = 0`, `u(a) = 0`, `u′(a) = 1`, classical RK4.
pub fn shoot(q: &dyn Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
    let h = (b - a) / steps as f64;
    let f = |t: f64, y: [f64; 2]| [y[1], -q(t) * y[0]];
    let mut y = [0.0, 1.0];
    let mut t = a;
    for _ in 0..steps {
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f(t + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f(t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for i in 0..2 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
    }
    y[0]
}

/// First `λ` in `[lo, hi]` with `u(b; λ) = 0`, by a sign scan and bisection.
pub fn first_root(q: &dyn Fn(f64, f64) -> f64, lo: f64, hi: f64, a: f64, b: f64) -> Option<f64> {
    let u = |l: f64| shoot(&|t| q(l, t), a, b, 4000);
    let n = 400;
    let mut prev = (lo, u(lo));
    for i in 1..=n {
        let l = lo + (hi - lo) * i as f64 / n as f64;
        let cur = (l, u(l));
        if prev.1 * cur.1 <= 0.0 {
            let (mut x0, mut f0, mut x1) = (prev.0, prev.1, cur.0);
            while x1 - x0 > 1e-12 {
                let m = 0.5 * (x0 + x1);
                let fm = u(m);
                if f0 * fm <= 0.0 {
                    x1 = m;
                } else {
                    x0 = m;
                    f0 = fm;
                }
            }
            return Some(0.5 * (x0 + x1));
        }
        prev = cur;
    }
    None
}

/// Scalar Jacobi potential along the meridian of the warped family.
pub fn meridian_potential(l: f64, t: f64) -> f64 {
    l - l * l * t * t
}

/// Travel times from the grid node nearest the origin on a `size × size`
/// grid over `[−half, half]²`, constant wind `w`, 64 lattice headings.
pub struct WindGrid {
    pub size: usize,
    pub half: f64,
    pub cell: f64,
    pub time: Vec<f64>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

pub fn headings() -> Vec<(i64, i64)> {
    // the primitive lattice vectors with |v|² ≤ 29 are exactly 64 directions
    let mut out = Vec::new();
    for i in -6i64..=6 {
        for j in -6i64..=6 {
            if (i, j) != (0, 0) && i * i + j * j <= 29 && gcd(i, j) == 1 {
                out.push((i, j));
            }
        }
    }
    out
}

impl WindGrid {
    pub fn solve(size: usize, half: f64, w: [f64; 2]) -> Self {
        let cell = 2.0 * half / (size - 1) as f64;
        let hs = headings();
        let ww = w[0] * w[0] + w[1] * w[1];
        let costs: Vec<f64> = hs
            .iter()
            .map(|&(i, j)| {
                let len = ((i * i + j * j) as f64).sqrt();
                let u = [i as f64 / len, j as f64 / len];
                let uw = u[0] * w[0] + u[1] * w[1];
                let speed = uw + (uw * uw + 1.0 - ww).sqrt();
                len * cell / speed
            })
            .collect();
        let mut time = vec![f64::INFINITY; size * size];
        let c = (size - 1) / 2;
        let src = c * size + c;
        time[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, src));
        while let Some(Item(t, k)) = heap.pop() {
            if t > time[k] {
                continue;
            }
            let (ix, iy) = ((k / size) as i64, (k % size) as i64);
            for (&(di, dj), &cost) in hs.iter().zip(&costs) {
                let (nx, ny) = (ix + di, iy + dj);
                if nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64 {
                    continue;
                }
                let nk = nx as usize * size + ny as usize;
                let nt = t + cost;
                if nt < time[nk] {
                    time[nk] = nt;
                    heap.push(Item(nt, nk));
                }
            }
        }
        Self { size, half, cell, time }
    }

    fn origin(&self) -> f64 {
        -self.half + ((self.size - 1) / 2) as f64 * self.cell
    }

    /// Time to the node nearest `d` (relative to the source node) and that node's displacement.
    pub fn time_to(&self, d: [f64; 2]) -> (f64, [f64; 2]) {
        let o = self.origin();
        let idx = |v: f64| (((v + o - -self.half) / self.cell).round() as usize).min(self.size - 1);
        let (ix, iy) = (idx(d[0]), idx(d[1]));
        let node = [
            -self.half + ix as f64 * self.cell - o,
            -self.half + iy as f64 * self.cell - o,
        ];
        (self.time[ix * self.size + iy], node)
    }
}
