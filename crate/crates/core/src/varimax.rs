//! Orthogonal VARIMAX rotation of a loading matrix.
//!
//! Sweeps over all column pairs, each time applying the planar rotation that
//! maximizes the raw varimax criterion for that pair (Kaiser's closed form),
//! until a full sweep improves the criterion by less than the tolerance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarimaxOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Rotate row-normalized loadings and scale the rows back afterwards.
    pub kaiser_normalize: bool,
}

impl Default for VarimaxOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-12,
            kaiser_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Varimax {
    /// `loading * rotation`.
    pub rotated: DMatrix<f64>,
    /// Orthogonal `q x q` rotation.
    pub rotation: DMatrix<f64>,
    /// Criterion before the first sweep and after every sweep.
    pub criterion: Vec<f64>,
}

/// Raw varimax criterion: the summed per-column variance of squared loadings.
pub fn varimax_criterion(loading: &DMatrix<f64>) -> f64 {
    let n = loading.nrows() as f64;
    loading
        .column_iter()
        .map(|c| {
            let (s2, s4) = c.iter().fold((0.0, 0.0), |(s2, s4), x| {
                let sq = x * x;
                (s2 + sq, s4 + sq * sq)
            });
            s4 / n - (s2 / n) * (s2 / n)
        })
        .sum()
}

pub fn varimax(loading: &DMatrix<f64>, max_iter: usize, tol: f64) -> Varimax {
    varimax_with(
        loading,
        &VarimaxOptions {
            max_iter,
            tol,
            kaiser_normalize: false,
        },
    )
}

pub fn varimax_with(loading: &DMatrix<f64>, options: &VarimaxOptions) -> Varimax {
    let (n, q) = loading.shape();
    let weights: Vec<f64> = if options.kaiser_normalize {
        loading
            .row_iter()
            .map(|r| {
                let h = r.norm();
                if h > 0.0 {
                    h
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        vec![1.0; n]
    };
    let mut work = DMatrix::from_fn(n, q, |i, j| loading[(i, j)] / weights[i]);
    let mut rotation = DMatrix::<f64>::identity(q, q);
    let mut criterion = vec![varimax_criterion(&work)];

    if q > 1 {
        for _ in 0..options.max_iter {
            for p in 0..q - 1 {
                for s in p + 1..q {
                    let angle = pair_angle(&work, p, s);
                    if angle != 0.0 {
                        rotate_columns(&mut work, p, s, angle);
                        rotate_columns(&mut rotation, p, s, angle);
                    }
                }
            }
            let value = varimax_criterion(&work);
            let last = *criterion.last().expect("seeded above");
            criterion.push(value);
            if value - last < options.tol {
                break;
            }
        }
    }

    let rotated = DMatrix::from_fn(n, q, |i, j| work[(i, j)] * weights[i]);
    Varimax {
        rotated,
        rotation,
        criterion,
    }
}

/// Angle of the criterion-maximizing rotation of columns `p` and `s`.
fn pair_angle(m: &DMatrix<f64>, p: usize, s: usize) -> f64 {
    let n = m.nrows() as f64;
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in m.column(p).iter().zip(m.column(s).iter()) {
        let u = x * x - y * y;
        let v = 2.0 * x * y;
        a += u;
        b += v;
        c += u * u - v * v;
        d += 2.0 * u * v;
    }
    let num = d - 2.0 * a * b / n;
    let den = c - (a * a - b * b) / n;
    let scale = c.abs().max(d.abs()).max(f64::MIN_POSITIVE);
    if num.abs() <= 1e-14 * scale && den.abs() <= 1e-14 * scale {
        return 0.0;
    }
    if num.abs() <= 1e-14 * scale && den > 0.0 {
        return 0.0;
    }
    num.atan2(den) / 4.0
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, s: usize, angle: f64) {
    let (sin, cos) = angle.sin_cos();
    for i in 0..m.nrows() {
        let x = m[(i, p)];
        let y = m[(i, s)];
        m[(i, p)] = x * cos + y * sin;
        m[(i, s)] = -x * sin + y * cos;
    }
}
