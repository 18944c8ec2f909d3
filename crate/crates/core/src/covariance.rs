//! Row and column second-moment matrices of a zero-imputed series.
//!
//! The re-weighted estimator divides each accumulated cross product by the
//! number of `(t, m)` pairs at which both lines were observed, which undoes
//! the attenuation zero imputation causes. The direct estimator divides
//! everything by `abT` and serves as the naive baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::panel::{overlap_counts, zero_impute, MaskedSeries, OverlapCounts};

/// How the covariance matrices are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Overlap re-weighting (`M̂_R`, `M̂_C` with `1/|Q|` weights).
    Reweighted,
    /// Plain zero imputation scaled by `1/(abT)`.
    Direct,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Reweighted, Method::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Reweighted => "reweighted",
            Method::Direct => "direct",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reweighted" => Ok(Method::Reweighted),
            "direct" => Ok(Method::Direct),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovPair {
    /// `a x a` row covariance.
    pub m_r: DMatrix<f64>,
    /// `b x b` column covariance.
    pub m_c: DMatrix<f64>,
    pub method: Method,
}

impl CovPair {
    fn new(m_r: DMatrix<f64>, m_c: DMatrix<f64>, method: Method) -> Self {
        Self {
            m_r: symmetrize(m_r),
            m_c: symmetrize(m_c),
            method,
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `X Xᵀ` for a column-major `rows x inner` matrix given as a flat slice.
fn gram(x: &[f64], rows: usize, inner: usize) -> DMatrix<f64> {
    assert_eq!(x.len(), rows * inner);
    let mut out = DMatrix::<f64>::zeros(rows, rows);
    if inner == 0 {
        return out;
    }
    // SAFETY: all pointers index inside `x` (rows x inner, column-major) and
    // `out` (rows x rows, column-major) with the strides given.
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            rows,
            1.0,
            x.as_ptr(),
            1,
            rows as isize,
            x.as_ptr(),
            rows as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            1,
            rows as isize,
        );
    }
    out
}

/// Unnormalized `Σ_t Ỹ_t Ỹ_tᵀ` and `Σ_t Ỹ_tᵀ Ỹ_t`.
pub(crate) fn cross_products(imputed: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b) = imputed[0].shape();
    let len = imputed.len();
    // Column-major a x (T b): the periods laid side by side.
    let mut wide = Vec::with_capacity(a * b * len);
    // Column-major b x (T a): the transposed periods laid side by side.
    let mut tall = Vec::with_capacity(a * b * len);
    for y in imputed {
        wide.extend_from_slice(y.as_slice());
        tall.extend_from_slice(y.transpose().as_slice());
    }
    (gram(&wide, a, b * len), gram(&tall, b, a * len))
}

fn check_overlaps(counts: &DMatrix<u64>, axis: Axis, min: u64) -> Result<()> {
    let n = counts.nrows();
    for i in 0..n {
        for j in i..n {
            let count = counts[(i, j)];
            if count < min {
                return Err(Error::InsufficientOverlap {
                    axis,
                    i,
                    j,
                    count,
                    min,
                });
            }
        }
    }
    Ok(())
}

/// Overlap re-weighted covariances.
///
/// `m_r[i][j] = (1/a) (1/|Q_R,ij|) Σ_{(t,m) ∈ Q_R,ij} Y_t[i,m] Y_t[j,m]`, and
/// analogously for `m_c` with `1/b`. Fails if any overlap count is below
/// `min_overlap`.
pub fn reweighted_covariances(
    series: &MaskedSeries,
    overlaps: &OverlapCounts,
    min_overlap: u64,
) -> Result<CovPair> {
    let (a, b) = (series.rows(), series.cols());
    if overlaps.row.shape() != (a, a) || overlaps.col.shape() != (b, b) {
        return Err(Error::DimensionMismatch(format!(
            "overlap counts {:?}/{:?} do not match a {a}x{b} series",
            overlaps.row.shape(),
            overlaps.col.shape()
        )));
    }
    let min = min_overlap.max(1);
    check_overlaps(&overlaps.row, Axis::Row, min)?;
    check_overlaps(&overlaps.col, Axis::Column, min)?;

    let (g_r, g_c) = cross_products(&zero_impute(series));
    let m_r = g_r.zip_map(&overlaps.row, |g, q| g / (a as f64 * q as f64));
    let m_c = g_c.zip_map(&overlaps.col, |g, q| g / (b as f64 * q as f64));
    Ok(CovPair::new(m_r, m_c, Method::Reweighted))
}

/// Zero-imputation covariances `(1/(abT)) Σ_t Ỹ_t Ỹ_tᵀ` and `(1/(abT)) Σ_t Ỹ_tᵀ Ỹ_t`.
pub fn direct_covariances(series: &MaskedSeries) -> CovPair {
    let scale = (series.rows() * series.cols() * series.len()) as f64;
    let (g_r, g_c) = cross_products(&zero_impute(series));
    CovPair::new(g_r / scale, g_c / scale, Method::Direct)
}

/// Dispatches on `method`, computing overlap counts when needed.
pub fn covariances(series: &MaskedSeries, method: Method, min_overlap: u64) -> Result<CovPair> {
    match method {
        Method::Reweighted => {
            reweighted_covariances(series, &overlap_counts(series), min_overlap)
        }
        Method::Direct => Ok(direct_covariances(series)),
    }
}
