//! Accuracy metrics that need the true model: rotation matrices linking the
//! estimates to the truth, the projector space distance, factor errors and
//! normality diagnostics for loading errors.
//!
//! Loadings are identified only up to an invertible transform, so loading
//! accuracy is always measured on column spaces or after applying the
//! rotations, never on raw entries.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Axis, Error, Result};
use crate::estimator::FactorFit;

/// Borrowed view of a known data-generating model.
#[derive(Debug, Clone, Copy)]
pub struct ModelTruth<'a> {
    pub r: &'a DMatrix<f64>,
    pub c: &'a DMatrix<f64>,
    pub factors: &'a [DMatrix<f64>],
}

/// `H_R` (`k x k`) and `H_C` (`r x r`) with `R̂ ≈ R H_R`, `Ĉ ≈ C H_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPair {
    pub h_r: DMatrix<f64>,
    pub h_c: DMatrix<f64>,
}

/// Reciprocal condition numbers below this make a rotation unusable.
pub const MIN_RCOND: f64 = 1e-10;

/// `H_R = (1/(abT)) Σ_t F_t CᵀC F_tᵀ RᵀR̂ V_R⁻¹` and
/// `H_C = (1/(abT)) Σ_t F_tᵀ RᵀR F_t CᵀĈ V_C⁻¹`, with `V` the fit's
/// leading eigenvalues.
pub fn rotations(truth: &ModelTruth<'_>, fit: &FactorFit) -> Result<RotationPair> {
    let (a, k) = truth.r.shape();
    let (b, r) = truth.c.shape();
    let len = truth.factors.len();
    if fit.r_hat.shape() != (a, k) || fit.c_hat.shape() != (b, r) {
        return Err(Error::DimensionMismatch(format!(
            "fit loadings {:?}/{:?} vs true loadings {:?}/{:?}",
            fit.r_hat.shape(),
            fit.c_hat.shape(),
            (a, k),
            (b, r)
        )));
    }
    if len == 0 || truth.factors.iter().any(|f| f.shape() != (k, r)) {
        return Err(Error::DimensionMismatch(format!("true factors must be {len} matrices of {k}x{r}")));
    }
    let v_r = inverse_diagonal(&fit.eig_r, Axis::Row)?;
    let v_c = inverse_diagonal(&fit.eig_c, Axis::Column)?;

    let ctc = truth.c.transpose() * truth.c;
    let rtr = truth.r.transpose() * truth.r;
    let mut acc_r = DMatrix::<f64>::zeros(k, k);
    let mut acc_c = DMatrix::<f64>::zeros(r, r);
    for f in truth.factors {
        acc_r += f * &ctc * f.transpose();
        acc_c += f.transpose() * &rtr * f;
    }
    let scale = (a * b * len) as f64;
    let h_r = acc_r * truth.r.transpose() * &fit.r_hat * v_r / scale;
    let h_c = acc_c * truth.c.transpose() * &fit.c_hat * v_c / scale;
    Ok(RotationPair { h_r, h_c })
}

fn inverse_diagonal(eig: &DVector<f64>, axis: Axis) -> Result<DMatrix<f64>> {
    let lead = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (index, &value) in eig.iter().enumerate() {
        if !(value > f64::EPSILON * lead) {
            return Err(Error::SingularEigenvalues { axis, index, value });
        }
    }
    Ok(DMatrix::from_diagonal(&eig.map(|x| 1.0 / x)))
}

/// Which matrix norm [`space_distance_with`] applies to the projector difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceNorm {
    #[default]
    Spectral,
    Frobenius,
}

/// Orthonormal basis of the column space via a thin SVD.
fn column_basis(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, q) = m.shape();
    if q == 0 || q > n {
        return Err(Error::RankDeficientInput { rank: q.min(n), cols: q });
    }
    let svd = SVD::new(m.clone(), true, false);
    let top = svd.singular_values.max();
    let cutoff = top * n.max(q) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < q {
        return Err(Error::RankDeficientInput { rank, cols: q });
    }
    Ok(svd.u.expect("requested U"))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// `‖P_Â − P_A‖₂`, the spectral distance between the orthogonal projectors
/// onto the two column spaces. Lies in `[0, 1]`.
pub fn space_distance(a_hat: &DMatrix<f64>, a_true: &DMatrix<f64>) -> Result<f64> {
    space_distance_with(a_hat, a_true, DistanceNorm::Spectral)
}

pub fn space_distance_with(a_hat: &DMatrix<f64>, a_true: &DMatrix<f64>, norm: DistanceNorm) -> Result<f64> {
    if a_hat.nrows() != a_true.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} rows",
            a_hat.nrows(),
            a_true.nrows()
        )));
    }
    let q1 = column_basis(a_hat)?;
    let q2 = column_basis(a_true)?;
    Ok(match norm {
        // For orthogonal projectors ‖P₁ − P₂‖ = max(‖(I − P₁)Q₂‖, ‖(I − P₂)Q₁‖);
        // the residual form avoids the cancellation in 1 − cos²θ.
        DistanceNorm::Spectral => {
            let r2 = &q2 - &q1 * (q1.transpose() * &q2);
            let r1 = &q1 - &q2 * (q2.transpose() * &q1);
            spectral_norm(&r2).max(spectral_norm(&r1))
        }
        DistanceNorm::Frobenius => (&q1 * q1.transpose() - &q2 * q2.transpose()).norm(),
    })
}

fn checked_inverse(h: &DMatrix<f64>, axis: Axis) -> Result<DMatrix<f64>> {
    let sv = h.clone().singular_values();
    let rcond = if sv.max() > 0.0 { sv.min() / sv.max() } else { 0.0 };
    if !(rcond >= MIN_RCOND) {
        return Err(Error::SingularRotation { axis, rcond });
    }
    h.clone()
        .try_inverse()
        .ok_or(Error::SingularRotation { axis, rcond })
}

/// `‖F̂_t − H_R⁻¹ F_t H_C⁻ᵀ‖₂` for every period.
pub fn factor_error(fit: &FactorFit, truth: &ModelTruth<'_>, rotations: &RotationPair) -> Result<Vec<f64>> {
    if fit.f_hat.len() != truth.factors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated vs {} true factor periods",
            fit.f_hat.len(),
            truth.factors.len()
        )));
    }
    let inv_r = checked_inverse(&rotations.h_r, Axis::Row)?;
    let inv_c_t = checked_inverse(&rotations.h_c, Axis::Column)?.transpose();
    fit.f_hat
        .iter()
        .zip(truth.factors)
        .map(|(est, f)| {
            let target = &inv_r * f * &inv_c_t;
            if target.shape() != est.shape() {
                return Err(Error::DimensionMismatch("factor shapes differ".into()));
            }
            Ok(spectral_norm(&(est - target)))
        })
        .collect()
}

/// Row `row` of `R̂ − R H_R`, i.e. `R̂_row − H_Rᵀ R_row`.
pub fn row_loading_error(fit: &FactorFit, truth: &ModelTruth<'_>, rotations: &RotationPair, row: usize) -> Result<DVector<f64>> {
    if row >= fit.r_hat.nrows() || rotations.h_r.nrows() != truth.r.ncols() {
        return Err(Error::DimensionMismatch(format!("row {row} out of range")));
    }
    let est = fit.r_hat.row(row).transpose();
    let target = rotations.h_r.transpose() * truth.r.row(row).transpose();
    Ok(est - target)
}

/// Moment summary and QQ data of replicated draws, one column per coordinate.
///
/// Skewness is `m₃ / m₂^{3/2}` and excess kurtosis `m₄ / m₂² − 3` with
/// central moments taken over `n`; the standardizing spread is the `n − 1`
/// sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalitySummary {
    pub reps: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    /// Sorted standardized draws per coordinate.
    pub standardized: Vec<Vec<f64>>,
}

pub const MIN_NORMALITY_REPS: usize = 30;

pub fn normality_summary(draws: &DMatrix<f64>) -> Result<NormalitySummary> {
    let (n, k) = draws.shape();
    if n < MIN_NORMALITY_REPS {
        return Err(Error::TooFewReplications {
            got: n,
            min: MIN_NORMALITY_REPS,
        });
    }
    let nf = n as f64;
    let mut out = NormalitySummary {
        reps: n,
        mean: Vec::with_capacity(k),
        sd: Vec::with_capacity(k),
        skewness: Vec::with_capacity(k),
        excess_kurtosis: Vec::with_capacity(k),
        standardized: Vec::with_capacity(k),
    };
    for (coordinate, col) in draws.column_iter().enumerate() {
        let mean = col.sum() / nf;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &x in col.iter() {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let sd = (m2 / (nf - 1.0)).sqrt();
        if !(sd > 1e-14 * mean.abs().max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateDraws { coordinate });
        }
        let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
        let mut z: Vec<f64> = col.iter().map(|x| (x - mean) / sd).collect();
        z.sort_by(f64::total_cmp);
        out.mean.push(mean);
        out.sd.push(sd);
        out.skewness.push(m3 / m2.powf(1.5));
        out.excess_kurtosis.push(m4 / (m2 * m2) - 3.0);
        out.standardized.push(z);
    }
    Ok(out)
}

/// `(theoretical, empirical)` quantile pairs for one coordinate, using the
/// plotting positions `(i − ½)/n`.
pub fn qq_points(summary: &NormalitySummary, coordinate: usize) -> Vec<(f64, f64)> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z = &summary.standardized[coordinate];
    let n = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &e)| (normal.inverse_cdf((i as f64 + 0.5) / n), e))
        .collect()
}
