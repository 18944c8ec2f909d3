//! The two-step estimator: principal components of the row and column
//! covariances give the loadings, projections of the zero-imputed data give
//! the factors and the signal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{covariances, Method};
use crate::error::{Axis, Error, Result};
use crate::panel::{demean, zero_impute, MaskedSeries};
use crate::spectra::{eigen_decomposition, scaled_loading, select_rank, EigenPairs, KMaxRule, DEFAULT_FLOOR_RATIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Centre every cell on its observed-period mean before estimating.
    pub demean: bool,
    pub method: Method,
    pub k_max: KMaxRule,
    pub min_overlap: u64,
    /// Eigenvalues within `floor_ratio * λ₁` of zero count as exactly zero
    /// in the eigen-ratio search.
    pub floor_ratio: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            demean: true,
            method: Method::Reweighted,
            k_max: KMaxRule::Half,
            min_overlap: 1,
            floor_ratio: DEFAULT_FLOOR_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    /// `a x k` row loadings with `(1/a) R̂ᵀR̂ = I`.
    pub r_hat: DMatrix<f64>,
    /// `b x r` column loadings with `(1/b) ĈᵀĈ = I`.
    pub c_hat: DMatrix<f64>,
    /// `k x r` factor matrix per period.
    pub f_hat: Vec<DMatrix<f64>>,
    /// `a x b` estimated signal per period, on the centred scale.
    pub s_hat: Vec<DMatrix<f64>>,
    /// Leading `k` eigenvalues of the row covariance.
    pub eig_r: DVector<f64>,
    /// Leading `r` eigenvalues of the column covariance.
    pub eig_c: DVector<f64>,
    pub k: usize,
    pub r: usize,
    pub method: Method,
    /// Cell means removed before estimation, if the data were centred.
    pub means: Option<DMatrix<f64>>,
}

/// Covariance spectra of a series, from which fits of any rank are cheap.
#[derive(Debug, Clone)]
pub struct Decomposition {
    rows: usize,
    cols: usize,
    imputed: Vec<DMatrix<f64>>,
    means: Option<DMatrix<f64>>,
    spectrum_r: EigenPairs,
    spectrum_c: EigenPairs,
    options: FitOptions,
}

impl Decomposition {
    pub fn new(series: &MaskedSeries, options: &FitOptions) -> Result<Self> {
        let (centred, means) = if options.demean {
            let (c, m) = demean(series)?;
            (c, Some(m))
        } else {
            (series.clone(), None)
        };
        let cov = covariances(&centred, options.method, options.min_overlap)?;
        Ok(Self {
            rows: series.rows(),
            cols: series.cols(),
            imputed: zero_impute(&centred),
            means,
            spectrum_r: eigen_decomposition(&cov.m_r)?,
            spectrum_c: eigen_decomposition(&cov.m_c)?,
            options: options.clone(),
        })
    }

    /// All `a` eigenvalues of the row covariance, descending.
    pub fn row_eigenvalues(&self) -> &[f64] {
        self.spectrum_r.eigenvalues.as_slice()
    }

    /// All `b` eigenvalues of the column covariance, descending.
    pub fn col_eigenvalues(&self) -> &[f64] {
        self.spectrum_c.eigenvalues.as_slice()
    }

    pub fn options(&self) -> &FitOptions {
        &self.options
    }

    /// Eigen-ratio estimates `(k̂, r̂)`, each axis searched independently.
    pub fn select_ranks(&self) -> Result<(usize, usize)> {
        let o = &self.options;
        let k = select_rank(self.row_eigenvalues(), o.k_max.bound(self.rows), o.floor_ratio)?;
        let r = select_rank(self.col_eigenvalues(), o.k_max.bound(self.cols), o.floor_ratio)?;
        Ok((k, r))
    }

    pub fn fit(&self, ranks: Option<(usize, usize)>) -> Result<FactorFit> {
        self.fit_inner(ranks, true)
    }

    /// Like [`fit`](Self::fit) but leaves `s_hat` empty; the signal is the
    /// largest part of a fit and simulation metrics never read it.
    pub(crate) fn fit_inner(&self, ranks: Option<(usize, usize)>, with_signal: bool) -> Result<FactorFit> {
        let (k, r) = match ranks {
            Some(kr) => kr,
            None => self.select_ranks()?,
        };
        for (axis, q, dim) in [(Axis::Row, k, self.rows), (Axis::Column, r, self.cols)] {
            if q == 0 || q > dim {
                return Err(Error::RankTooLarge { axis, requested: q, dim });
            }
        }
        let top_r = self.spectrum_r.truncate(k);
        let top_c = self.spectrum_c.truncate(r);
        let r_hat = scaled_loading(&top_r, self.rows);
        let c_hat = scaled_loading(&top_c, self.cols);
        let f_hat = project_factors(&r_hat, &c_hat, &self.imputed);
        let s_hat = if with_signal {
            f_hat.iter().map(|f| &r_hat * f * c_hat.transpose()).collect()
        } else {
            Vec::new()
        };
        Ok(FactorFit {
            r_hat,
            c_hat,
            f_hat,
            s_hat,
            eig_r: top_r.eigenvalues,
            eig_c: top_c.eigenvalues,
            k,
            r,
            method: self.options.method,
            means: self.means.clone(),
        })
    }
}

/// Runs the full pipeline: optional centring, zero imputation, covariances,
/// eigendecomposition, loadings, factors and signal. With `ranks = None` both
/// ranks come from the eigen-ratio rule.
pub fn fit(series: &MaskedSeries, ranks: Option<(usize, usize)>, options: &FitOptions) -> Result<FactorFit> {
    Decomposition::new(series, options)?.fit(ranks)
}

fn project_factors(r_hat: &DMatrix<f64>, c_hat: &DMatrix<f64>, imputed: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let scale = (r_hat.nrows() * c_hat.nrows()) as f64;
    let rt = r_hat.transpose();
    imputed.iter().map(|y| &rt * y * c_hat / scale).collect()
}

fn check_loadings(r_hat: &DMatrix<f64>, c_hat: &DMatrix<f64>, series: &MaskedSeries) -> Result<()> {
    if r_hat.nrows() != series.rows() || c_hat.nrows() != series.cols() {
        return Err(Error::DimensionMismatch(format!(
            "loadings {:?}/{:?} do not fit a {}x{} series",
            r_hat.shape(),
            c_hat.shape(),
            series.rows(),
            series.cols()
        )));
    }
    Ok(())
}

/// `F̂_t = (1/(ab)) R̂ᵀ Ỹ_t Ĉ` on the zero-imputed data.
pub fn estimate_factors(r_hat: &DMatrix<f64>, c_hat: &DMatrix<f64>, series: &MaskedSeries) -> Result<Vec<DMatrix<f64>>> {
    check_loadings(r_hat, c_hat, series)?;
    Ok(project_factors(r_hat, c_hat, &zero_impute(series)))
}

/// `Ŝ_t = (1/(ab)) R̂R̂ᵀ Ỹ_t ĈĈᵀ`, evaluated as `R̂ F̂_t Ĉᵀ`.
pub fn estimate_signal(r_hat: &DMatrix<f64>, c_hat: &DMatrix<f64>, series: &MaskedSeries) -> Result<Vec<DMatrix<f64>>> {
    let factors = estimate_factors(r_hat, c_hat, series)?;
    let ct = c_hat.transpose();
    Ok(factors.iter().map(|f| r_hat * f * &ct).collect())
}

/// Completes the panel: observed cells keep their values, missing cells take
/// the estimated signal plus the cell mean when the fit centred the data.
pub fn impute(fit: &FactorFit, series: &MaskedSeries) -> Result<Vec<DMatrix<f64>>> {
    let shape = (series.rows(), series.cols());
    if fit.s_hat.len() != series.len() || fit.s_hat.iter().any(|s| s.shape() != shape) {
        return Err(Error::DimensionMismatch(format!(
            "fit holds {} signal periods, series has {} periods of {:?}",
            fit.s_hat.len(),
            series.len(),
            shape
        )));
    }
    if fit.means.as_ref().is_some_and(|m| m.shape() != shape) {
        return Err(Error::DimensionMismatch("cell means do not match the series".into()));
    }
    Ok(series
        .values()
        .iter()
        .zip(series.mask())
        .zip(&fit.s_hat)
        .map(|((v, w), s)| {
            DMatrix::from_fn(shape.0, shape.1, |i, j| {
                if w[(i, j)] {
                    v[(i, j)]
                } else {
                    s[(i, j)] + fit.means.as_ref().map_or(0.0, |m| m[(i, j)])
                }
            })
        })
        .collect())
}
