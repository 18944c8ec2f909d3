//! Symmetric eigendecomposition, canonical eigenvector signs and the
//! eigen-ratio rank selector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest relative asymmetry `max|m - mᵀ| / max|m|` accepted as symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Eigenvalues in descending order with their unit eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// The leading `q` pairs.
    pub fn truncate(&self, q: usize) -> EigenPairs {
        EigenPairs {
            eigenvalues: self.eigenvalues.rows(0, q).into_owned(),
            eigenvectors: self.eigenvectors.columns(0, q).into_owned(),
        }
    }
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Flips `v` so that its largest-magnitude entry is positive. Entries within
/// `1e-12` of the largest magnitude count as tied; the lowest index wins.
pub fn canonical_sign(v: &mut [f64]) {
    let biggest = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if biggest == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .position(|x| x.abs() >= biggest - 1e-12 * biggest)
        .expect("non-empty vector");
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Full decomposition of a symmetric matrix, eigenvalues descending.
pub fn eigen_decomposition(m: &DMatrix<f64>) -> Result<EigenPairs> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a non-empty square matrix, got {:?}",
            m.shape()
        )));
    }
    let asymmetry = relative_asymmetry(m);
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry });
    }
    // nalgebra's SymmetricEigen can leave residuals near 1e-8 relative on
    // small indefinite inputs; faer's tridiagonal solver stays at rounding level.
    let n = m.nrows();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|_| Error::EigenNoConvergence { dim: n })?;
    let (values, vectors) = (eig.S(), eig.U());
    // faer returns ascending order; reverse, keeping the solver's order among ties.
    let order: Vec<usize> = (0..n).rev().collect();
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| values[i]));
    let mut eigenvectors = DMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    for mut col in eigenvectors.column_iter_mut() {
        canonical_sign(col.as_mut_slice());
    }
    Ok(EigenPairs {
        eigenvalues,
        eigenvectors,
    })
}

/// The `q` largest eigenpairs of symmetric `m`.
pub fn top_eigenpairs(m: &DMatrix<f64>, q: usize) -> Result<EigenPairs> {
    if q == 0 || q > m.nrows() {
        return Err(Error::RankDeficient {
            requested: q,
            dim: m.nrows(),
        });
    }
    Ok(eigen_decomposition(m)?.truncate(q))
}

/// Upper bound on the number of factors searched by [`select_rank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KMaxRule {
    /// `⌈n/2⌉`
    #[default]
    Half,
    /// `⌈n/3⌉`
    Third,
    Fixed(usize),
}

impl KMaxRule {
    /// Bound for an `n x n` matrix, clipped to `n - 1` so that `λ_{k+1}` exists.
    pub fn bound(self, n: usize) -> usize {
        let raw = match self {
            KMaxRule::Half => n.div_ceil(2),
            KMaxRule::Third => n.div_ceil(3),
            KMaxRule::Fixed(k) => k,
        };
        raw.min(n.saturating_sub(1))
    }
}

impl std::str::FromStr for KMaxRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half" => Ok(KMaxRule::Half),
            "third" => Ok(KMaxRule::Third),
            other => other
                .parse()
                .map(KMaxRule::Fixed)
                .map_err(|_| Error::InvalidConfig(format!("bad k_max rule {other:?}"))),
        }
    }
}

/// Eigenvalues below `floor_ratio * λ₁` are treated as exact zeros.
pub const DEFAULT_FLOOR_RATIO: f64 = 1e-12;

/// Eigen-ratio estimate `argmax_{1 ≤ j ≤ k_max} λ_j / λ_{j+1}` (1-based).
///
/// A successor with `|λ_{j+1}| ≤ floor_ratio * λ₁` is numerically zero: its
/// ratio is unbounded, so the first such `j` wins outright (exact rank). A
/// clearly negative successor, possible for the re-weighted matrix, ends the
/// search without candidacy. Ties resolve to the smallest `j`.
pub fn select_rank(eigenvalues: &[f64], k_max: usize, floor_ratio: f64) -> Result<usize> {
    let leading = *eigenvalues.first().ok_or(Error::DegenerateSpectrum { leading: 0.0 })?;
    if !(leading > 0.0) {
        return Err(Error::DegenerateSpectrum { leading });
    }
    if k_max == 0 {
        return Ok(1);
    }
    if eigenvalues.len() < k_max + 1 {
        return Err(Error::DimensionMismatch(format!(
            "k_max = {k_max} needs {} eigenvalues, got {}",
            k_max + 1,
            eigenvalues.len()
        )));
    }
    let floor = floor_ratio * leading;
    let mut best = (1, f64::NEG_INFINITY);
    for j in 1..=k_max {
        let next = eigenvalues[j];
        if next.abs() <= floor {
            return Ok(j);
        }
        if next < 0.0 {
            break;
        }
        let ratio = eigenvalues[j - 1] / next;
        if ratio > best.1 {
            best = (j, ratio);
        }
    }
    Ok(best.0)
}

/// Ratios `λ_j / λ_{j+1}` for `j = 1..=k_max` as [`select_rank`] sees them:
/// infinite against a numerically zero successor, `None` once the search
/// has stopped.
pub fn eigen_ratios(eigenvalues: &[f64], k_max: usize, floor_ratio: f64) -> Vec<Option<f64>> {
    let floor = eigenvalues.first().map_or(0.0, |&l| floor_ratio * l);
    let mut stopped = false;
    (1..=k_max.min(eigenvalues.len().saturating_sub(1)))
        .map(|j| {
            if stopped {
                return None;
            }
            let next = eigenvalues[j];
            if next.abs() <= floor {
                stopped = true;
                Some(f64::INFINITY)
            } else if next < 0.0 {
                stopped = true;
                None
            } else {
                Some(eigenvalues[j - 1] / next)
            }
        })
        .collect()
}

/// `√n` times the eigenvectors, so that `(1/n) LᵀL = I`.
pub fn scaled_loading(pairs: &EigenPairs, dim_scale: usize) -> DMatrix<f64> {
    &pairs.eigenvectors * (dim_scale as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_invariants(m: &DMatrix<f64>, pairs: &EigenPairs) {
        let lead = pairs.eigenvalues.amax().max(1.0);
        for (i, v) in pairs.eigenvectors.column_iter().enumerate() {
            assert!((v.norm() - 1.0).abs() <= 1e-12);
            let resid = m * v - v * pairs.eigenvalues[i];
            assert!(resid.norm() <= 1e-10 * lead, "residual {}", resid.norm());
            for (j, w) in pairs.eigenvectors.column_iter().enumerate() {
                if i != j {
                    assert!(v.dot(&w).abs() <= 1e-10);
                }
            }
        }
        for w in pairs.eigenvalues.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| {
            let m = DMatrix::from_vec(n, n, v);
            &m + m.transpose()
        })
    }

    #[test]
    fn identity_degenerate_spectrum() {
        let m = DMatrix::<f64>::identity(3, 3);
        let p = top_eigenpairs(&m, 2).unwrap();
        assert_eq!(p.eigenvalues.as_slice(), &[1.0, 1.0]);
        check_invariants(&m, &p);
    }

    #[test]
    fn diagonal_leading_pair() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0, 1.0]));
        let p = top_eigenpairs(&m, 1).unwrap();
        assert_eq!(p.eigenvalues[0], 5.0);
        assert_eq!(p.eigenvectors.column(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = top_eigenpairs(&m, 2).unwrap();
        assert!((p.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((p.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v1 = p.eigenvectors.column(0);
        let v2 = p.eigenvectors.column(1);
        assert!((v1[0] - h).abs() < 1e-14 && (v1[1] - h).abs() < 1e-14);
        // tie in magnitude, so the first entry carries the positive sign
        assert!((v2[0] - h).abs() < 1e-14 && (v2[1] + h).abs() < 1e-14);

        let l = scaled_loading(&p, 2);
        for col in l.column_iter() {
            assert!((col.norm() - 2f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn errors() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(top_eigenpairs(&m, 1), Err(Error::NotSymmetric { .. })));
        let m = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(top_eigenpairs(&m, 3), Err(Error::RankDeficient { requested: 3, dim: 2 })));
        assert!(matches!(
            select_rank(&[0.0, 0.0], 1, DEFAULT_FLOOR_RATIO),
            Err(Error::DegenerateSpectrum { .. })
        ));
        assert!(select_rank(&[3.0, 1.0], 2, DEFAULT_FLOOR_RATIO).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(select_rank(&[12.0, 6.0, 1.0, 0.5, 0.4], 4, DEFAULT_FLOOR_RATIO).unwrap(), 2);
        assert_eq!(select_rank(&[10.0, 1.0, 0.9, 0.8], 3, DEFAULT_FLOOR_RATIO).unwrap(), 1);
        // ties go to the smallest j
        assert_eq!(select_rank(&[8.0, 4.0, 2.0, 1.0], 3, DEFAULT_FLOOR_RATIO).unwrap(), 1);
        // exact rank two: the search stops before the numerically zero tail
        assert_eq!(select_rank(&[5.0, 2.0, 1e-17, 1e-18], 3, DEFAULT_FLOOR_RATIO).unwrap(), 2);
        assert_eq!(select_rank(&[5.0, 0.0, 0.0], 2, DEFAULT_FLOOR_RATIO).unwrap(), 1);
        // negative tail from an indefinite re-weighted matrix
        assert_eq!(select_rank(&[9.0, 3.0, -0.5], 2, DEFAULT_FLOOR_RATIO).unwrap(), 1);
    }

    #[test]
    fn ratio_trace_truncates() {
        let r = eigen_ratios(&[12.0, 6.0, 1.0, 0.0, 0.0], 4, DEFAULT_FLOOR_RATIO);
        assert_eq!(r, vec![Some(2.0), Some(6.0), Some(f64::INFINITY), None]);
    }

    #[test]
    fn kmax_rules() {
        assert_eq!(KMaxRule::Half.bound(50), 25);
        assert_eq!(KMaxRule::Half.bound(5), 3);
        assert_eq!(KMaxRule::Third.bound(10), 4);
        assert_eq!(KMaxRule::Fixed(8).bound(4), 3);
        assert_eq!(KMaxRule::Half.bound(1), 0);
        assert_eq!("third".parse::<KMaxRule>().unwrap(), KMaxRule::Third);
        assert_eq!("7".parse::<KMaxRule>().unwrap(), KMaxRule::Fixed(7));
    }

    #[test]
    fn identity_loading_normalization() {
        let p = EigenPairs {
            eigenvalues: DVector::from_element(4, 1.0),
            eigenvectors: DMatrix::identity(4, 4),
        };
        let l = scaled_loading(&p, 4);
        assert!(l.column_iter().all(|c| (c.norm() - 2.0).abs() < 1e-15));
        assert_eq!(l.transpose() * &l / 4.0, DMatrix::identity(4, 4));
    }

    proptest! {
        #[test]
        fn decomposition_invariants(m in (1usize..8).prop_flat_map(symmetric)) {
            let p = eigen_decomposition(&m).unwrap();
            check_invariants(&m, &p);
            let trace = m.trace();
            let total: f64 = p.eigenvalues.iter().sum();
            prop_assert!((trace - total).abs() <= 1e-9 * m.amax().max(1.0) * m.nrows() as f64);
            let l = scaled_loading(&p, m.nrows());
            let gram = l.transpose() * &l / m.nrows() as f64;
            prop_assert!((gram - DMatrix::identity(m.nrows(), m.nrows())).amax() <= 1e-10);
        }

        #[test]
        fn psd_input_has_nonnegative_spectrum(x in prop::collection::vec(-3.0f64..3.0, 30)) {
            let x = DMatrix::from_vec(5, 6, x);
            let m = &x * x.transpose();
            let p = eigen_decomposition(&m).unwrap();
            prop_assert!(p.eigenvalues.min() >= -1e-10 * p.eigenvalues[0].max(1e-300));
        }

        #[test]
        fn canonical_sign_ignores_input_sign(v in prop::collection::vec(-1.0f64..1.0, 1..10)) {
            let mut a = v.clone();
            let mut b: Vec<f64> = v.iter().map(|x| -x).collect();
            canonical_sign(&mut a);
            canonical_sign(&mut b);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn rank_is_scale_free(
            mut vals in prop::collection::vec(0.01f64..100.0, 2..12),
            scale in 1e-6f64..1e6,
        ) {
            vals.sort_by(|a, b| b.total_cmp(a));
            let k_max = vals.len() - 1;
            let scaled: Vec<f64> = vals.iter().map(|v| v * scale).collect();
            let k1 = select_rank(&vals, k_max, DEFAULT_FLOOR_RATIO).unwrap();
            let k2 = select_rank(&scaled, k_max, DEFAULT_FLOOR_RATIO).unwrap();
            // Scaling can only move a ratio by rounding; exact ties aside the argmax agrees.
            let ratios: Vec<f64> = vals.windows(2).map(|w| w[0] / w[1]).collect();
            let best = ratios[k1 - 1];
            prop_assert!(k1 == k2 || (ratios[k2 - 1] - best).abs() <= 1e-12 * best);
        }
    }
}
