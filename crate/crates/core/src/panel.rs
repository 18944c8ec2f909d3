//! Partially observed matrix time series and observation-pattern bookkeeping.
//!
//! A [`MaskedSeries`] holds `T` matrices of shape `a x b` together with a
//! parallel boolean mask (`true` = observed). Values stored under a `false`
//! mask entry are placeholders: every computation in this crate reads them
//! through [`zero_impute`] or through mask-filtered sums, so a placeholder
//! never reaches an estimate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSeries {
    rows: usize,
    cols: usize,
    values: Vec<DMatrix<f64>>,
    mask: Vec<DMatrix<bool>>,
}

impl MaskedSeries {
    /// Builds a series from per-period values and masks.
    ///
    /// Every observed value must be finite; placeholders under the mask may be
    /// anything.
    pub fn new(values: Vec<DMatrix<f64>>, mask: Vec<DMatrix<bool>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidShape("series needs at least one period".into()));
        }
        if values.len() != mask.len() {
            return Err(Error::InvalidShape(format!(
                "{} value matrices but {} mask matrices",
                values.len(),
                mask.len()
            )));
        }
        let (rows, cols) = values[0].shape();
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape("matrices must be at least 1x1".into()));
        }
        for (t, (v, w)) in values.iter().zip(&mask).enumerate() {
            if v.shape() != (rows, cols) || w.shape() != (rows, cols) {
                return Err(Error::InvalidShape(format!(
                    "period {t} has shapes {:?}/{:?}, expected {:?}",
                    v.shape(),
                    w.shape(),
                    (rows, cols)
                )));
            }
            for j in 0..cols {
                for i in 0..rows {
                    if w[(i, j)] && !v[(i, j)].is_finite() {
                        return Err(Error::NonFiniteValue { t, row: i, col: j });
                    }
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            values,
            mask,
        })
    }

    pub fn fully_observed(values: Vec<DMatrix<f64>>) -> Result<Self> {
        let mask = values
            .iter()
            .map(|v| DMatrix::from_element(v.nrows(), v.ncols(), true))
            .collect();
        Self::new(values, mask)
    }

    /// Row dimension `a`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Column dimension `b`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of periods `T`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn mask(&self) -> &[DMatrix<bool>] {
        &self.mask
    }

    pub fn is_observed(&self, t: usize, i: usize, j: usize) -> bool {
        self.mask[t][(i, j)]
    }

    /// Value at `(t, i, j)` if observed.
    pub fn get(&self, t: usize, i: usize, j: usize) -> Option<f64> {
        self.mask[t][(i, j)].then(|| self.values[t][(i, j)])
    }

    pub fn observed_count(&self) -> usize {
        self.mask
            .iter()
            .map(|w| w.iter().filter(|&&o| o).count())
            .sum()
    }

    pub fn into_parts(self) -> (Vec<DMatrix<f64>>, Vec<DMatrix<bool>>) {
        (self.values, self.mask)
    }
}

/// Pairwise overlap cardinalities.
///
/// `row[(i, j)]` counts the `(t, m)` pairs at which rows `i` and `j` are both
/// observed; `col[(i, j)]` counts the `(t, l)` pairs at which columns `i` and
/// `j` are both observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlapCounts {
    pub row: DMatrix<u64>,
    pub col: DMatrix<u64>,
}

/// Packed observation indicators, one bitset per matrix line.
struct LineBits {
    words: usize,
    bits: Vec<u64>,
}

impl LineBits {
    fn new(lines: usize, len: usize) -> Self {
        let words = len.div_ceil(64);
        Self {
            words,
            bits: vec![0; lines * words],
        }
    }

    fn set(&mut self, line: usize, pos: usize) {
        self.bits[line * self.words + pos / 64] |= 1 << (pos % 64);
    }

    fn line(&self, line: usize) -> &[u64] {
        &self.bits[line * self.words..(line + 1) * self.words]
    }

    fn gram(&self, lines: usize) -> DMatrix<u64> {
        let mut out = DMatrix::zeros(lines, lines);
        for i in 0..lines {
            let li = self.line(i);
            for j in 0..=i {
                let n: u64 = li
                    .iter()
                    .zip(self.line(j))
                    .map(|(x, y)| u64::from((x & y).count_ones()))
                    .sum();
                out[(i, j)] = n;
                out[(j, i)] = n;
            }
        }
        out
    }
}

pub fn overlap_counts(series: &MaskedSeries) -> OverlapCounts {
    let (a, b, len) = (series.rows(), series.cols(), series.len());
    let mut rows = LineBits::new(a, len * b);
    let mut cols = LineBits::new(b, len * a);
    for (t, w) in series.mask().iter().enumerate() {
        for j in 0..b {
            for i in 0..a {
                if w[(i, j)] {
                    rows.set(i, t * b + j);
                    cols.set(j, t * a + i);
                }
            }
        }
    }
    OverlapCounts {
        row: rows.gram(a),
        col: cols.gram(b),
    }
}

/// Subtracts from each cell its mean over the periods where it is observed.
///
/// Returns the centred series and the `a x b` matrix of cell means.
/// Placeholders under the mask are left untouched.
pub fn demean(series: &MaskedSeries) -> Result<(MaskedSeries, DMatrix<f64>)> {
    let (a, b) = (series.rows(), series.cols());
    let mut sums = DMatrix::<f64>::zeros(a, b);
    let mut counts = DMatrix::<usize>::zeros(a, b);
    for (v, w) in series.values().iter().zip(series.mask()) {
        for j in 0..b {
            for i in 0..a {
                if w[(i, j)] {
                    sums[(i, j)] += v[(i, j)];
                    counts[(i, j)] += 1;
                }
            }
        }
    }
    let mut means = DMatrix::<f64>::zeros(a, b);
    for j in 0..b {
        for i in 0..a {
            let n = counts[(i, j)];
            if n == 0 {
                return Err(Error::NeverObservedCell { row: i, col: j });
            }
            means[(i, j)] = sums[(i, j)] / n as f64;
        }
    }
    let values = series
        .values()
        .iter()
        .zip(series.mask())
        .map(|(v, w)| {
            DMatrix::from_fn(a, b, |i, j| {
                if w[(i, j)] {
                    v[(i, j)] - means[(i, j)]
                } else {
                    v[(i, j)]
                }
            })
        })
        .collect();
    let centred = MaskedSeries::new(values, series.mask().to_vec())?;
    Ok((centred, means))
}

/// `Y_t ⊙ W_t`: observed values, exact zeros elsewhere.
pub fn zero_impute(series: &MaskedSeries) -> Vec<DMatrix<f64>> {
    series
        .values()
        .iter()
        .zip(series.mask())
        .map(|(v, w)| v.zip_map(w, |x, o| if o { x } else { 0.0 }))
        .collect()
}

pub fn observed_fraction(series: &MaskedSeries) -> f64 {
    let total = series.len() * series.rows() * series.cols();
    series.observed_count() as f64 / total as f64
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct enumeration of the overlap sets.
    pub(crate) fn brute_overlaps(s: &MaskedSeries) -> (DMatrix<u64>, DMatrix<u64>) {
        let (a, b) = (s.rows(), s.cols());
        let row = DMatrix::from_fn(a, a, |i, j| {
            let mut n = 0;
            for t in 0..s.len() {
                for m in 0..b {
                    if s.is_observed(t, i, m) && s.is_observed(t, j, m) {
                        n += 1;
                    }
                }
            }
            n
        });
        let col = DMatrix::from_fn(b, b, |i, j| {
            let mut n = 0;
            for t in 0..s.len() {
                for l in 0..a {
                    if s.is_observed(t, l, i) && s.is_observed(t, l, j) {
                        n += 1;
                    }
                }
            }
            n
        });
        (row, col)
    }

    pub(crate) fn arb_series(
        max_a: usize,
        max_b: usize,
        max_t: usize,
    ) -> impl Strategy<Value = MaskedSeries> {
        (1..=max_a, 1..=max_b, 1..=max_t).prop_flat_map(|(a, b, t)| {
            (
                prop::collection::vec(-10.0f64..10.0, a * b * t),
                prop::collection::vec(any::<bool>(), a * b * t),
            )
                .prop_map(move |(v, w)| {
                    let values = v.chunks(a * b).map(|c| DMatrix::from_column_slice(a, b, c)).collect();
                    let mask = w.chunks(a * b).map(|c| DMatrix::from_column_slice(a, b, c)).collect();
                    MaskedSeries::new(values, mask).unwrap()
                })
        })
    }

    fn ones(a: usize, b: usize, t: usize) -> MaskedSeries {
        MaskedSeries::fully_observed(vec![DMatrix::from_element(a, b, 1.0); t]).unwrap()
    }

    fn all_missing(a: usize, b: usize, t: usize) -> MaskedSeries {
        MaskedSeries::new(
            vec![DMatrix::from_element(a, b, 3.0); t],
            vec![DMatrix::from_element(a, b, false); t],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MaskedSeries::new(vec![], vec![]).is_err());
        let v = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)];
        assert!(MaskedSeries::fully_observed(v).is_err());
        let err = MaskedSeries::new(
            vec![DMatrix::zeros(2, 2)],
            vec![DMatrix::from_element(2, 2, true); 2],
        );
        assert!(matches!(err, Err(Error::InvalidShape(_))));
    }

    #[test]
    fn non_finite_placeholder_is_tolerated() {
        let mut v = DMatrix::from_element(2, 2, 1.0);
        v[(0, 1)] = f64::NAN;
        let mut w = DMatrix::from_element(2, 2, true);
        assert!(matches!(
            MaskedSeries::new(vec![v.clone()], vec![w.clone()]),
            Err(Error::NonFiniteValue { t: 0, row: 0, col: 1 })
        ));
        w[(0, 1)] = false;
        let s = MaskedSeries::new(vec![v], vec![w]).unwrap();
        assert_eq!(zero_impute(&s)[0][(0, 1)], 0.0);
    }

    #[test]
    fn overlaps_full_observation() {
        let o = overlap_counts(&ones(2, 3, 4));
        assert!(o.row.iter().all(|&n| n == 12));
        assert!(o.col.iter().all(|&n| n == 8));
    }

    #[test]
    fn overlaps_all_missing() {
        let o = overlap_counts(&all_missing(3, 2, 5));
        assert!(o.row.iter().chain(o.col.iter()).all(|&n| n == 0));
    }

    #[test]
    fn overlaps_one_row_missing_once() {
        let mut s = ones(2, 2, 2);
        s.mask[0][(1, 0)] = false;
        s.mask[0][(1, 1)] = false;
        let o = overlap_counts(&s);
        let (row, col) = brute_overlaps(&s);
        assert_eq!(o.row, DMatrix::from_row_slice(2, 2, &[4, 2, 2, 2]));
        assert_eq!(o.row, row);
        assert_eq!(o.col, col);
    }

    #[test]
    fn overlaps_cross_word_boundaries() {
        // 70 bits per row line, so each line spans two words.
        let mut s = ones(3, 7, 10);
        for t in 0..10 {
            s.mask[t][(t % 3, t % 7)] = false;
            s.mask[t][(2, 6)] = t % 2 == 0;
        }
        let o = overlap_counts(&s);
        let (row, col) = brute_overlaps(&s);
        assert_eq!(o.row, row);
        assert_eq!(o.col, col);
    }

    #[test]
    fn demean_examples() {
        let s = MaskedSeries::fully_observed(vec![DMatrix::from_element(2, 3, 4.5); 3]).unwrap();
        let (c, means) = demean(&s).unwrap();
        assert!(c.values().iter().all(|v| v.iter().all(|&x| x == 0.0)));
        assert!(means.iter().all(|&m| m == 4.5));

        let v: Vec<_> = [2.0, 99.0, 4.0]
            .iter()
            .map(|&x| DMatrix::from_element(1, 1, x))
            .collect();
        let w = vec![
            DMatrix::from_element(1, 1, true),
            DMatrix::from_element(1, 1, false),
            DMatrix::from_element(1, 1, true),
        ];
        let (c, means) = demean(&MaskedSeries::new(v, w).unwrap()).unwrap();
        assert_eq!(means[(0, 0)], 3.0);
        assert_eq!(c.get(0, 0, 0), Some(-1.0));
        assert_eq!(c.get(2, 0, 0), Some(1.0));
        assert_eq!(c.get(1, 0, 0), None);
    }

    #[test]
    fn demean_centred_input_is_unchanged() {
        let v = vec![
            DMatrix::from_row_slice(1, 2, &[1.0, -2.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, 2.0]),
        ];
        let s = MaskedSeries::fully_observed(v).unwrap();
        let (c, means) = demean(&s).unwrap();
        assert_eq!(c, s);
        assert!(means.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn demean_rejects_never_observed() {
        let mut s = ones(2, 2, 3);
        for w in &mut s.mask {
            w[(1, 0)] = false;
        }
        assert!(matches!(
            demean(&s),
            Err(Error::NeverObservedCell { row: 1, col: 0 })
        ));
    }

    #[test]
    fn zero_impute_examples() {
        let s = MaskedSeries::fully_observed(vec![DMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64)])
            .unwrap();
        assert_eq!(zero_impute(&s)[0], s.values()[0]);
        assert!(zero_impute(&all_missing(2, 2, 2))
            .iter()
            .all(|m| m.iter().all(|&x| x == 0.0)));

        let mut w = DMatrix::from_element(2, 2, true);
        w[(1, 1)] = false;
        let mut v = DMatrix::from_element(2, 2, 1.25);
        v[(1, 1)] = 7.5;
        let out = zero_impute(&MaskedSeries::new(vec![v], vec![w]).unwrap());
        assert_eq!(out[0], DMatrix::from_row_slice(2, 2, &[1.25, 1.25, 1.25, 0.0]));
    }

    #[test]
    fn observed_fraction_bounds() {
        assert_eq!(observed_fraction(&ones(3, 2, 2)), 1.0);
        assert_eq!(observed_fraction(&all_missing(3, 2, 2)), 0.0);
    }

    proptest! {
        #[test]
        fn overlaps_match_enumeration(s in arb_series(4, 4, 4)) {
            let o = overlap_counts(&s);
            let (row, col) = brute_overlaps(&s);
            prop_assert_eq!(&o.row, &row);
            prop_assert_eq!(&o.col, &col);
            prop_assert_eq!(&o.row, &o.row.transpose());
            prop_assert_eq!(&o.col, &o.col.transpose());
            let n = s.observed_count() as u64;
            prop_assert_eq!(o.row.diagonal().sum(), n);
            prop_assert_eq!(o.col.diagonal().sum(), n);
            prop_assert!(o.row.iter().all(|&x| x <= (s.cols() * s.len()) as u64));
            prop_assert!(o.col.iter().all(|&x| x <= (s.rows() * s.len()) as u64));
        }

        #[test]
        fn demean_is_a_fixed_point(s in arb_series(3, 3, 5)) {
            if let Ok((once, _)) = demean(&s) {
                let (twice, _) = demean(&once).unwrap();
                for (x, y) in zero_impute(&once).iter().zip(&zero_impute(&twice)) {
                    for (p, q) in x.iter().zip(y.iter()) {
                        prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
                    }
                }
            }
        }

        #[test]
        fn zero_impute_keeps_observed(s in arb_series(3, 3, 3)) {
            let z = zero_impute(&s);
            for t in 0..s.len() {
                for i in 0..s.rows() {
                    for j in 0..s.cols() {
                        match s.get(t, i, j) {
                            Some(v) => prop_assert_eq!(z[t][(i, j)], v),
                            None => prop_assert_eq!(z[t][(i, j)], 0.0),
                        }
                    }
                }
            }
        }
    }
}
