//! Data-generating processes, missing patterns and the Monte-Carlo harness.
//!
//! Every replication draws from its own ChaCha8 stream keyed by the root
//! seed and the replication index, so results do not depend on how rayon
//! schedules the work.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::Method;
use crate::error::{Error, Result};
use crate::estimator::{Decomposition, FitOptions};
use crate::evaluation::{
    factor_error, normality_summary, rotations, row_loading_error, space_distance, ModelTruth, NormalitySummary,
    MIN_NORMALITY_REPS,
};
use crate::panel::MaskedSeries;

/// Temporal and cross-sectional dependence of factors and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Setting {
    /// Independent standard normal factors and noise.
    S1,
    /// VAR(1) factors with coefficient `psi`, VAR(1) noise with coefficient 0.1,
    /// both with unit marginal variance.
    S2 { psi: f64 },
    /// Independent factors; noise rows and columns equicorrelated at `1/a` and `1/b`.
    S3,
}

impl Setting {
    pub fn label(&self) -> String {
        match self {
            Setting::S1 => "1".into(),
            Setting::S2 { psi } => format!("2(psi={psi})"),
            Setting::S3 => "3".into(),
        }
    }
}

/// Noise autoregression coefficient in setting 2.
pub const NOISE_AR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Pattern {
    /// Every cell observed independently with probability `rate`.
    I { rate: f64 },
    /// `⌊drop_frac · a⌋` random rows go dark for good from 1-based period
    /// `drop_start`, which defaults to `⌈drop_time_frac · T⌉`.
    II {
        drop_frac: f64,
        drop_time_frac: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drop_start: Option<usize>,
    },
}

impl Pattern {
    pub fn label(&self) -> &'static str {
        match self {
            Pattern::I { .. } => "I",
            Pattern::II { .. } => "II",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub setting: Setting,
    pub a: usize,
    pub b: usize,
    pub t: usize,
    #[serde(default = "three")]
    pub k: usize,
    #[serde(default = "three")]
    pub r: usize,
    pub pattern: Pattern,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    /// Draw `R` and `C` once and hold them fixed across replications.
    #[serde(default)]
    pub fixed_loadings: bool,
}

fn three() -> usize {
    3
}

impl SimConfig {
    /// Setting 1 with pattern I at 75% observed, the reference design.
    pub fn baseline(a: usize, b: usize, t: usize, reps: usize, seed: u64) -> Self {
        Self {
            setting: Setting::S1,
            a,
            b,
            t,
            k: 3,
            r: 3,
            pattern: Pattern::I { rate: 0.75 },
            reps,
            seed,
            burn_in: 0,
            fixed_loadings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.a == 0 || self.b == 0 || self.t == 0 {
            return bad(format!("dimensions must be positive, got {}x{}x{}", self.a, self.b, self.t));
        }
        if self.k == 0 || self.k > self.a || self.r == 0 || self.r > self.b {
            return bad(format!("ranks ({},{}) must lie in 1..=({},{})", self.k, self.r, self.a, self.b));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if let Setting::S2 { psi } = self.setting {
            if !(psi.abs() < 1.0) {
                return Err(Error::InvalidPsi(psi));
            }
        }
        match self.pattern {
            Pattern::I { rate } if !(rate > 0.0 && rate <= 1.0) => bad(format!("rate {rate} outside (0, 1]")),
            Pattern::II {
                drop_frac,
                drop_time_frac,
                drop_start,
            } => {
                if !(0.0..1.0).contains(&drop_frac) {
                    return bad(format!("drop_frac {drop_frac} outside [0, 1)"));
                }
                if !(drop_time_frac > 0.0 && drop_time_frac < 1.0) {
                    return bad(format!("drop_time_frac {drop_time_frac} outside (0, 1)"));
                }
                if drop_start == Some(0) {
                    return bad("drop_start is 1-based".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Generator for replication `rep`; stream 0 is reserved for fixed loadings.
    pub fn rep_rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64 + 1);
        rng
    }

    fn loadings_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(0);
        rng
    }
}

/// One draw of the model `Y_t = R F_t Cᵀ + E_t`, fully observed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub factors: Vec<DMatrix<f64>>,
    pub noise: Vec<DMatrix<f64>>,
    pub values: Vec<DMatrix<f64>>,
}

impl GroundTruth {
    pub fn model(&self) -> ModelTruth<'_> {
        ModelTruth {
            r: &self.r,
            c: &self.c,
            factors: &self.factors,
        }
    }

    /// The panel as seen through `mask`.
    pub fn observe(&self, mask: Vec<DMatrix<bool>>) -> Result<MaskedSeries> {
        MaskedSeries::new(self.values.clone(), mask)
    }
}

fn normal_matrix<R: Rng>(rng: &mut R, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

/// Loadings with i.i.d. `N(1, 1)` entries.
pub fn generate_loadings<R: Rng>(config: &SimConfig, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = normal_matrix(rng, config.a, config.k).add_scalar(1.0);
    let c = normal_matrix(rng, config.b, config.r).add_scalar(1.0);
    (r, c)
}

pub fn generate_truth<R: Rng>(config: &SimConfig, rng: &mut R) -> Result<GroundTruth> {
    config.validate()?;
    let (r, c) = generate_loadings(config, rng);
    generate_truth_with(config, r, c, rng)
}

/// Draws factors and noise around the given loadings.
pub fn generate_truth_with<R: Rng>(config: &SimConfig, r: DMatrix<f64>, c: DMatrix<f64>, rng: &mut R) -> Result<GroundTruth> {
    config.validate()?;
    if r.shape() != (config.a, config.k) || c.shape() != (config.b, config.r) {
        return Err(Error::DimensionMismatch(format!(
            "loadings {:?}/{:?} do not match the configuration",
            r.shape(),
            c.shape()
        )));
    }
    let (a, b, t, k, q) = (config.a, config.b, config.t, config.k, config.r);
    let (factors, noise) = match config.setting {
        Setting::S1 => {
            let f = (0..t).map(|_| normal_matrix(rng, k, q)).collect();
            let e = (0..t).map(|_| normal_matrix(rng, a, b)).collect();
            (f, e)
        }
        Setting::S2 { psi } => {
            let f = var1_path(rng, k, q, t, psi, config.burn_in);
            let e = var1_path(rng, a, b, t, NOISE_AR, config.burn_in);
            (f, e)
        }
        Setting::S3 => {
            let f = (0..t).map(|_| normal_matrix(rng, k, q)).collect();
            let (ra, rb) = (EquicorrelatedRoot::new(a), EquicorrelatedRoot::new(b));
            let e = (0..t)
                .map(|_| {
                    let z = normal_matrix(rng, a, b);
                    rb.apply_right(&ra.apply_left(&z))
                })
                .collect();
            (f, e)
        }
    };
    let values = factors
        .iter()
        .zip(&noise)
        .map(|(f, e): (&DMatrix<f64>, &DMatrix<f64>)| &r * f * c.transpose() + e)
        .collect();
    Ok(GroundTruth {
        r,
        c,
        factors,
        noise,
        values,
    })
}

/// Stationary VAR(1) `x_t = φ x_{t-1} + u_t` with `var(u) = 1 − φ²`, started
/// from its unit-variance stationary law.
fn var1_path<R: Rng>(rng: &mut R, n: usize, m: usize, t: usize, phi: f64, burn_in: usize) -> Vec<DMatrix<f64>> {
    let sd = (1.0 - phi * phi).sqrt();
    let mut x = normal_matrix(rng, n, m);
    for _ in 0..burn_in {
        x = &x * phi + normal_matrix(rng, n, m) * sd;
    }
    let mut out = Vec::with_capacity(t);
    out.push(x.clone());
    for _ in 1..t {
        x = &x * phi + normal_matrix(rng, n, m) * sd;
        out.push(x.clone());
    }
    out
}

/// Symmetric square root `αI + β11ᵀ` of the `n x n` matrix with unit
/// diagonal and `1/n` off the diagonal. Its eigenvalues are `1 − 1/n` on
/// the complement of `1` and `2 − 1/n` along `1`.
struct EquicorrelatedRoot {
    alpha: f64,
    beta: f64,
}

impl EquicorrelatedRoot {
    fn new(n: usize) -> Self {
        let nf = n as f64;
        let alpha = (1.0 - 1.0 / nf).sqrt();
        let beta = ((2.0 - 1.0 / nf).sqrt() - alpha) / nf;
        Self { alpha, beta }
    }

    /// `S z`, mixing rows.
    fn apply_left(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let sums = z.row_sum();
        let mut out = z * self.alpha;
        for mut row in out.row_iter_mut() {
            row += &sums * self.beta;
        }
        out
    }

    /// `z S`, mixing columns.
    fn apply_right(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let sums = z.column_sum();
        let mut out = z * self.alpha;
        for mut col in out.column_iter_mut() {
            col += &sums * self.beta;
        }
        out
    }
}

/// 1-based first period at which pattern II rows are missing.
pub fn drop_onset(t: usize, drop_time_frac: f64, drop_start: Option<usize>) -> usize {
    drop_start.unwrap_or_else(|| ((drop_time_frac * t as f64) - 1e-9).ceil().max(1.0) as usize)
}

pub fn generate_mask<R: Rng>(config: &SimConfig, rng: &mut R) -> Vec<DMatrix<bool>> {
    let (a, b, t) = (config.a, config.b, config.t);
    match config.pattern {
        Pattern::I { rate } => (0..t)
            .map(|_| DMatrix::from_fn(a, b, |_, _| rate >= 1.0 || rng.gen::<f64>() < rate))
            .collect(),
        Pattern::II {
            drop_frac,
            drop_time_frac,
            drop_start,
        } => {
            let n_drop = (drop_frac * a as f64 + 1e-9).floor() as usize;
            let mut dropped = vec![false; a];
            for i in sample(rng, a, n_drop.min(a)).into_iter() {
                dropped[i] = true;
            }
            let onset = drop_onset(t, drop_time_frac, drop_start);
            (0..t)
                .map(|s| {
                    let dark = s + 1 >= onset;
                    DMatrix::from_fn(a, b, |i, _| !(dark && dropped[i]))
                })
                .collect()
        }
    }
}

/// Outcome of one method on one replication. Failures are kept as messages
/// so that every replication is accounted for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    /// Eigen-ratio ranks, or `None` when selection failed.
    pub ranks: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_error: Option<String>,
    /// Metrics of the fit at the true ranks.
    pub d_r: Option<f64>,
    pub d_c: Option<f64>,
    /// `‖F̂_t − H_R⁻¹ F_t H_C⁻ᵀ‖` per period.
    pub factor_errors: Option<Vec<f64>>,
    /// First row of `R̂ − R H_R`.
    pub first_row: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub observed_fraction: f64,
    pub methods: Vec<MethodRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` divisor); zero for `n < 2`.
    pub sd: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, sd })
    }
}

/// Share of replications landing on `(k̂, r̂)`; `ranks = None` collects failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankFrequency {
    pub ranks: Option<(usize, usize)>,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Sorted by ranks, failures last; frequencies sum to one.
    pub rank_frequencies: Vec<RankFrequency>,
    pub d_r: Option<Moments>,
    pub d_c: Option<Moments>,
    /// Pooled over periods and replications.
    pub factor_error: Option<Moments>,
    pub failures: usize,
    /// Present once at least the minimum number of first-row draws exist.
    pub normality: Option<NormalitySummary>,
}

impl MethodSummary {
    pub fn frequency_of(&self, ranks: (usize, usize)) -> f64 {
        self.rank_frequencies
            .iter()
            .find(|f| f.ranks == Some(ranks))
            .map_or(0.0, |f| f.frequency)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: SimConfig,
    pub options: FitOptions,
    pub records: Vec<RepRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl McReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    fn method_index(&self, method: Method) -> Option<usize> {
        self.summaries.iter().position(|s| s.method == method)
    }
}

/// Runs `config.reps` replications, each fitting every method with
/// eigen-ratio ranks (for frequencies) and with the true ranks (for errors).
/// `options.method` is ignored in favour of `methods`.
pub fn run_monte_carlo(config: &SimConfig, methods: &[Method], options: &FitOptions) -> Result<McReport> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let fixed = config.fixed_loadings.then(|| generate_loadings(config, &mut config.loadings_rng()));
    let records: Vec<RepRecord> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_replication(config, methods, options, rep, fixed.as_ref()))
        .collect::<Result<_>>()?;
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, &method)| summarize(method, records.iter().map(|r| &r.methods[m])))
        .collect();
    Ok(McReport {
        config: config.clone(),
        options: options.clone(),
        records,
        summaries,
    })
}

/// One replication; an `Err` here means the draw itself failed, which only
/// happens on an invalid configuration.
pub fn run_replication(
    config: &SimConfig,
    methods: &[Method],
    options: &FitOptions,
    rep: usize,
    fixed: Option<&(DMatrix<f64>, DMatrix<f64>)>,
) -> Result<RepRecord> {
    let mut rng = config.rep_rng(rep);
    let truth = match fixed {
        Some((r, c)) => generate_truth_with(config, r.clone(), c.clone(), &mut rng)?,
        None => generate_truth(config, &mut rng)?,
    };
    let mask = generate_mask(config, &mut rng);
    let series = truth.observe(mask)?;
    let observed_fraction = crate::panel::observed_fraction(&series);
    let methods = methods
        .iter()
        .map(|&method| {
            let opts = FitOptions {
                method,
                ..options.clone()
            };
            evaluate_method(&truth, &series, &opts, (config.k, config.r))
        })
        .collect();
    Ok(RepRecord {
        rep,
        observed_fraction,
        methods,
    })
}

fn evaluate_method(truth: &GroundTruth, series: &MaskedSeries, options: &FitOptions, ranks: (usize, usize)) -> MethodRecord {
    let mut record = MethodRecord {
        method: options.method,
        ranks: None,
        rank_error: None,
        d_r: None,
        d_c: None,
        factor_errors: None,
        first_row: None,
        error: None,
    };
    let decomposition = match Decomposition::new(series, options) {
        Ok(d) => d,
        Err(e) => {
            record.rank_error = Some(e.to_string());
            record.error = Some(e.to_string());
            return record;
        }
    };
    match decomposition.select_ranks() {
        Ok(kr) => record.ranks = Some(kr),
        Err(e) => record.rank_error = Some(e.to_string()),
    }
    let result = (|| -> Result<()> {
        let fit = decomposition.fit_inner(Some(ranks), false)?;
        let model = truth.model();
        record.d_r = Some(space_distance(&fit.r_hat, &truth.r)?);
        record.d_c = Some(space_distance(&fit.c_hat, &truth.c)?);
        let rot = rotations(&model, &fit)?;
        record.first_row = Some(row_loading_error(&fit, &model, &rot, 0)?.iter().copied().collect());
        record.factor_errors = Some(factor_error(&fit, &model, &rot)?);
        Ok(())
    })();
    if let Err(e) = result {
        record.error = Some(e.to_string());
    }
    record
}

fn summarize<'a>(method: Method, records: impl Iterator<Item = &'a MethodRecord>) -> MethodSummary {
    let records: Vec<&MethodRecord> = records.collect();
    let n = records.len();
    let mut counts: Vec<(Option<(usize, usize)>, usize)> = Vec::new();
    for r in &records {
        match counts.iter_mut().find(|(k, _)| *k == r.ranks) {
            Some((_, c)) => *c += 1,
            None => counts.push((r.ranks, 1)),
        }
    }
    // failures (None) sort after every observed pair
    counts.sort_by_key(|(k, _)| (k.is_none(), *k));
    let rank_frequencies = counts
        .into_iter()
        .map(|(ranks, count)| RankFrequency {
            ranks,
            count,
            frequency: count as f64 / n as f64,
        })
        .collect();

    let d_r: Vec<f64> = records.iter().filter_map(|r| r.d_r).collect();
    let d_c: Vec<f64> = records.iter().filter_map(|r| r.d_c).collect();
    let pooled: Vec<f64> = records
        .iter()
        .filter_map(|r| r.factor_errors.as_deref())
        .flatten()
        .copied()
        .collect();
    let first: Vec<&Vec<f64>> = records.iter().filter_map(|r| r.first_row.as_ref()).collect();
    let normality = if first.len() >= MIN_NORMALITY_REPS {
        let k = first[0].len();
        let draws = DMatrix::from_fn(first.len(), k, |i, j| first[i][j]);
        normality_summary(&draws).ok()
    } else {
        None
    };
    MethodSummary {
        method,
        rank_frequencies,
        d_r: Moments::of(&d_r),
        d_c: Moments::of(&d_c),
        factor_error: Moments::of(&pooled),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        normality,
    }
}

/// Per-replication first-row draws of one method as a `reps x k` matrix.
pub fn first_row_draws(report: &McReport, method: Method) -> Option<DMatrix<f64>> {
    let m = report.method_index(method)?;
    let rows: Vec<&Vec<f64>> = report
        .records
        .iter()
        .filter_map(|r| r.methods[m].first_row.as_ref())
        .collect();
    let k = rows.first()?.len();
    Some(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
}

/// Mean of each record's per-period factor errors, for boxplots.
pub fn mean_factor_error(record: &MethodRecord) -> Option<f64> {
    let e = record.factor_errors.as_ref()?;
    Some(DVector::from_column_slice(e).mean())
}
