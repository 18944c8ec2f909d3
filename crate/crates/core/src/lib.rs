//! Factor models for matrix-valued time series with missing entries.
//!
//! Each period is an `a x b` matrix `Y_t = R F_t Cᵀ + E_t` with a low-rank
//! signal. Some cells are unobserved. Loadings come from principal
//! components of row and column covariances. In the default method each
//! covariance entry is averaged only over the periods and cells where both
//! of its lines were observed. Factors are projections of the zero-filled
//! data onto the loadings.
//!
//! ```
//! use matfactor::{fit, FitOptions, MaskedSeries};
//! use nalgebra::DMatrix;
//!
//! // a rank-one panel with one missing cell per period
//! let r = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, -1.0, 0.5]);
//! let c = DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 2.0]);
//! let values: Vec<_> = (0..6).map(|t| &r * c.transpose() * (t as f64 - 2.5)).collect();
//! let mask = (0..6).map(|t| DMatrix::from_fn(4, 3, |i, j| (i + j + t) % 5 != 0)).collect();
//! let series = MaskedSeries::new(values, mask)?;
//!
//! let est = fit(&series, Some((1, 1)), &FitOptions::default())?;
//! assert_eq!(est.r_hat.shape(), (4, 1));
//! assert_eq!(est.f_hat.len(), 6);
//! # Ok::<(), matfactor::Error>(())
//! ```

pub mod covariance;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod io;
pub mod panel;
pub mod report;
pub mod simulation;
pub mod spectra;
pub mod varimax;

pub use covariance::{covariances, CovPair, Method};
pub use error::{Axis, Error, Result};
pub use estimator::{estimate_factors, estimate_signal, fit, impute, Decomposition, FactorFit, FitOptions};
pub use evaluation::{space_distance, ModelTruth};
pub use panel::MaskedSeries;
pub use simulation::{run_monte_carlo, McReport, SimConfig};
pub use spectra::KMaxRule;
pub use varimax::varimax;
