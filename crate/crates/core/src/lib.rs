//! Bilateral and multilateral price indexes with delta-method standard errors.
//!
//! The crate computes Laspeyres, Paasche, Fisher, Törnqvist, Sato-Vartia,
//! bilateral product-dummy and Walsh indexes from item-level prices and
//! expenditures, together with the variance of each log index, the GEKS
//! multilateral system and its variance, dissimilarity measures, a bootstrap
//! cross-check and a law-of-one-price estimator used as an independent oracle.

pub mod bilateral;
pub mod data;
pub mod dissimilarity;
pub mod error;
pub mod format;
pub mod geks;
pub mod lop;
pub mod properties;
pub mod resampling;
pub mod tolerance;
pub mod variance;

pub use bilateral::{IndexEstimate, IndexMethod, IndexOptions, WalshNegative, WeightKind, WeightScheme, ZeroShares};
pub use data::{BilateralView, ComparisonDataset, ShareVector};
pub use error::{IndexError, Result};
