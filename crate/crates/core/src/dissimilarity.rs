//! Price dissimilarity measures between two locations.
//!
//! D1 to D3 are Diewert's measures built on the Fisher and Törnqvist indexes:
//!
//! ```text
//! D1 = sum w_n [(pi_n/F - 1)^2 + (F/pi_n - 1)^2]
//! D2 = sum w_n [pi_n/F + F/pi_n - 2]
//! D3 = sum w_n (ln pi_n - ln T)^2          with w_n = (s_nj + s_nk)/2
//! ```
//!
//! D4 to D6 are the variances of the log Fisher, log Walsh and a log-weighted
//! index (Törnqvist unless chosen otherwise). Each measure is the sum of its
//! per-item contributions, and D4 to D6 reuse the variance term functions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bilateral::{self, relative_ratios, IndexMethod, IndexOptions, WeightKind, ZeroShares};
use crate::data::{BilateralView, ComparisonDataset};
use crate::error::{IndexError, Result};
use crate::tolerance::rel_gap;
use crate::variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
}

impl Measure {
    pub const ALL: [Measure; 6] = [Measure::D1, Measure::D2, Measure::D3, Measure::D4, Measure::D5, Measure::D6];

    pub fn name(self) -> &'static str {
        match self {
            Measure::D1 => "D1",
            Measure::D2 => "D2",
            Measure::D3 => "D3",
            Measure::D4 => "D4",
            Measure::D5 => "D5",
            Measure::D6 => "D6",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| IndexError::InvalidConfig(format!("unknown measure '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DissimilarityOptions {
    pub index: IndexOptions,
    /// Logarithmic index behind D6: Törnqvist, Sato-Vartia or product-dummy.
    pub d6_method: IndexMethod,
}

impl Default for DissimilarityOptions {
    fn default() -> Self {
        Self { index: IndexOptions::default(), d6_method: IndexMethod::Tornqvist }
    }
}

impl DissimilarityOptions {
    fn d6_kind(&self) -> Result<WeightKind> {
        self.d6_method.weight_kind().ok_or_else(|| {
            IndexError::InvalidConfig(format!("D6 needs a logarithmic index, got {}", self.d6_method))
        })
    }
}

fn arithmetic_weights(view: &BilateralView) -> Vec<f64> {
    bilateral::weight_scheme(view, WeightKind::Arithmetic, ZeroShares::Tolerate)
        .expect("arithmetic weights accept any shares")
        .weights
}

/// `(pi_n / F)` for every item, computed relative to the reference ratio.
fn fisher_relatives(view: &BilateralView) -> Result<Vec<f64>> {
    let (r, rho) = relative_ratios(view);
    let f = bilateral::fisher(view)?.value / r;
    Ok(rho.iter().map(|x| x / f).collect())
}

/// Per-item summands of a measure, in item order.
pub fn contribution_table(view: &BilateralView, measure: Measure, opts: &DissimilarityOptions) -> Result<Vec<f64>> {
    match measure {
        Measure::D1 => {
            let x = fisher_relatives(view)?;
            Ok(arithmetic_weights(view)
                .iter()
                .zip(&x)
                .map(|(w, x)| w * ((x - 1.0).powi(2) + ((1.0 - x) / x).powi(2)))
                .collect())
        }
        Measure::D2 => {
            // x + 1/x - 2 written as (x - 1)^2 / x: no cancellation near x = 1.
            let x = fisher_relatives(view)?;
            Ok(arithmetic_weights(view).iter().zip(&x).map(|(w, x)| w * (x - 1.0).powi(2) / x).collect())
        }
        Measure::D3 => {
            let scheme = bilateral::weight_scheme(view, WeightKind::Arithmetic, ZeroShares::Tolerate)?;
            let dev = variance::log_deviations(view, &scheme)?;
            Ok(scheme.weights.iter().zip(&dev).map(|(w, d)| w * d * d).collect())
        }
        Measure::D4 => variance::var_log_fisher_terms(view),
        Measure::D5 => variance::var_log_walsh_terms(view, opts.index.walsh_negative),
        Measure::D6 => {
            let scheme = bilateral::weight_scheme(view, opts.d6_kind()?, opts.index.zero_shares)?;
            variance::var_log_weighted_terms(view, &scheme)
        }
    }
}

pub fn measure_value(view: &BilateralView, measure: Measure, opts: &DissimilarityOptions) -> Result<f64> {
    Ok(contribution_table(view, measure, opts)?.iter().sum())
}

/// D1, D2, D3.
pub fn diewert_measures(view: &BilateralView) -> Result<[f64; 3]> {
    let opts = DissimilarityOptions::default();
    Ok([
        measure_value(view, Measure::D1, &opts)?,
        measure_value(view, Measure::D2, &opts)?,
        measure_value(view, Measure::D3, &opts)?,
    ])
}

/// D4, D5, D6, with D6 built on `d6_method`.
pub fn variance_measures(view: &BilateralView, d6_method: IndexMethod, index: IndexOptions) -> Result<[f64; 3]> {
    let opts = DissimilarityOptions { index, d6_method };
    Ok([
        measure_value(view, Measure::D4, &opts)?,
        measure_value(view, Measure::D5, &opts)?,
        measure_value(view, Measure::D6, &opts)?,
    ])
}

/// All six measures for one pair, with contributions. A measure that cannot be
/// computed under the chosen policies is listed in `errors` instead.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityReport {
    pub target: String,
    pub base: String,
    pub values: BTreeMap<Measure, f64>,
    pub contributions: BTreeMap<Measure, Vec<f64>>,
    pub errors: BTreeMap<Measure, String>,
    pub d6_method: IndexMethod,
    pub warnings: Vec<String>,
}

pub fn dissimilarity_report(view: &BilateralView, opts: &DissimilarityOptions) -> Result<DissimilarityReport> {
    opts.d6_kind()?;
    let mut report = DissimilarityReport {
        target: view.target().id.clone(),
        base: view.base().id.clone(),
        values: BTreeMap::new(),
        contributions: BTreeMap::new(),
        errors: BTreeMap::new(),
        d6_method: opts.d6_method,
        warnings: Vec::new(),
    };
    for m in Measure::ALL {
        match contribution_table(view, m, opts) {
            Ok(c) => {
                report.values.insert(m, c.iter().sum());
                report.contributions.insert(m, c);
            }
            Err(e) => {
                report.errors.insert(m, e.to_string());
            }
        }
    }
    if let Some(&d2) = report.values.get(&Measure::D2) {
        if d2 < 0.0 {
            report.warnings.push(format!(
                "D2 is negative ({d2}) for ({},{}); negative expenditure shares",
                report.target, report.base
            ));
        }
    }
    Ok(report)
}

/// `D(j,k)` for every ordered pair; row = target, column = base.
pub fn dissimilarity_matrix(
    dataset: &ComparisonDataset,
    measure: Measure,
    opts: &DissimilarityOptions,
) -> Result<DMatrix<f64>> {
    let m = dataset.n_locations();
    let cells: Vec<Result<f64>> = (0..m * m)
        .into_par_iter()
        .map(|c| {
            let (j, k) = (c / m, c % m);
            let view = dataset.view(j, k)?;
            measure_value(&view, measure, opts).map_err(|e| e.for_pair(&view.target().id, &view.base().id))
        })
        .collect();
    let mut out = DMatrix::zeros(m, m);
    for (c, v) in cells.into_iter().enumerate() {
        out[(c / m, c % m)] = v?;
    }
    Ok(out)
}

pub const AXIOM_NAMES: [&str; 7] = [
    "identity: D(j,j) = 0",
    "nonnegativity: D >= 0",
    "symmetry: D(j,k) = D(k,j)",
    "proportional prices give D = 0",
    "D = 0 only for proportional prices",
    "invariance to item order",
    "invariance to units of measurement",
];

/// Largest violation of each axiom over the sampled pairs.
///
/// Axioms 1, 2 and 4 report absolute values (`|D(j,j)|`, `max(0, -D)`, `|D|`
/// at proportional prices). Axioms 3, 6 and 7 report relative gaps. Axiom 5
/// reports 1 if any non-proportional pair gave `D <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub measure: Measure,
    pub trials: usize,
    pub max_violation: [f64; 7],
    /// Relative change under swapping the two quantity vectors. Reported for
    /// every measure, not part of the seven axioms.
    pub quantity_reversal: f64,
}

impl AxiomReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_violation.iter().all(|&v| v < tol)
    }

    /// Element-wise maximum with another report for the same measure.
    pub fn merge(&mut self, other: &AxiomReport) {
        self.trials += other.trials;
        for (a, b) in self.max_violation.iter_mut().zip(other.max_violation) {
            *a = a.max(b);
        }
        self.quantity_reversal = self.quantity_reversal.max(other.quantity_reversal);
    }
}

fn columns(view: &BilateralView, pj: Vec<f64>, pk: Vec<f64>) -> Result<BilateralView> {
    BilateralView::from_columns(
        view.items().to_vec(),
        &view.target().id,
        &view.base().id,
        pj,
        pk,
        view.expenditures_j().to_vec(),
        view.expenditures_k().to_vec(),
    )
}

/// Randomized check of the seven dissimilarity axioms on pairs drawn from
/// `dataset`. Deterministic in `seed`.
pub fn axiom_check(
    measure: Measure,
    dataset: &ComparisonDataset,
    trials: usize,
    seed: u64,
    opts: &DissimilarityOptions,
) -> Result<AxiomReport> {
    let m = dataset.n_locations();
    let n = dataset.n_items();
    let d = |v: &BilateralView| measure_value(v, measure, opts);
    let mut report = AxiomReport { measure, trials, max_violation: [0.0; 7], quantity_reversal: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let j = rng.random_range(0..m);
        let k = (j + rng.random_range(1..m)) % m;
        let view = dataset.view(j, k)?;
        let djk = d(&view)?;
        let viol = &mut report.max_violation;

        viol[0] = viol[0].max(d(&dataset.view(j, j)?)?.abs());
        viol[1] = viol[1].max(-djk).max(0.0);
        viol[2] = viol[2].max(rel_gap(djk, d(&dataset.view(k, j)?)?));

        let lambda = rng.random_range(0.25..4.0);
        let prop = columns(&view, view.prices_k().iter().map(|p| lambda * p).collect(), view.prices_k().to_vec())?;
        viol[3] = viol[3].max(d(&prop)?.abs());

        let logs: Vec<f64> = view.price_ratio().iter().map(|p| p.ln()).collect();
        let spread = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - logs.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-8 && djk <= 0.0 {
            viol[4] = 1.0;
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        viol[5] = viol[5].max(rel_gap(djk, d(&view.resample(&perm)?)?));

        let factors: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0f64..3.0).exp()).collect();
        let scaled = columns(
            &view,
            view.prices_j().iter().zip(&factors).map(|(p, c)| p * c).collect(),
            view.prices_k().iter().zip(&factors).map(|(p, c)| p * c).collect(),
        )?;
        viol[6] = viol[6].max(rel_gap(djk, d(&scaled)?));

        let swapped = dataset.swap_quantities(j, k)?.view(j, k)?;
        report.quantity_reversal = report.quantity_reversal.max(rel_gap(djk, d(&swapped)?));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn view_a() -> BilateralView {
        BilateralView::from_columns(
            vec!["1".into(), "2".into()],
            "j",
            "k",
            vec![2.0, 4.0],
            vec![1.0, 1.0],
            vec![2.0, 4.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn two_item_values() {
        let v = view_a();
        let [d1, d2, d3] = diewert_measures(&v).unwrap();
        assert_relative_eq!(d1, 145.0 / 576.0, max_relative = 1e-14);
        assert_relative_eq!(d2, 17.0 / 144.0, max_relative = 1e-14);
        assert_relative_eq!(d3, 35.0 / 144.0 * 2.0f64.ln().powi(2), max_relative = 1e-14);
        let c = contribution_table(&v, Measure::D4, &DissimilarityOptions::default()).unwrap();
        assert_relative_eq!(c[0], 1.0 / 36.0, max_relative = 1e-14);
        assert_relative_eq!(c[1], 1.0 / 36.0, max_relative = 1e-14);
    }

    #[test]
    fn variance_measures_are_variances() {
        let v = view_a();
        let [d4, d5, d6] = variance_measures(&v, IndexMethod::Tornqvist, IndexOptions::default()).unwrap();
        assert_eq!(d4, variance::var_log_fisher(&v).unwrap());
        assert_eq!(d5, variance::var_log_walsh(&v, Default::default()).unwrap());
        let s = bilateral::weight_scheme(&v, WeightKind::Arithmetic, ZeroShares::Reject).unwrap();
        assert_eq!(d6, variance::var_log_weighted(&v, &s).unwrap());
    }

    #[test]
    fn proportional_pair_is_zero() {
        let v = BilateralView::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            "j",
            "k",
            vec![3.0, 6.0, 1.5],
            vec![2.0, 4.0, 1.0],
            vec![1.0, 2.0, 3.0],
            vec![3.0, 1.0, 1.0],
        )
        .unwrap();
        let r = dissimilarity_report(&v, &DissimilarityOptions::default()).unwrap();
        for m in Measure::ALL {
            assert_eq!(r.values[&m], 0.0, "{m}");
            assert!(r.contributions[&m].iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn negative_d2_is_reported() {
        let v = BilateralView::from_columns(
            vec!["a".into(), "b".into()],
            "j",
            "k",
            vec![1.0, 1.5],
            vec![1.0, 1.0],
            vec![3.0, -1.0],
            vec![3.0, -1.0],
        )
        .unwrap();
        let r = dissimilarity_report(&v, &DissimilarityOptions::default()).unwrap();
        assert!(r.values[&Measure::D2] < 0.0);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.errors.contains_key(&Measure::D6) || r.values.contains_key(&Measure::D6));
    }

    #[test]
    fn d6_method_must_be_logarithmic() {
        let opts = DissimilarityOptions { d6_method: IndexMethod::Fisher, ..Default::default() };
        assert!(dissimilarity_report(&view_a(), &opts).is_err());
    }
}
