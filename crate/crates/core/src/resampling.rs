//! Bootstrap standard errors, a synthetic law-of-one-price data generator and
//! Monte Carlo coverage of the delta-method intervals.
//!
//! Every replicate draws from its own ChaCha8 stream: the master seed picks
//! the key and the replicate number picks the stream. Replicates run in
//! parallel and are reduced in replicate order, so results do not depend on
//! the number of worker threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use rayon::prelude::*;

use crate::bilateral::{self, IndexMethod, IndexOptions};
use crate::data::ComparisonDataset;
use crate::error::{IndexError, Result};
use crate::geks;
use crate::tolerance::Z_95;
use crate::variance;

/// What the bootstrap re-estimates. Locations are column indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Bilateral { method: IndexMethod, target: usize, base: usize },
    Geks { target: usize, base: usize },
}

impl Statistic {
    pub fn method(&self) -> IndexMethod {
        match self {
            Statistic::Bilateral { method, .. } => *method,
            Statistic::Geks { .. } => IndexMethod::Geks,
        }
    }

    pub fn pair(&self) -> (usize, usize) {
        match *self {
            Statistic::Bilateral { target, base, .. } | Statistic::Geks { target, base } => (target, base),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub seed: u64,
    pub statistic: Statistic,
    pub options: IndexOptions,
}

impl BootstrapConfig {
    pub const DEFAULT_REPLICATIONS: usize = 2000;

    pub fn new(statistic: Statistic, seed: u64) -> Self {
        Self { replications: Self::DEFAULT_REPLICATIONS, seed, statistic, options: IndexOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub statistic: Statistic,
    /// Log statistic on the full data.
    pub point_log: f64,
    /// Sample standard deviation (denominator `R - 1`) of the replicate logs.
    pub se_log: f64,
    pub replications: usize,
    pub replicate_count_effective: usize,
    /// Delta-method SE of the same log statistic.
    pub delta_se_log: Option<f64>,
    /// Set when more than 1% of replicates were dropped as undefined.
    pub warning: Option<String>,
}

/// Log statistic and its delta-method variance.
pub fn evaluate(dataset: &ComparisonDataset, statistic: &Statistic, opts: &IndexOptions) -> Result<(f64, f64)> {
    match *statistic {
        Statistic::Bilateral { method, target, base } => {
            let view = dataset.view(target, base)?;
            let e = variance::estimate(&view, method, opts)?;
            Ok((e.log_value, e.var_log.unwrap_or(0.0)))
        }
        Statistic::Geks { target, base } => {
            let g = geks::geks_variance(dataset, base)?;
            Ok((g.log_indexes[target], g.var_log.expect("variance requested")[target]))
        }
    }
}

/// Random number generator of replicate `r` under master seed `seed`.
pub fn replicate_rng(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Sample standard deviation with denominator `n - 1`, computed on
/// deviations from the first value so a constant sample gives exactly 0.
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let shift = values[0];
    let d: Vec<f64> = values.iter().map(|x| x - shift).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let ss: f64 = d.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn replicate_log(dataset: &ComparisonDataset, config: &BootstrapConfig, r: usize) -> Option<f64> {
    let n = dataset.n_items();
    let mut rng = replicate_rng(config.seed, r as u64);
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    match config.statistic {
        Statistic::Bilateral { method, target, base } => {
            let view = dataset.view(target, base).ok()?.resample(&rows).ok()?;
            bilateral::compute(&view, method, &config.options).ok().map(|e| e.log_value)
        }
        Statistic::Geks { target, base } => {
            let d = dataset.select_rows(&rows).ok()?;
            geks::geks_indexes(&d, base).ok().map(|g| g.log_indexes[target])
        }
    }
}

/// Nonparametric bootstrap SE: item rows (prices and expenditures in all
/// locations) are drawn with replacement and the statistic is recomputed.
pub fn bootstrap_se(dataset: &ComparisonDataset, config: &BootstrapConfig) -> Result<BootstrapResult> {
    if config.replications < 2 {
        return Err(IndexError::InvalidConfig("bootstrap needs at least 2 replications".into()));
    }
    let (point_log, var) = evaluate(dataset, &config.statistic, &config.options)?;
    let logs: Vec<Option<f64>> =
        (0..config.replications).into_par_iter().map(|r| replicate_log(dataset, config, r)).collect();
    let kept: Vec<f64> = logs.into_iter().flatten().collect();
    if kept.len() < 2 {
        return Err(IndexError::InsufficientReplicates { effective: kept.len() });
    }
    let dropped = config.replications - kept.len();
    let warning = (dropped * 100 > config.replications).then(|| {
        format!("{dropped} of {} replicates dropped as undefined", config.replications)
    });
    Ok(BootstrapResult {
        statistic: config.statistic,
        point_log,
        se_log: sample_sd(&kept),
        replications: config.replications,
        replicate_count_effective: kept.len(),
        delta_se_log: Some(var.sqrt()),
        warning,
    })
}

/// Covariance of the price errors `e_n = (e_n1, ..., e_nM)` across locations.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorSpec {
    /// The same variance `sigma^2` for every item and location, with
    /// correlation `correlation` between any two locations.
    Homoskedastic { sigma: f64, correlation: f64 },
    /// One `M x M` covariance matrix per item.
    PerItem(Vec<DMatrix<f64>>),
}

/// Law-of-one-price world: `ln p_nj = ln P_j + d_n + e_nj`, with Dirichlet
/// expenditure shares drawn independently of the errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LopGenerator {
    pub n_items: usize,
    /// `ln P_j` for each location.
    pub log_levels: Vec<f64>,
    /// Standard deviation of the item effects `d_n`.
    pub item_effect_sd: f64,
    pub errors: ErrorSpec,
    /// Symmetric Dirichlet concentration of each location's shares.
    pub dirichlet_alpha: f64,
    /// Total expenditure of every location.
    pub total_expenditure: f64,
}

impl LopGenerator {
    /// Two locations with log price gap 0.3 and i.i.d. errors of s.d. `sigma`.
    pub fn two_location(n_items: usize, sigma: f64) -> Self {
        Self {
            n_items,
            log_levels: vec![0.3, 0.0],
            item_effect_sd: 0.5,
            errors: ErrorSpec::Homoskedastic { sigma, correlation: 0.0 },
            dirichlet_alpha: 2.0,
            total_expenditure: 1000.0,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.log_levels.len()
    }

    /// One line describing the expenditure model, for output metadata.
    pub fn expenditure_model(&self) -> String {
        format!(
            "shares ~ Dirichlet({}) per location, independent of price errors; total expenditure {}",
            self.dirichlet_alpha, self.total_expenditure
        )
    }

    /// Per-item factors `F` with `F F'` the error covariance.
    fn error_factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let m = self.n_locations();
        match &self.errors {
            ErrorSpec::Homoskedastic { sigma, correlation } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(IndexError::InvalidCovariance(format!("sigma must be nonnegative, got {sigma}")));
                }
                let s2 = sigma * sigma;
                let cov = DMatrix::from_fn(m, m, |a, b| if a == b { s2 } else { s2 * correlation });
                let f = factor(&cov)?;
                Ok(vec![f; self.n_items])
            }
            ErrorSpec::PerItem(covs) => {
                if covs.len() != self.n_items {
                    return Err(IndexError::InvalidCovariance(format!(
                        "{} covariance matrices for {} items",
                        covs.len(),
                        self.n_items
                    )));
                }
                covs.iter().map(factor).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_items < 2 || self.n_locations() < 2 {
            return Err(IndexError::TooSmall { items: self.n_items, locations: self.n_locations() });
        }
        if !(self.dirichlet_alpha > 0.0) || !(self.total_expenditure > 0.0) || !(self.item_effect_sd >= 0.0) {
            return Err(IndexError::InvalidConfig(
                "Dirichlet concentration and total expenditure must be positive, item effect s.d. nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Symmetric square-root-like factor via eigen decomposition; rejects
/// asymmetric or indefinite matrices.
fn factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = cov.nrows();
    if cov.ncols() != m {
        return Err(IndexError::InvalidCovariance("covariance must be square".into()));
    }
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(IndexError::InvalidCovariance("nonfinite entry".into()));
    }
    let scale = cov.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).iter().any(|x| x.abs() > 1e-12 * scale) {
        return Err(IndexError::InvalidCovariance("covariance must be symmetric".into()));
    }
    let eig = cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-12 * scale {
        return Err(IndexError::InvalidCovariance(format!("not positive semidefinite (eigenvalue {min})")));
    }
    let mut f = eig.eigenvectors.clone();
    for (mut col, lam) in f.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= lam.max(0.0).sqrt();
    }
    Ok(f)
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LopSample {
    pub dataset: ComparisonDataset,
    pub log_levels: Vec<f64>,
    pub item_effects: Vec<f64>,
}

impl LopSample {
    /// `ln P_j - ln P_k`.
    pub fn true_log_parity(&self, target: usize, base: usize) -> f64 {
        self.log_levels[target] - self.log_levels[base]
    }
}

/// Draws one dataset from `generator` using `rng`.
pub fn generate_with_rng<R: Rng + ?Sized>(generator: &LopGenerator, rng: &mut R) -> Result<LopSample> {
    generator.validate()?;
    let factors = generator.error_factors()?;
    let (n, m) = (generator.n_items, generator.n_locations());
    let effect = Normal::new(0.0, generator.item_effect_sd)
        .map_err(|e| IndexError::InvalidConfig(format!("item effect distribution: {e}")))?;
    let gamma = Gamma::new(generator.dirichlet_alpha, 1.0)
        .map_err(|e| IndexError::InvalidConfig(format!("Dirichlet concentration: {e}")))?;

    let mut prices = DMatrix::zeros(n, m);
    let mut item_effects = Vec::with_capacity(n);
    for (i, f) in factors.iter().enumerate() {
        let d = effect.sample(rng);
        item_effects.push(d);
        let z = nalgebra::DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let e = f * z;
        for j in 0..m {
            prices[(i, j)] = (generator.log_levels[j] + d + e[j]).exp();
        }
    }
    let mut expenditures = DMatrix::zeros(n, m);
    for j in 0..m {
        let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        for i in 0..n {
            expenditures[(i, j)] = generator.total_expenditure * g[i] / total;
        }
    }
    let dataset = ComparisonDataset::new(
        (1..=n).map(|i| format!("item{i:03}")).collect(),
        (1..=m).map(|j| format!("L{j}")).collect(),
        prices,
        expenditures,
    )?;
    Ok(LopSample { dataset, log_levels: generator.log_levels.clone(), item_effects })
}

/// Draws one dataset from `generator`, deterministically in `seed`.
pub fn generate_lop_dataset(generator: &LopGenerator, seed: u64) -> Result<LopSample> {
    generate_with_rng(generator, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Empirical coverage of `log estimate ± 1.96 se` for the true log parity.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub method: IndexMethod,
    pub replications: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Mean delta-method SE of the log estimate.
    pub mean_se_log: f64,
    /// Standard deviation of the log estimates across replications.
    pub empirical_sd_log: f64,
    /// Mean of `log estimate - truth`.
    pub mean_error: f64,
}

/// Absolute slack on the interval bounds, so zero-width intervals at the
/// truth count as covering despite rounding in `exp`/`ln`.
pub const COVERAGE_SLACK: f64 = 1e-12;

/// Runs `replications` independent datasets from `generator` and reports how
/// often the 95% interval of `method` for `(target, base)` covers the truth.
pub fn coverage_experiment(
    generator: &LopGenerator,
    method: IndexMethod,
    target: usize,
    base: usize,
    replications: usize,
    seed: u64,
) -> Result<CoverageReport> {
    if replications == 0 {
        return Err(IndexError::InvalidConfig("coverage needs at least one replication".into()));
    }
    let statistic = if method == IndexMethod::Geks {
        Statistic::Geks { target, base }
    } else {
        Statistic::Bilateral { method, target, base }
    };
    let draws: Vec<Result<(f64, f64, f64)>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let sample = generate_with_rng(generator, &mut replicate_rng(seed, r as u64))?;
            let (log, var) = evaluate(&sample.dataset, &statistic, &IndexOptions::default())?;
            Ok((log, var.sqrt(), sample.true_log_parity(target, base)))
        })
        .collect();
    let mut covered = 0;
    let mut se_sum = 0.0;
    let mut err_sum = 0.0;
    let mut logs = Vec::with_capacity(replications);
    for d in draws {
        let (log, se, truth) = d?;
        if (log - truth).abs() <= Z_95 * se + COVERAGE_SLACK {
            covered += 1;
        }
        se_sum += se;
        err_sum += log - truth;
        logs.push(log);
    }
    let r = replications as f64;
    Ok(CoverageReport {
        method,
        replications,
        covered,
        coverage: covered as f64 / r,
        mean_se_log: se_sum / r,
        empirical_sd_log: sample_sd(&logs),
        mean_error: err_sum / r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proportional() -> ComparisonDataset {
        let pk = [3.0, 7.0, 1.0, 12.0, 5.0, 2.0];
        ComparisonDataset::new(
            (0..6).map(|i| format!("i{i}")).collect(),
            vec!["j".into(), "k".into()],
            DMatrix::from_fn(6, 2, |i, c| if c == 0 { 1.25 * pk[i] } else { pk[i] }),
            DMatrix::from_fn(6, 2, |i, c| (i + 2 * c + 1) as f64),
        )
        .unwrap()
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let d = proportional();
        for m in IndexMethod::BILATERAL {
            let mut c = BootstrapConfig::new(Statistic::Bilateral { method: m, target: 0, base: 1 }, 3);
            c.replications = 200;
            let r = bootstrap_se(&d, &c).unwrap();
            assert_eq!(r.se_log, 0.0, "{m}");
            assert_eq!(r.replicate_count_effective, 200);
        }
        let mut c = BootstrapConfig::new(Statistic::Geks { target: 0, base: 1 }, 3);
        c.replications = 50;
        assert_eq!(bootstrap_se(&d, &c).unwrap().se_log, 0.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let s = generate_lop_dataset(&LopGenerator::two_location(40, 0.1), 9).unwrap();
        let mut c = BootstrapConfig::new(Statistic::Bilateral { method: IndexMethod::Fisher, target: 0, base: 1 }, 11);
        c.replications = 300;
        let a = bootstrap_se(&s.dataset, &c).unwrap();
        let b = bootstrap_se(&s.dataset, &c).unwrap();
        assert_eq!(a, b);
        c.seed = 12;
        assert_ne!(a.se_log, bootstrap_se(&s.dataset, &c).unwrap().se_log);
    }

    #[test]
    fn rejects_too_few_replications() {
        let mut c = BootstrapConfig::new(Statistic::Bilateral { method: IndexMethod::Fisher, target: 0, base: 1 }, 1);
        c.replications = 1;
        assert!(bootstrap_se(&proportional(), &c).is_err());
    }

    #[test]
    fn sample_sd_matches_textbook() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let mean = 3.5;
        let want = (x.iter().map(|v: &f64| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((sample_sd(&x) - want).abs() < 1e-15);
        assert_eq!(sample_sd(&[0.1; 10]), 0.0);
    }

    #[test]
    fn generator_is_deterministic_and_noiseless_case_is_exact() {
        let g = LopGenerator::two_location(30, 0.0);
        let a = generate_lop_dataset(&g, 5).unwrap();
        assert_eq!(a, generate_lop_dataset(&g, 5).unwrap());
        let v = a.dataset.view(0, 1).unwrap();
        for m in IndexMethod::BILATERAL {
            let e = bilateral::compute(&v, m, &IndexOptions::default()).unwrap();
            assert!((e.log_value - 0.3).abs() < 1e-14, "{m}");
        }
        let r = coverage_experiment(&g, IndexMethod::Tornqvist, 0, 1, 50, 1).unwrap();
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn invalid_covariances() {
        let mut g = LopGenerator::two_location(3, 0.1);
        g.errors = ErrorSpec::Homoskedastic { sigma: 0.1, correlation: 1.5 };
        assert!(matches!(generate_lop_dataset(&g, 1), Err(IndexError::InvalidCovariance(_))));
        g.errors = ErrorSpec::PerItem(vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]); 3]);
        assert!(matches!(generate_lop_dataset(&g, 1), Err(IndexError::InvalidCovariance(_))));
        g.errors = ErrorSpec::PerItem(vec![DMatrix::identity(2, 2); 2]);
        assert!(matches!(generate_lop_dataset(&g, 1), Err(IndexError::InvalidCovariance(_))));
        g.errors = ErrorSpec::PerItem(vec![DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]); 3]);
        assert!(generate_lop_dataset(&g, 1).is_ok());
    }
}
