//! Seedable random instances and the property suite that exercises every
//! module's invariants on them.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::bilateral::{self, IndexMethod, IndexOptions, WeightKind, ZeroShares};
use crate::data::{BilateralView, ComparisonDataset};
use crate::dissimilarity::{self, AxiomReport, DissimilarityOptions, Measure};
use crate::error::{IndexError, Result};
use crate::format::g17;
use crate::geks;
use crate::lop::{self, LopWeighting};
use crate::resampling::{self, BootstrapConfig, LopGenerator, Statistic};
use crate::tolerance::{self as tol, rel_gap};
use crate::variance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShareRegime {
    /// Every share above 0.005: a floor of 0.006 plus a Dirichlet(1) draw.
    #[default]
    PositiveDirichlet,
    /// Exactly one item per location with negative expenditure; the total
    /// stays positive.
    WithNegativeHeading,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    /// 2 to 50.
    pub n_items: usize,
    /// 2 to 8.
    pub n_locations: usize,
    pub share_regime: ShareRegime,
    /// Standard deviation of the log price noise around location levels and
    /// item effects.
    pub price_dispersion: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(n_items: usize, n_locations: usize, seed: u64) -> Self {
        Self { n_items, n_locations, share_regime: ShareRegime::default(), price_dispersion: 0.3, seed }
    }
}

const SHARE_FLOOR: f64 = 0.006;

fn floored_dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid gamma");
    let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = g.iter().sum();
    let free = 1.0 - SHARE_FLOOR * n as f64;
    g.iter().map(|x| SHARE_FLOOR + free * x / total).collect()
}

/// Random dataset satisfying every dataset invariant; deterministic in `spec.seed`.
pub fn random_instance(spec: &InstanceSpec) -> Result<ComparisonDataset> {
    let (n, m) = (spec.n_items, spec.n_locations);
    if !(2..=50).contains(&n) || !(2..=8).contains(&m) {
        return Err(IndexError::InvalidConfig(format!("instance size {n}x{m} outside 2..=50 x 2..=8")));
    }
    if !(spec.price_dispersion > 0.0 && spec.price_dispersion.is_finite()) {
        return Err(IndexError::InvalidConfig("price dispersion must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let levels: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let effects: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut prices = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            prices[(i, j)] = (levels[j] + effects[i] + spec.price_dispersion * z).exp();
        }
    }
    let mut expenditures = DMatrix::zeros(n, m);
    for j in 0..m {
        let total = rng.random_range(50.0..5000.0);
        match spec.share_regime {
            ShareRegime::PositiveDirichlet => {
                for (i, s) in floored_dirichlet(&mut rng, n).into_iter().enumerate() {
                    expenditures[(i, j)] = total * s;
                }
            }
            ShareRegime::WithNegativeHeading => {
                let neg = rng.random_range(0..n);
                let rest = floored_dirichlet(&mut rng, n - 1);
                let mut it = rest.into_iter();
                for i in 0..n {
                    expenditures[(i, j)] = if i == neg {
                        -rng.random_range(0.02..0.1) * total
                    } else {
                        total * it.next().expect("n - 1 shares")
                    };
                }
            }
        }
    }
    ComparisonDataset::new(
        (1..=n).map(|i| format!("item{i}")).collect(),
        (1..=m).map(|j| format!("loc{j}")).collect(),
        prices,
        expenditures,
    )
}

/// One property's outcome over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub module: &'static str,
    pub name: &'static str,
    /// The theory the property comes from.
    pub anchor: &'static str,
    pub tolerance: f64,
    pub max_violation: f64,
    pub trials: usize,
    /// Informational checks are reported but never fail the suite.
    pub asserted: bool,
}

impl PropertyCheck {
    pub fn passed(&self) -> bool {
        !self.asserted || self.max_violation <= self.tolerance
    }

    pub fn status(&self) -> &'static str {
        match (self.asserted, self.passed()) {
            (false, _) => "INFO",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<PropertyCheck>,
    /// Evaluation errors met during the trials (each also fails a check).
    pub errors: Vec<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(PropertyCheck::passed)
    }

    pub fn failures(&self) -> Vec<&PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "property suite: seed {}, {} trials, {} checks", self.seed, self.trials, self.checks.len());
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<4} {:<15} {:<58} max {:<24} tol {:<8} [{}]",
                c.status(),
                c.module,
                c.name,
                g17(c.max_violation),
                short(c.tolerance),
                c.anchor
            );
        }
        for e in &self.errors {
            let _ = writeln!(s, "error: {e}");
        }
        let _ = writeln!(s, "{}", if self.passed() { "all asserted properties hold" } else { "FAILURES" });
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("module,property,anchor,tolerance,max_violation,trials,status\n");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{},\"{}\",\"{}\",{},{},{},{}",
                c.module,
                c.name,
                c.anchor,
                g17(c.tolerance),
                g17(c.max_violation),
                c.trials,
                c.status()
            );
        }
        s
    }
}

fn short(x: f64) -> String {
    if x == 0.0 { "0".into() } else { format!("{x:e}") }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SuiteOptions {
    /// Perturbs one computed quantity so the suite must fail. Used to test
    /// that failures propagate to the exit status.
    #[doc(hidden)]
    pub inject_fault: bool,
}

struct Spec {
    module: &'static str,
    name: &'static str,
    anchor: &'static str,
    tolerance: f64,
    asserted: bool,
}

const fn spec(module: &'static str, name: &'static str, anchor: &'static str, tolerance: f64) -> Spec {
    Spec { module, name, anchor, tolerance, asserted: true }
}

#[rustfmt::skip]
const CHECKS: &[Spec] = &[
    spec("core-data", "shares sum to one", "expenditure share definition", tol::SHARE_SUM_ABS),
    spec("core-data", "pi(j,k) * pi(k,j) = 1", "price relative definition", tol::RATIO_REL),
    spec("core-data", "unit rescaling leaves shares unchanged", "units of measurement", 0.0),
    spec("bilateral", "time reversal (Fisher, Walsh, Tornqvist, SV, PD)", "time reversal test", tol::ALGEBRAIC_REL),
    spec("bilateral", "Laspeyres(j,k) * Paasche(k,j) = 1", "time reversal test", tol::ALGEBRAIC_REL),
    spec("bilateral", "Fisher quantity reversal", "quantity reversal test", tol::ALGEBRAIC_REL),
    spec("bilateral", "identity: self-pair gives 1", "identity test", tol::IDENTITY_ABS),
    spec("bilateral", "proportional prices give lambda", "proportionality test", tol::ALGEBRAIC_REL),
    spec("bilateral", "unit invariance of all indexes", "commensurability test", tol::ALGEBRAIC_REL),
    spec("bilateral", "mean value: min pi <= P <= max pi", "mean value test", tol::ALGEBRAIC_REL),
    spec("bilateral", "weight schemes sum to one", "logarithmic index weights", tol::ALGEBRAIC_REL),
    spec("bilateral", "Fisher between Laspeyres and Paasche", "geometric mean bound", tol::ALGEBRAIC_REL),
    spec("bilateral", "value = exp(log value)", "index estimate invariant", tol::ALGEBRAIC_REL),
    spec("variance", "bundle composition = score-sum variance", "log-Fisher delta method", tol::ALGEBRAIC_REL),
    spec("variance", "Var(F) = Var(ln F) F^2", "level variance by delta method", tol::ALGEBRAIC_REL),
    spec("variance", "Var ln F symmetric in (j,k)", "symmetry of reliability", tol::ALGEBRAIC_REL),
    spec("variance", "Var ln F quantity reversal", "quantity reversal test", tol::ALGEBRAIC_REL),
    spec("variance", "unit invariance of all variances", "commensurability test", tol::ALGEBRAIC_REL),
    spec("variance", "Cauchy-Schwarz on Laspeyres/Paasche covariance", "covariance bound", tol::ALGEBRAIC_REL),
    spec("variance", "Fisher covariance matrix PSD", "Gram matrix of score vectors", tol::PSD_TRACE_FRACTION),
    spec("variance", "Cov(x, x) = Var(x)", "score inner products", tol::ALGEBRAIC_REL),
    spec("geks", "transitivity residual", "GEKS transitivity", tol::TRANSITIVITY_ABS),
    spec("geks", "base change shifts logs by a constant", "GEKS normalization", tol::BASE_CHANGE_ABS),
    spec("geks", "two locations: GEKS = Fisher (value and variance)", "GEKS degeneracy", tol::ALGEBRAIC_REL),
    spec("geks", "variances nonnegative, base exactly 0", "quadratic form in a PSD matrix", 0.0),
    spec("geks", "variance = dense 2M x 2M stacked covariance", "variance of a sum", tol::CROSS_ROUTE_REL),
    spec("dissimilarity", "D4, D5, D6 identical to the variances", "variance-based measures", 0.0),
    spec("dissimilarity", "contributions sum to the measure", "item contribution decomposition", tol::CONTRIBUTION_REL),
    spec("dissimilarity", "symmetry of D1..D6", "dissimilarity axioms", tol::ALGEBRAIC_REL),
    spec("dissimilarity", "D4 quantity reversal", "quantity reversal test", tol::ALGEBRAIC_REL),
    Spec { module: "dissimilarity", name: "D5 quantity reversal (reported only)", anchor: "quantity reversal test", tolerance: tol::ALGEBRAIC_REL, asserted: false },
    spec("dissimilarity", "single-item perturbation: 0 at t=0, > 0 otherwise", "monotone sanity", 0.0),
    spec("dissimilarity", "D1..D6 satisfy the seven axioms", "dissimilarity axioms", tol::AXIOM),
    spec("lop-equivalence", "level route parity = Laspeyres/Paasche/Walsh", "law of one price, level form", tol::CROSS_ROUTE_REL),
    spec("lop-equivalence", "level route variance = direct variance", "law of one price, level form", tol::CROSS_ROUTE_REL),
    spec("lop-equivalence", "log route ln parity = PD/Tornqvist/SV", "law of one price, log form", tol::CROSS_ROUTE_REL),
    spec("lop-equivalence", "log route variance = direct variance", "law of one price, log form", tol::CROSS_ROUTE_REL),
    spec("lop-equivalence", "moment conditions vanish", "weighted method of moments", tol::MOMENT_RESIDUAL_ABS),
    spec("lop-equivalence", "alpha_n = p_nj/(2P) + p_nk/2 exactly", "law of one price, level form", 0.0),
    spec("property-suite", "no evaluation errors on valid instances", "suite integrity", 0.0),
];

#[rustfmt::skip]
const RESAMPLING_CHECKS: &[Spec] = &[
    spec("resampling", "bootstrap identical across reruns and thread counts", "determinism contract", 0.0),
    spec("resampling", "bootstrap of a constant statistic is 0", "bootstrap definition", 0.0),
    spec("resampling", "SE with R vs 2R replications", "bootstrap stability", tol::BOOTSTRAP_STABILITY_REL),
    spec("resampling", "generator deterministic in seed", "determinism contract", 0.0),
];

const N_CHECKS: usize = CHECKS.len();
const ERRORS: usize = N_CHECKS - 1;

struct Violations(Vec<f64>);

impl Violations {
    fn new() -> Self {
        Self(vec![0.0; N_CHECKS])
    }

    fn record(&mut self, check: usize, v: f64) {
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > self.0[check] {
            self.0[check] = v;
        }
    }
}

fn log_methods() -> [IndexMethod; 5] {
    [IndexMethod::Fisher, IndexMethod::Walsh, IndexMethod::Tornqvist, IndexMethod::SatoVartia, IndexMethod::ProductDummy]
}

fn spec_for_trial(seed: u64, trial: usize) -> (InstanceSpec, usize, usize) {
    let mut rng = resampling::replicate_rng(seed, trial as u64);
    let n = rng.random_range(2..=50);
    let m = rng.random_range(2..=8);
    let dispersion = rng.random_range(0.05..0.6);
    let j = rng.random_range(0..m);
    let k = (j + rng.random_range(1..m)) % m;
    let s = InstanceSpec { n_items: n, n_locations: m, share_regime: ShareRegime::PositiveDirichlet, price_dispersion: dispersion, seed: rng.next_u64() };
    (s, j, k)
}

fn run_trial(seed: u64, trial: usize, opts: &SuiteOptions) -> Result<Vec<f64>> {
    let (spec, j, k) = spec_for_trial(seed, trial);
    let d = random_instance(&spec)?;
    let mut rng = resampling::replicate_rng(seed ^ 0x5eed_0f7e, trial as u64);
    let mut v = Violations::new();
    let io = IndexOptions::default();
    let view = d.view(j, k)?;
    let rev = d.view(k, j)?;
    let (n, m) = (d.n_items(), d.n_locations());

    // core-data
    for c in 0..m {
        v.record(0, (d.shares(c)?.shares.iter().sum::<f64>() - 1.0).abs());
    }
    for (a, b) in view.price_ratio().iter().zip(rev.price_ratio()) {
        v.record(1, (a * b - 1.0).abs());
    }
    let factors: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
    let rescaled = d.rescale_units(&factors)?;
    for c in 0..m {
        let diff = d.shares(c)?.shares.iter().zip(&rescaled.shares(c)?.shares).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v.record(2, diff);
    }

    // bilateral
    for meth in log_methods() {
        let a = bilateral::compute(&view, meth, &io)?.value;
        let b = bilateral::compute(&rev, meth, &io)?.value;
        v.record(3, (a * b - 1.0).abs());
    }
    v.record(4, (bilateral::laspeyres(&view)?.value * bilateral::paasche(&rev)?.value - 1.0).abs());
    let swapped = d.swap_quantities(j, k)?;
    let sview = swapped.view(j, k)?;
    v.record(5, rel_gap(bilateral::fisher(&view)?.value, bilateral::fisher(&sview)?.value));
    for c in 0..m {
        let sp = d.view(c, c)?;
        for meth in IndexMethod::BILATERAL {
            let e = bilateral::compute(&sp, meth, &io)?;
            v.record(6, (e.value - 1.0).abs().max(e.log_value.abs()));
        }
    }
    let lambda = rng.random_range(0.5..2.0);
    let prop = with_target_prices(&view, view.prices_k().iter().map(|p| lambda * p).collect())?;
    for meth in IndexMethod::BILATERAL {
        v.record(7, rel_gap(bilateral::compute(&prop, meth, &io)?.value, lambda));
    }
    let rview = rescaled.view(j, k)?;
    let (lo, hi) = view.price_ratio().iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    for meth in IndexMethod::BILATERAL {
        let a = variance::estimate(&view, meth, &io)?;
        let b = variance::estimate(&rview, meth, &io)?;
        v.record(8, rel_gap(a.value, b.value));
        v.record(17, rel_gap(a.var_log.unwrap_or(0.0), b.var_log.unwrap_or(0.0)));
        v.record(9, ((lo - a.value) / a.value).max((a.value - hi) / a.value).max(0.0));
        v.record(12, rel_gap(a.value, a.log_value.exp()));
    }
    for kind in [WeightKind::Arithmetic, WeightKind::Logarithmic, WeightKind::Harmonic] {
        let w = bilateral::weight_scheme(&view, kind, ZeroShares::Reject)?;
        v.record(10, (w.weights.iter().sum::<f64>() - 1.0).abs());
    }
    let (l, p, f) = (bilateral::laspeyres(&view)?.value, bilateral::paasche(&view)?.value, bilateral::fisher(&view)?.value);
    v.record(11, ((l.min(p) - f) / f).max((f - l.max(p)) / f).max(0.0));

    // variance
    let bundle = variance::lp_variance_bundle(&view)?;
    let vf = variance::var_log_fisher(&view)?;
    let composed = if opts.inject_fault { bundle.compose_fisher() * (1.0 + 1e-6) } else { bundle.compose_fisher() };
    v.record(13, rel_gap(composed, vf));
    v.record(14, rel_gap(variance::var_fisher_level(&view)?, vf * f * f));
    v.record(15, rel_gap(vf, variance::var_log_fisher(&rev)?));
    v.record(16, rel_gap(vf, variance::var_log_fisher(&sview)?));
    v.record(18, (bundle.cov_log.abs() - (bundle.var_log_laspeyres * bundle.var_log_inv_paasche).sqrt()).max(0.0));
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    let cov = variance::FisherCovariance::build(&d, &pairs)?;
    let trace = cov.matrix.trace();
    if trace > 0.0 {
        let min = cov.matrix.clone().symmetric_eigen().eigenvalues.min();
        v.record(19, (-min / trace).max(0.0));
    }
    v.record(20, rel_gap(variance::cov_log_fisher(&view, &view)?, vf));

    // geks
    let base = m - 1;
    let g = geks::geks_variance(&d, base)?;
    v.record(21, g.transitivity_residuals().into_iter().fold(0.0, f64::max));
    let g0 = geks::geks_indexes(&d, 0)?;
    for a in 0..m {
        for b in 0..m {
            v.record(22, (g.log_parity(a, b) - g0.log_parity(a, b)).abs());
        }
    }
    let d2 = d.select_locations(&[j, k])?;
    let g2 = geks::geks_variance(&d2, 1)?;
    v.record(23, rel_gap(g2.log_indexes[0], bilateral::fisher(&view)?.log_value));
    v.record(23, rel_gap(g2.var_log.as_ref().expect("variance")[0], vf));
    let gv = g.var_log.as_ref().expect("variance");
    v.record(24, gv.iter().fold(0.0f64, |a, &x| a.max(-x)).max(gv[base].abs()));
    for t in 0..m {
        if t != base {
            v.record(25, rel_gap(gv[t], dense_geks_variance(&d, t, base)?));
        }
    }

    // dissimilarity
    let dopts = DissimilarityOptions::default();
    let report = dissimilarity::dissimilarity_report(&view, &dopts)?;
    if !report.errors.is_empty() {
        return Err(IndexError::InvalidConfig(format!("dissimilarity errors: {:?}", report.errors)));
    }
    let t_scheme = bilateral::weight_scheme(&view, WeightKind::Arithmetic, ZeroShares::Reject)?;
    let same = [
        report.values[&Measure::D4] == vf,
        report.values[&Measure::D5] == variance::var_log_walsh(&view, io.walsh_negative)?,
        report.values[&Measure::D6] == variance::var_log_weighted(&view, &t_scheme)?,
    ];
    v.record(26, if same.iter().all(|&x| x) { 0.0 } else { 1.0 });
    let rreport = dissimilarity::dissimilarity_report(&rev, &dopts)?;
    let sreport = dissimilarity::dissimilarity_report(&sview, &dopts)?;
    for meas in Measure::ALL {
        let val = report.values[&meas];
        v.record(27, rel_gap(report.contributions[&meas].iter().sum(), val));
        v.record(28, rel_gap(val, rreport.values[&meas]));
    }
    v.record(29, rel_gap(report.values[&Measure::D4], sreport.values[&Measure::D4]));
    v.record(30, rel_gap(report.values[&Measure::D5], sreport.values[&Measure::D5]));
    let doubled = with_target_prices(&view, view.prices_k().iter().map(|p| 2.0 * p).collect())?;
    let item = rng.random_range(0..n);
    for meas in Measure::ALL {
        v.record(31, dissimilarity::measure_value(&doubled, meas, &dopts)?.abs());
        for t in [-0.1, 0.1] {
            let mut pj = doubled.prices_j().to_vec();
            pj[item] *= 1.0 + t;
            let bumped = with_target_prices(&view, pj)?;
            if dissimilarity::measure_value(&bumped, meas, &dopts)? <= 0.0 {
                v.record(31, 1.0);
            }
        }
    }
    for meas in Measure::ALL {
        let r = dissimilarity::axiom_check(meas, &d, 3, rng.next_u64(), &dopts)?;
        v.record(32, r.max_violation.iter().cloned().fold(0.0, f64::max));
    }

    // lop-equivalence
    let direct_level = [
        (LopWeighting::BaseQuantity, l, bundle.var_log_laspeyres),
        (LopWeighting::CurrentQuantity, p, bundle.var_log_inv_paasche),
        (
            LopWeighting::GeometricQuantity,
            bilateral::walsh(&view, io.walsh_negative)?.0.value,
            variance::var_log_walsh(&view, io.walsh_negative)?,
        ),
    ];
    for (w, value, var) in direct_level {
        let s = lop::solve_lop_level(&view, w)?;
        v.record(33, rel_gap(s.parity, value));
        v.record(34, rel_gap(lop::lop_variance_log(&s, &view)?, var));
        v.record(37, lop::max_moment_residual(&s, &view)?);
        if w == LopWeighting::BaseQuantity {
            for (i, a) in s.item_effects.iter().enumerate() {
                let want = view.prices_j()[i] / (2.0 * s.parity) + view.prices_k()[i] / 2.0;
                v.record(38, (a - want).abs());
            }
        }
    }
    for (w, kind) in [
        (LopWeighting::ProductDummy, WeightKind::Harmonic),
        (LopWeighting::Tornqvist, WeightKind::Arithmetic),
        (LopWeighting::SatoVartia, WeightKind::Logarithmic),
    ] {
        let s = lop::solve_lop_log(&view, w)?;
        let scheme = bilateral::weight_scheme(&view, kind, ZeroShares::Reject)?;
        v.record(35, (s.log_parity - bilateral::log_weighted_index(&view, &scheme)?.log_value).abs());
        v.record(36, rel_gap(lop::lop_log_variance(&s, &view)?, variance::var_log_weighted(&view, &scheme)?));
        v.record(37, lop::max_moment_residual(&s, &view)?);
    }
    Ok(v.0)
}

fn with_target_prices(view: &BilateralView, prices_j: Vec<f64>) -> Result<BilateralView> {
    BilateralView::from_columns(
        view.items().to_vec(),
        &view.target().id,
        &view.base().id,
        prices_j,
        view.prices_k().to_vec(),
        view.expenditures_j().to_vec(),
        view.expenditures_k().to_vec(),
    )
}

/// `1' S 1 / M^2` with `S` the covariance of the stacked Fisher logs
/// `(ln F_j1 .. ln F_jM, ln F_1b .. ln F_Mb)`, entry by entry from fresh views.
pub fn dense_geks_variance(dataset: &ComparisonDataset, target: usize, base: usize) -> Result<f64> {
    let m = dataset.n_locations();
    let mut views = Vec::with_capacity(2 * m);
    for c in 0..m {
        views.push(dataset.view(target, c)?);
    }
    for c in 0..m {
        views.push(dataset.view(c, base)?);
    }
    let mut s = DMatrix::zeros(2 * m, 2 * m);
    for a in 0..2 * m {
        for b in 0..2 * m {
            s[(a, b)] = variance::cov_log_fisher(&views[a], &views[b])?;
        }
    }
    Ok(s.sum() / (m * m) as f64)
}

fn resampling_checks(seed: u64) -> Result<Vec<f64>> {
    let gen = LopGenerator::two_location(150, 0.1);
    let sample = resampling::generate_lop_dataset(&gen, seed)?;
    let again = resampling::generate_lop_dataset(&gen, seed)?;
    let stat = Statistic::Bilateral { method: IndexMethod::Fisher, target: 0, base: 1 };
    let mut cfg = BootstrapConfig::new(stat, seed);
    cfg.replications = 500;
    let a = resampling::bootstrap_se(&sample.dataset, &cfg)?;
    let b = resampling::bootstrap_se(&sample.dataset, &cfg)?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| IndexError::InvalidConfig(e.to_string()))?
        .install(|| resampling::bootstrap_se(&sample.dataset, &cfg))?;
    let det = if a == b && a == single { 0.0 } else { 1.0 };

    let pk: Vec<f64> = (0..20).map(|i| (i * 7 % 13 + 1) as f64).collect();
    let prop = ComparisonDataset::new(
        (0..20).map(|i| format!("i{i}")).collect(),
        vec!["j".into(), "k".into()],
        DMatrix::from_fn(20, 2, |i, c| if c == 0 { 1.25 * pk[i] } else { pk[i] }),
        DMatrix::from_fn(20, 2, |i, c| (1 + (i * 3 + c) % 7) as f64),
    )?;
    let mut constant = 0.0f64;
    for m in IndexMethod::BILATERAL {
        let mut c = BootstrapConfig::new(Statistic::Bilateral { method: m, target: 0, base: 1 }, seed);
        c.replications = 100;
        constant = constant.max(resampling::bootstrap_se(&prop, &c)?.se_log);
    }

    let mut c2 = BootstrapConfig::new(stat, seed);
    c2.replications = 2000;
    let r1 = resampling::bootstrap_se(&sample.dataset, &c2)?.se_log;
    c2.replications = 4000;
    let r2 = resampling::bootstrap_se(&sample.dataset, &c2)?.se_log;
    let gen_det = if sample == again { 0.0 } else { 1.0 };
    Ok(vec![det, constant, rel_gap(r1, r2), gen_det])
}

/// Runs every module's invariants on `trials` random instances.
pub fn run_all_properties(seed: u64, trials: usize) -> PropertyReport {
    run_all_properties_with(seed, trials, &SuiteOptions::default())
}

pub fn run_all_properties_with(seed: u64, trials: usize, opts: &SuiteOptions) -> PropertyReport {
    let mut report = PropertyReport { seed, trials, checks: Vec::new(), errors: Vec::new() };
    if trials == 0 {
        return report;
    }
    let results: Vec<Result<Vec<f64>>> = (0..trials).into_par_iter().map(|t| run_trial(seed, t, opts)).collect();
    let mut worst = Violations::new();
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => {
                for (i, x) in v.into_iter().enumerate() {
                    worst.record(i, x);
                }
            }
            Err(e) => {
                worst.record(ERRORS, 1.0);
                report.errors.push(format!("trial {t}: {e}"));
            }
        }
    }
    for (s, &x) in CHECKS.iter().zip(&worst.0) {
        report.checks.push(PropertyCheck {
            module: s.module,
            name: s.name,
            anchor: s.anchor,
            tolerance: s.tolerance,
            max_violation: x,
            trials,
            asserted: s.asserted,
        });
    }
    let resampling = resampling_checks(seed).unwrap_or_else(|e| {
        report.errors.push(format!("resampling checks: {e}"));
        vec![f64::INFINITY; RESAMPLING_CHECKS.len()]
    });
    for (s, x) in RESAMPLING_CHECKS.iter().zip(resampling) {
        report.checks.push(PropertyCheck {
            module: s.module,
            name: s.name,
            anchor: s.anchor,
            tolerance: s.tolerance,
            max_violation: x,
            trials: 1,
            asserted: s.asserted,
        });
    }
    report
}

/// Axiom reports for D1..D6 over `instances` random positive-share datasets,
/// `pairs` sampled pairs each. Also returns the instances' sizes checked.
pub fn axiom_suite(seed: u64, instances: usize, pairs: usize) -> Result<Vec<AxiomReport>> {
    let opts = DissimilarityOptions::default();
    let per: Vec<Result<Vec<AxiomReport>>> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let (spec, _, _) = spec_for_trial(seed, i);
            let d = random_instance(&spec)?;
            Measure::ALL
                .iter()
                .enumerate()
                .map(|(q, &meas)| dissimilarity::axiom_check(meas, &d, pairs, spec.seed.wrapping_add(q as u64), &opts))
                .collect()
        })
        .collect();
    let mut merged: Vec<AxiomReport> = Measure::ALL
        .iter()
        .map(|&measure| AxiomReport { measure, trials: 0, max_violation: [0.0; 7], quantity_reversal: 0.0 })
        .collect();
    for reports in per {
        for (acc, r) in merged.iter_mut().zip(reports?) {
            acc.merge(&r);
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_deterministic() {
        let s = InstanceSpec::new(12, 4, 1);
        assert_eq!(random_instance(&s).unwrap(), random_instance(&s).unwrap());
        assert_ne!(random_instance(&s).unwrap(), random_instance(&InstanceSpec { seed: 2, ..s }).unwrap());
    }

    #[test]
    fn positive_regime_floor() {
        for seed in 0..20 {
            let d = random_instance(&InstanceSpec::new(50, 8, seed)).unwrap();
            for c in 0..8 {
                assert!(d.shares(c).unwrap().shares.iter().all(|&s| s > 0.005));
            }
        }
    }

    #[test]
    fn negative_heading_regime() {
        for seed in 0..20 {
            let s = InstanceSpec { share_regime: ShareRegime::WithNegativeHeading, ..InstanceSpec::new(10, 3, seed) };
            let d = random_instance(&s).unwrap();
            for c in 0..3 {
                let col = d.expenditures().column(c);
                assert_eq!(col.iter().filter(|&&e| e < 0.0).count(), 1);
                assert!(col.sum() > 0.0);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_specs() {
        assert!(random_instance(&InstanceSpec::new(51, 3, 0)).is_err());
        assert!(random_instance(&InstanceSpec::new(5, 9, 0)).is_err());
    }

    #[test]
    fn empty_suite() {
        let r = run_all_properties(7, 0);
        assert!(r.checks.is_empty());
        assert!(r.passed());
    }

    #[test]
    fn small_suite_passes_and_fault_is_caught() {
        let r = run_all_properties(42, 8);
        assert!(r.passed(), "{}", r.to_text());
        assert!(r.errors.is_empty());
        let bad = run_all_properties_with(42, 4, &SuiteOptions { inject_fault: true });
        assert!(!bad.passed());
    }
}
