//! Subcommand implementations. Everything that touches the filesystem lives
//! here; the numerics come from `ideal_index`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ideal_index::dissimilarity::{self, DissimilarityOptions, DissimilarityReport, Measure};
use ideal_index::format::g17;
use ideal_index::properties::{self, PropertyCheck, PropertyReport, SuiteOptions};
use ideal_index::resampling::{self, BootstrapConfig, LopGenerator, Statistic};
use ideal_index::tolerance::{self as tol, rel_gap};
use ideal_index::{geks, lop, variance, ComparisonDataset, IndexMethod, IndexOptions};
use rayon::prelude::*;

/// Display factor applied to dissimilarity values when `scale_150` is set.
pub const DISPLAY_SCALE: f64 = 150.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub n_items: usize,
    /// `ln P_j` per location; the last location is the base.
    pub log_levels: Vec<f64>,
    pub sigma: f64,
    pub correlation: f64,
    /// Also run a coverage experiment with this many replications.
    pub coverage_replications: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n_items: 150, log_levels: vec![0.3, 0.0], sigma: 0.1, correlation: 0.0, coverage_replications: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub prices: Option<PathBuf>,
    pub expenditures: Option<PathBuf>,
    /// Base location id; the last column when absent.
    pub base: Option<String>,
    pub methods: Vec<IndexMethod>,
    pub out: PathBuf,
    pub seed: u64,
    pub index: IndexOptions,
    pub d6_method: IndexMethod,
    pub replications: usize,
    pub scale_150: bool,
    pub trials: usize,
    pub inject_fault: bool,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            prices: None,
            expenditures: None,
            base: None,
            methods: IndexMethod::BILATERAL.to_vec(),
            out: out.into(),
            seed: 0,
            index: IndexOptions::default(),
            d6_method: IndexMethod::Tornqvist,
            replications: BootstrapConfig::DEFAULT_REPLICATIONS,
            scale_150: false,
            trials: 100,
            inject_fault: false,
            simulate: SimulateConfig::default(),
        }
    }

    pub fn with_inputs(mut self, prices: impl Into<PathBuf>, expenditures: impl Into<PathBuf>) -> Self {
        self.prices = Some(prices.into());
        self.expenditures = Some(expenditures.into());
        self
    }

    fn dissimilarity_options(&self) -> DissimilarityOptions {
        DissimilarityOptions { index: self.index, d6_method: self.d6_method }
    }
}

/// What a run produced. `passed` is false only for validation failures.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
    pub messages: Vec<String>,
}

impl Outcome {
    fn ok(files: Vec<PathBuf>) -> Self {
        Self { files, passed: true, messages: Vec::new() }
    }
}

pub fn load_dataset(prices: &Path, expenditures: &Path) -> Result<ComparisonDataset> {
    let p = File::open(prices).with_context(|| format!("opening {}", prices.display()))?;
    let e = File::open(expenditures).with_context(|| format!("opening {}", expenditures.display()))?;
    ComparisonDataset::from_csv_readers(p, e)
        .with_context(|| format!("loading {} and {}", prices.display(), expenditures.display()))
}

fn dataset_and_base(config: &RunConfig) -> Result<(ComparisonDataset, usize)> {
    let (Some(p), Some(e)) = (&config.prices, &config.expenditures) else {
        bail!("--prices and --expenditures are required");
    };
    let d = load_dataset(p, e)?;
    let base = match &config.base {
        Some(id) => d.location_index(id)?,
        None => d.n_locations() - 1,
    };
    Ok((d, base))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes `rows` under `header` to `dir/name`.
fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path)
}

fn opt(x: Option<f64>) -> String {
    x.map(g17).unwrap_or_default()
}

/// One `indexes.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub target: String,
    pub base: String,
    pub method: IndexMethod,
    pub result: std::result::Result<ideal_index::IndexEstimate, String>,
}

/// Every requested method for every target against the base. Row order is
/// target, then method in the order given.
pub fn bilateral_rows(d: &ComparisonDataset, base: usize, methods: &[IndexMethod], index: &IndexOptions) -> Vec<IndexRow> {
    let targets: Vec<usize> = (0..d.n_locations()).filter(|&t| t != base).collect();
    let geks = methods.contains(&IndexMethod::Geks).then(|| geks::geks_variance(d, base));
    let base_id = d.locations()[base].clone();
    targets
        .par_iter()
        .flat_map_iter(|&t| {
            let view = d.view(t, base);
            let base_id = base_id.clone();
            let geks = &geks;
            methods.iter().map(move |&m| {
                let result = match (&view, m) {
                    (Err(e), _) => Err(e.to_string()),
                    (Ok(_), IndexMethod::Geks) => match geks.as_ref().expect("requested") {
                        Ok(g) => {
                            let log = g.log_indexes[t];
                            Ok(ideal_index::IndexEstimate {
                                method: m,
                                value: log.exp(),
                                log_value: log,
                                var_log: g.var_log.as_ref().map(|v| v[t]),
                                base: base_id.clone(),
                                target: d.locations()[t].clone(),
                            })
                        }
                        Err(e) => Err(e.to_string()),
                    },
                    (Ok(v), m) => variance::estimate(v, m, index).map_err(|e| e.to_string()),
                };
                IndexRow { target: d.locations()[t].clone(), base: base_id.clone(), method: m, result }
            })
        })
        .collect()
}

/// Per method, the mean of `100 |ln P_method - ln P_Fisher|` over targets
/// where both are defined, and how many targets that was.
pub fn comparison_table(rows: &[IndexRow], methods: &[IndexMethod]) -> Vec<(IndexMethod, f64, usize)> {
    let fisher: std::collections::BTreeMap<&str, f64> = rows
        .iter()
        .filter(|r| r.method == IndexMethod::Fisher)
        .filter_map(|r| r.result.as_ref().ok().map(|e| (r.target.as_str(), e.log_value)))
        .collect();
    methods
        .iter()
        .filter(|&&m| m != IndexMethod::Fisher)
        .map(|&m| {
            let gaps: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| {
                    let e = r.result.as_ref().ok()?;
                    Some(100.0 * (e.log_value - fisher.get(r.target.as_str())?).abs())
                })
                .collect();
            let mean = if gaps.is_empty() { f64::NAN } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
            (m, mean, gaps.len())
        })
        .collect()
}

pub fn run_bilateral(config: &RunConfig) -> Result<Outcome> {
    if config.methods.is_empty() {
        bail!("no index methods selected");
    }
    let (d, base) = dataset_and_base(config)?;
    prepare_out(&config.out)?;
    let mut methods = config.methods.clone();
    if !methods.contains(&IndexMethod::Fisher) {
        // The comparison table is relative to Fisher.
        methods.push(IndexMethod::Fisher);
    }
    let rows = bilateral_rows(&d, base, &methods, &config.index);
    let shown: Vec<Vec<String>> = rows
        .iter()
        .filter(|r| config.methods.contains(&r.method))
        .map(|r| {
            let mut v = vec![r.target.clone(), r.base.clone(), r.method.name().to_string()];
            match &r.result {
                Ok(e) => {
                    let ci = e.ci95_log();
                    v.extend([
                        "ok".to_string(),
                        g17(e.value),
                        g17(e.log_value),
                        opt(e.se_log()),
                        opt(ci.map(|c| c.0)),
                        opt(ci.map(|c| c.1)),
                    ]);
                }
                Err(msg) => {
                    v.push(msg.clone());
                    v.extend(std::iter::repeat_n(String::new(), 5));
                }
            }
            v
        })
        .collect();
    let mut messages = Vec::new();
    let failed = rows.iter().filter(|r| r.result.is_err() && config.methods.contains(&r.method)).count();
    if failed > 0 {
        messages.push(format!("{failed} index rows could not be computed; see the status column"));
    }
    let a = write_csv(
        &config.out,
        "indexes.csv",
        &["target", "base", "method", "status", "value", "log_value", "se_log", "ci95_low_log", "ci95_high_log"],
        &shown,
    )?;
    let table: Vec<Vec<String>> = comparison_table(&rows, &config.methods)
        .into_iter()
        .map(|(m, mean, n)| vec![m.name().to_string(), g17(mean), n.to_string()])
        .collect();
    let b = write_csv(&config.out, "comparison_table.csv", &["method", "mean_abs_log_gap_x100", "targets"], &table)?;
    Ok(Outcome { files: vec![a, b], passed: true, messages })
}

pub fn run_geks(config: &RunConfig) -> Result<Outcome> {
    let (d, base) = dataset_and_base(config)?;
    prepare_out(&config.out)?;
    let g = geks::geks_variance(&d, base)?;
    let var = g.var_log.as_ref().expect("variance requested");
    let residuals = g.transitivity_residuals();
    let rows: Vec<Vec<String>> = (0..d.n_locations())
        .map(|j| {
            vec![
                g.locations[j].clone(),
                g.base.clone(),
                g17(g.log_indexes[j].exp()),
                g17(g.log_indexes[j]),
                g17(var[j].sqrt()),
                g17(residuals[j]),
            ]
        })
        .collect();
    let a = write_csv(
        &config.out,
        "geks.csv",
        &["location", "base", "geks", "log_geks", "se_log", "transitivity_residual"],
        &rows,
    )?;
    let gaps: Vec<_> = geks::geks_fisher_gap_report(&d, base)?.into_iter().filter(|r| r.location != g.base).collect();
    let vs: Vec<Vec<String>> = gaps
        .iter()
        .map(|r| {
            vec![r.location.clone(), g17(r.geks_log), g17(r.fisher_log), g17(r.gap_pct), g17(r.fisher_se_log)]
        })
        .collect();
    let b = write_csv(
        &config.out,
        "geks_vs_fisher.csv",
        &["location", "log_geks", "log_fisher", "gap_x100", "fisher_se_log"],
        &vs,
    )?;
    let se: Vec<Vec<String>> = gaps
        .iter()
        .map(|r| {
            vec![r.location.clone(), g17(r.fisher_se_log), g17(r.geks_se_log), g17(r.geks_se_log / r.fisher_se_log)]
        })
        .collect();
    let c = write_csv(&config.out, "se_compare.csv", &["location", "fisher_se_log", "geks_se_log", "se_ratio"], &se)?;
    Ok(Outcome::ok(vec![a, b, c]))
}

/// Reports for every ordered pair, row-major (target, base).
pub fn all_pair_reports(d: &ComparisonDataset, opts: &DissimilarityOptions) -> Result<Vec<Option<DissimilarityReport>>> {
    let m = d.n_locations();
    (0..m * m)
        .into_par_iter()
        .map(|c| {
            let (j, k) = (c / m, c % m);
            if j == k {
                return Ok(None);
            }
            Ok(Some(dissimilarity::dissimilarity_report(&d.view(j, k)?, opts)?))
        })
        .collect::<ideal_index::Result<Vec<_>>>()
        .map_err(Into::into)
}

pub fn run_dissimilarity(config: &RunConfig) -> Result<Outcome> {
    let opts = config.dissimilarity_options();
    if opts.d6_method.weight_kind().is_none() {
        bail!("--d6-method must be tornqvist, sv or pd");
    }
    let (d, base) = dataset_and_base(config)?;
    prepare_out(&config.out)?;
    let m = d.n_locations();
    let reports = all_pair_reports(&d, &opts)?;
    let mut files = Vec::new();
    let mut messages = Vec::new();
    let mut header = vec!["location".to_string()];
    header.extend(d.locations().iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for meas in Measure::ALL {
        let rows: Vec<Vec<String>> = (0..m)
            .map(|j| {
                let mut row = vec![d.locations()[j].clone()];
                row.extend((0..m).map(|k| match &reports[j * m + k] {
                    None => "0".to_string(),
                    Some(r) => r.values.get(&meas).map(|&v| g17(v)).unwrap_or_default(),
                }));
                row
            })
            .collect();
        files.push(write_csv(&config.out, &format!("dissimilarity_{}.csv", meas.name()), &header, &rows)?);
    }

    let mut vs_header = vec!["target", "base"];
    vs_header.extend(Measure::ALL.iter().map(|m| m.name()));
    let scaled: Vec<String> = Measure::ALL.iter().map(|m| format!("{}_x150", m.name())).collect();
    if config.scale_150 {
        vs_header.extend(scaled.iter().map(String::as_str));
    }
    vs_header.push("notes");
    let mut vs = Vec::new();
    let mut contributions = Vec::new();
    for j in (0..m).filter(|&j| j != base) {
        let r = reports[j * m + base].as_ref().expect("off-diagonal");
        let mut row = vec![r.target.clone(), r.base.clone()];
        row.extend(Measure::ALL.iter().map(|q| r.values.get(q).map(|&v| g17(v)).unwrap_or_default()));
        if config.scale_150 {
            row.extend(Measure::ALL.iter().map(|q| r.values.get(q).map(|&v| g17(DISPLAY_SCALE * v)).unwrap_or_default()));
        }
        let mut notes: Vec<String> = r.errors.iter().map(|(q, e)| format!("{}: {e}", q.name())).collect();
        notes.extend(r.warnings.iter().cloned());
        messages.extend(r.warnings.iter().cloned());
        row.push(notes.join("; "));
        vs.push(row);
        for (q, c) in &r.contributions {
            for (item, x) in d.items().iter().zip(c) {
                let mut row = vec![r.target.clone(), r.base.clone(), item.clone(), q.name().to_string(), g17(*x)];
                if config.scale_150 {
                    row.push(g17(DISPLAY_SCALE * x));
                }
                contributions.push(row);
            }
        }
    }
    files.push(write_csv(&config.out, "dissimilarity_vs_base.csv", &vs_header, &vs)?);
    let mut c_header = vec!["target", "base", "item", "measure", "contribution"];
    if config.scale_150 {
        c_header.push("contribution_x150");
    }
    files.push(write_csv(&config.out, "contributions.csv", &c_header, &contributions)?);
    Ok(Outcome { files, passed: true, messages })
}

pub fn run_bootstrap(config: &RunConfig) -> Result<Outcome> {
    if config.replications < 2 {
        bail!("--replications must be at least 2");
    }
    if config.methods.is_empty() {
        bail!("no index methods selected");
    }
    let (d, base) = dataset_and_base(config)?;
    prepare_out(&config.out)?;
    let mut rows = Vec::new();
    let mut messages = Vec::new();
    for t in (0..d.n_locations()).filter(|&t| t != base) {
        for &method in &config.methods {
            let statistic = if method == IndexMethod::Geks {
                Statistic::Geks { target: t, base }
            } else {
                Statistic::Bilateral { method, target: t, base }
            };
            let cfg = BootstrapConfig { replications: config.replications, seed: config.seed, statistic, options: config.index };
            let mut row = vec![d.locations()[t].clone(), d.locations()[base].clone(), method.name().to_string()];
            match resampling::bootstrap_se(&d, &cfg) {
                Ok(r) => {
                    if let Some(w) = &r.warning {
                        messages.push(format!("{} {}: {w}", row[0], row[2]));
                    }
                    row.extend([
                        "ok".to_string(),
                        g17(r.point_log),
                        opt(r.delta_se_log),
                        g17(r.se_log),
                        r.replications.to_string(),
                        r.replicate_count_effective.to_string(),
                        r.warning.unwrap_or_default(),
                    ]);
                }
                Err(e) => {
                    row.push(e.to_string());
                    row.extend(std::iter::repeat_n(String::new(), 6));
                }
            }
            rows.push(row);
        }
    }
    let f = write_csv(
        &config.out,
        "bootstrap.csv",
        &[
            "target",
            "base",
            "method",
            "status",
            "log_value",
            "formula_se_log",
            "bootstrap_se_log",
            "replications",
            "effective_replications",
            "warning",
        ],
        &rows,
    )?;
    Ok(Outcome { files: vec![f], passed: true, messages })
}

/// Largest identity gaps on a user dataset, each target against the base.
fn dataset_checks(d: &ComparisonDataset, base: usize, index: &IndexOptions) -> Vec<PropertyCheck> {
    let mut composition: f64 = 0.0;
    let mut level: f64 = 0.0;
    let mut log_route: f64 = 0.0;
    let mut moments: f64 = 0.0;
    let targets: Vec<usize> = (0..d.n_locations()).filter(|&t| t != base).collect();
    for &t in &targets {
        let Ok(view) = d.view(t, base) else { continue };
        if let (Ok(b), Ok(v)) = (variance::lp_variance_bundle(&view), variance::var_log_fisher(&view)) {
            composition = composition.max(rel_gap(b.compose_fisher(), v));
        }
        for w in lop::LopWeighting::LEVEL.into_iter().chain(lop::LopWeighting::LOG) {
            let (Ok(s), Ok(direct)) = (lop::solve(&view, w), variance::estimate(&view, w.counterpart(), index)) else {
                continue;
            };
            let gap = rel_gap(s.parity, direct.value);
            let var_gap = lop::variance(&s, &view).map(|v| rel_gap(v, direct.var_log.unwrap_or(f64::NAN))).unwrap_or(0.0);
            if w.is_level() {
                level = level.max(gap).max(var_gap);
            } else {
                log_route = log_route.max(gap).max(var_gap);
            }
            if let Ok(r) = lop::max_moment_residual(&s, &view) {
                moments = moments.max(r);
            }
        }
    }
    let check = |name, anchor, tolerance, max_violation: f64| PropertyCheck {
        module: "input-data",
        name,
        anchor,
        tolerance,
        max_violation: if max_violation.is_nan() { f64::INFINITY } else { max_violation },
        trials: targets.len(),
        asserted: true,
    };
    vec![
        check("bundle composition = score-sum variance", "log-Fisher delta method", tol::ALGEBRAIC_REL, composition),
        check("level routes = Laspeyres/Paasche/Walsh", "law of one price, level form", tol::CROSS_ROUTE_REL, level),
        check("log routes = PD/Tornqvist/SV", "law of one price, log form", tol::CROSS_ROUTE_REL, log_route),
        check("moment conditions vanish", "weighted method of moments", tol::MOMENT_RESIDUAL_ABS, moments),
    ]
}

pub fn run_validate(config: &RunConfig) -> Result<Outcome> {
    prepare_out(&config.out)?;
    let mut report: PropertyReport =
        properties::run_all_properties_with(config.seed, config.trials, &SuiteOptions { inject_fault: config.inject_fault });
    if config.prices.is_some() || config.expenditures.is_some() {
        let (d, base) = dataset_and_base(config)?;
        report.checks.extend(dataset_checks(&d, base, &config.index));
    }
    let text = report.to_text();
    let a = config.out.join("validation_report.txt");
    fs::write(&a, &text).with_context(|| format!("writing {}", a.display()))?;
    let b = config.out.join("validation_report.csv");
    fs::write(&b, report.to_csv()).with_context(|| format!("writing {}", b.display()))?;
    let messages = report.failures().iter().map(|c| format!("FAILED {}: {}", c.module, c.name)).collect();
    Ok(Outcome { files: vec![a, b], passed: report.passed(), messages })
}

pub fn run_simulate(config: &RunConfig) -> Result<Outcome> {
    let s = &config.simulate;
    if s.log_levels.len() < 2 {
        bail!("simulate needs at least two locations");
    }
    let generator = LopGenerator {
        n_items: s.n_items,
        log_levels: s.log_levels.clone(),
        errors: resampling::ErrorSpec::Homoskedastic { sigma: s.sigma, correlation: s.correlation },
        ..LopGenerator::two_location(s.n_items, s.sigma)
    };
    prepare_out(&config.out)?;
    let sample = resampling::generate_lop_dataset(&generator, config.seed)?;
    let pp = config.out.join("prices.csv");
    let ep = config.out.join("expenditures.csv");
    {
        let mut p = BufWriter::new(File::create(&pp)?);
        let mut e = BufWriter::new(File::create(&ep)?);
        sample.dataset.write_csv(&mut p, &mut e)?;
        p.flush()?;
        e.flush()?;
    }
    let truth: Vec<Vec<String>> = sample
        .dataset
        .locations()
        .iter()
        .zip(&sample.log_levels)
        .map(|(l, x)| vec![l.clone(), g17(*x)])
        .collect();
    let t = write_csv(&config.out, "truth_levels.csv", &["location", "log_level"], &truth)?;
    let effects: Vec<Vec<String>> = sample
        .dataset
        .items()
        .iter()
        .zip(&sample.item_effects)
        .map(|(i, x)| vec![i.clone(), g17(*x)])
        .collect();
    let ti = write_csv(&config.out, "truth_items.csv", &["item", "item_effect"], &effects)?;
    let meta = config.out.join("simulation.txt");
    fs::write(
        &meta,
        format!(
            "seed {}\nitems {}\nlog levels {}\nerror s.d. {} correlation {}\nitem effect s.d. {}\n{}\n",
            config.seed,
            s.n_items,
            s.log_levels.iter().map(|x| g17(*x)).collect::<Vec<_>>().join(" "),
            g17(s.sigma),
            g17(s.correlation),
            g17(generator.item_effect_sd),
            generator.expenditure_model()
        ),
    )?;
    let mut files = vec![pp, ep, t, ti, meta];
    if let Some(reps) = s.coverage_replications {
        let base = s.log_levels.len() - 1;
        let rows: Vec<Vec<String>> = config
            .methods
            .iter()
            .map(|&m| -> Result<Vec<String>> {
                let r = resampling::coverage_experiment(&generator, m, 0, base, reps, config.seed)?;
                Ok(vec![
                    m.name().to_string(),
                    r.replications.to_string(),
                    r.covered.to_string(),
                    g17(r.coverage),
                    g17(r.mean_se_log),
                    g17(r.empirical_sd_log),
                    g17(r.mean_error),
                ])
            })
            .collect::<Result<_>>()?;
        files.push(write_csv(
            &config.out,
            "coverage.csv",
            &["method", "replications", "covered", "coverage", "mean_se_log", "empirical_sd_log", "mean_error"],
            &rows,
        )?);
    }
    Ok(Outcome::ok(files))
}
