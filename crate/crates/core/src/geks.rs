//! GEKS multilateral parities and their variance.
//!
//! `ln G_jb = (1/M) sum_k [ln F_jk + ln F_kb]` over all `M` locations, with
//! `F` the bilateral Fisher index. The variance propagates the per-item Fisher
//! scores: the log-GEKS score of location `j` against base `b` is
//! `R_j - R_b` with `R_j = sum_k u(j,k)`, so the variance is
//! `|R_j - R_b|^2 / M^2`. That is the quadratic form `1' S 1 / M^2` on the
//! stacked covariance of the `2M` Fisher logs, assembled from a Gram product.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bilateral;
use crate::data::ComparisonDataset;
use crate::error::Result;
use crate::variance;

#[derive(Debug, Clone, PartialEq)]
pub struct GeksResult {
    pub locations: Vec<String>,
    pub base: String,
    pub base_index: usize,
    /// `ln G_jb`; exactly 0 at the base.
    pub log_indexes: Vec<f64>,
    /// `Var(ln G_jb)`; `None` from [`geks_indexes`].
    pub var_log: Option<Vec<f64>>,
    /// `ln F_jk` (row = target, column = base), antisymmetric with zero diagonal.
    pub fisher_log_matrix: DMatrix<f64>,
}

impl GeksResult {
    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    /// `ln G_jk = ln G_jb - ln G_kb`.
    pub fn log_parity(&self, j: usize, k: usize) -> f64 {
        self.log_indexes[j] - self.log_indexes[k]
    }

    /// GEKS log parity of `j` against `k` evaluated directly from the Fisher
    /// matrix with `k` as base.
    pub fn direct_log_parity(&self, j: usize, k: usize) -> f64 {
        direct(&self.fisher_log_matrix, j, k)
    }

    /// For each location `j`, the largest `|G_jk - G_jl - G_lk|` over `k, l`,
    /// with every term evaluated directly from the Fisher matrix.
    pub fn transitivity_residuals(&self) -> Vec<f64> {
        let m = self.n_locations();
        let d = DMatrix::from_fn(m, m, |j, k| direct(&self.fisher_log_matrix, j, k));
        (0..m)
            .map(|j| {
                let mut worst = 0.0f64;
                for k in 0..m {
                    for l in 0..m {
                        worst = worst.max((d[(j, k)] - d[(j, l)] - d[(l, k)]).abs());
                    }
                }
                worst
            })
            .collect()
    }
}

fn direct(f: &DMatrix<f64>, j: usize, k: usize) -> f64 {
    let m = f.nrows();
    let s: f64 = (0..m).map(|l| f[(j, l)] + f[(l, k)]).sum();
    s / m as f64
}

/// Fisher log and (optionally) scores for every pair `j < k`, in a fixed order.
struct Pairwise {
    fisher: DMatrix<f64>,
    /// `R_j = sum_k u(j,k)` as columns of an `N x M` matrix.
    score_sums: Option<DMatrix<f64>>,
}

fn pairwise(dataset: &ComparisonDataset, with_scores: bool) -> Result<Pairwise> {
    let m = dataset.n_locations();
    let n = dataset.n_items();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|j| (j + 1..m).map(move |k| (j, k))).collect();
    let computed: Vec<Result<(f64, Option<Vec<f64>>)>> = pairs
        .par_iter()
        .map(|&(j, k)| {
            let view = dataset.view(j, k)?;
            let run = || -> Result<(f64, Option<Vec<f64>>)> {
                let f = bilateral::fisher(&view)?.log_value;
                let u = if with_scores { Some(variance::fisher_scores(&view)?.scores) } else { None };
                Ok((f, u))
            };
            run().map_err(|e| e.for_pair(&view.target().id, &view.base().id))
        })
        .collect();

    let mut fisher = DMatrix::zeros(m, m);
    let mut sums = with_scores.then(|| DMatrix::<f64>::zeros(n, m));
    for (&(j, k), res) in pairs.iter().zip(computed) {
        let (f, u) = res?;
        fisher[(j, k)] = f;
        fisher[(k, j)] = -f;
        if let (Some(sums), Some(u)) = (sums.as_mut(), u) {
            for (i, x) in u.iter().enumerate() {
                sums[(i, j)] += x;
                sums[(i, k)] -= x;
            }
        }
    }
    Ok(Pairwise { fisher, score_sums: sums })
}

fn assemble(dataset: &ComparisonDataset, base: usize, pw: Pairwise) -> GeksResult {
    let m = dataset.n_locations();
    let log_indexes = (0..m).map(|j| direct(&pw.fisher, j, base)).collect();
    let var_log = pw.score_sums.map(|r| {
        let m2 = (m * m) as f64;
        (0..m)
            .map(|j| {
                let d = r.column(j) - r.column(base);
                d.dot(&d) / m2
            })
            .collect()
    });
    GeksResult {
        locations: dataset.locations().to_vec(),
        base: dataset.locations()[base].clone(),
        base_index: base,
        log_indexes,
        var_log,
        fisher_log_matrix: pw.fisher,
    }
}

pub fn geks_indexes(dataset: &ComparisonDataset, base: usize) -> Result<GeksResult> {
    dataset.shares(base)?;
    let pw = pairwise(dataset, false)?;
    Ok(assemble(dataset, base, pw))
}

pub fn geks_variance(dataset: &ComparisonDataset, base: usize) -> Result<GeksResult> {
    dataset.shares(base)?;
    let pw = pairwise(dataset, true)?;
    Ok(assemble(dataset, base, pw))
}

/// One row of the GEKS-vs-Fisher comparison against the base.
#[derive(Debug, Clone, PartialEq)]
pub struct GeksGap {
    pub location: String,
    pub geks_log: f64,
    pub fisher_log: f64,
    /// `100 (ln G_jb - ln F_jb)`.
    pub gap_pct: f64,
    pub fisher_se_log: f64,
    pub geks_se_log: f64,
}

pub fn geks_fisher_gap_report(dataset: &ComparisonDataset, base: usize) -> Result<Vec<GeksGap>> {
    let g = geks_variance(dataset, base)?;
    let var = g.var_log.as_ref().expect("variance requested");
    (0..g.n_locations())
        .map(|j| {
            let view = dataset.view(j, base)?;
            let fisher_var = variance::var_log_fisher(&view)?;
            let fisher_log = g.fisher_log_matrix[(j, base)];
            Ok(GeksGap {
                location: g.locations[j].clone(),
                geks_log: g.log_indexes[j],
                fisher_log,
                gap_pct: 100.0 * (g.log_indexes[j] - fisher_log),
                fisher_se_log: fisher_var.sqrt(),
                geks_se_log: var[j].sqrt(),
            })
        })
        .collect()
}
