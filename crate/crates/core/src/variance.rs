//! Delta-method variances of the log indexes, Fisher score vectors and the
//! covariance matrix of log-Fisher indexes across pairs.
//!
//! Every variance here is a sum of per-item terms. The `*_terms` functions
//! return those terms; the dissimilarity measures reuse them directly so that
//! a measure and its variance come from the same code path.

use nalgebra::DMatrix;

use crate::bilateral::{
    self, relative_ratios, IndexEstimate, IndexMethod, IndexOptions, WalshNegative, WeightKind, WeightScheme,
};
use crate::data::{BilateralView, ComparisonDataset};
use crate::error::{IndexError, Result};

/// Variances of `ln P^L` and `ln(1/P^P)` and their covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpVarianceBundle {
    pub var_log_laspeyres: f64,
    pub var_log_inv_paasche: f64,
    pub cov_log: f64,
}

impl LpVarianceBundle {
    /// `¼(VarL + VarInvP − 2 Cov)`.
    pub fn compose_fisher(&self) -> f64 {
        0.25 * (self.var_log_laspeyres + self.var_log_inv_paasche - 2.0 * self.cov_log)
    }
}

/// Per-item summands `sigma_n = s_nk (pi_n / P^L - 1)` and `tau_n = s_nj (P^P / pi_n - 1)`.
pub(crate) fn sigma_tau(view: &BilateralView) -> Result<(Vec<f64>, Vec<f64>)> {
    let (r, rho) = relative_ratios(view);
    let (l, _) = bilateral::laspeyres_parts(view)?;
    let (p, _) = bilateral::paasche_parts(view)?;
    // Aggregates relative to the reference ratio, so pi/L = rho/a and P/pi = 1/(b rho).
    let a = l / r;
    let inv_b = p / r;
    let sigma = view.shares_k().shares.iter().zip(&rho).map(|(s, x)| s * (x / a - 1.0)).collect();
    let tau = view.shares_j().shares.iter().zip(&rho).map(|(s, x)| s * (inv_b / x - 1.0)).collect();
    Ok((sigma, tau))
}

pub fn lp_variance_bundle(view: &BilateralView) -> Result<LpVarianceBundle> {
    let (sigma, tau) = sigma_tau(view)?;
    Ok(LpVarianceBundle {
        var_log_laspeyres: sigma.iter().map(|x| x * x).sum(),
        var_log_inv_paasche: tau.iter().map(|x| x * x).sum(),
        cov_log: sigma.iter().zip(&tau).map(|(a, b)| a * b).sum(),
    })
}

/// Per-item log-Fisher scores for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherScoreVector {
    pub target: String,
    pub base: String,
    /// `u_n = ½[s_nk(pi_n/P^L - 1) - s_nj(P^P/pi_n - 1)]`.
    pub scores: Vec<f64>,
}

impl FisherScoreVector {
    pub fn sum_of_squares(&self) -> f64 {
        self.scores.iter().map(|u| u * u).sum()
    }
}

pub fn fisher_scores(view: &BilateralView) -> Result<FisherScoreVector> {
    let (sigma, tau) = sigma_tau(view)?;
    Ok(FisherScoreVector {
        target: view.target().id.clone(),
        base: view.base().id.clone(),
        scores: sigma.iter().zip(&tau).map(|(s, t)| 0.5 * (s - t)).collect(),
    })
}

/// Squared Fisher scores; they sum to `Var(ln P^F)`.
pub fn var_log_fisher_terms(view: &BilateralView) -> Result<Vec<f64>> {
    Ok(fisher_scores(view)?.scores.iter().map(|u| u * u).collect())
}

pub fn var_log_fisher(view: &BilateralView) -> Result<f64> {
    Ok(var_log_fisher_terms(view)?.iter().sum())
}

/// `Var(P^F) = Var(ln P^F) (P^F)^2`.
pub fn var_fisher_level(view: &BilateralView) -> Result<f64> {
    let f = bilateral::fisher(view)?.value;
    Ok(var_log_fisher(view)? * f * f)
}

/// `omega_n^2 (ln pi_n - ln P)^2` for a logarithmic index.
pub fn var_log_weighted_terms(view: &BilateralView, scheme: &WeightScheme) -> Result<Vec<f64>> {
    Ok(log_deviations(view, scheme)?
        .iter()
        .zip(&scheme.weights)
        .map(|(d, w)| (w * d) * (w * d))
        .collect())
}

pub fn var_log_weighted(view: &BilateralView, scheme: &WeightScheme) -> Result<f64> {
    Ok(var_log_weighted_terms(view, scheme)?.iter().sum())
}

/// `ln pi_n - ln P` for the index defined by `scheme`.
pub(crate) fn log_deviations(view: &BilateralView, scheme: &WeightScheme) -> Result<Vec<f64>> {
    if scheme.weights.len() != view.n_items() {
        return Err(IndexError::Dimension("weights and view differ in length".into()));
    }
    let c = view.price_ratio()[0].ln();
    let centered: Vec<f64> = view.price_ratio().iter().map(|p| p.ln() - c).collect();
    let dev: f64 = scheme.weights.iter().zip(&centered).map(|(w, x)| w * x).sum();
    Ok(centered.iter().map(|x| x - dev).collect())
}

/// `varpi_n^2 (sqrt(pi_n)/P^a - 1/(sqrt(pi_n) P^b))^2`.
pub fn var_log_walsh_terms(view: &BilateralView, policy: WalshNegative) -> Result<Vec<f64>> {
    let (_, d) = bilateral::walsh(view, policy)?;
    let (r, rho) = relative_ratios(view);
    let sr = r.sqrt();
    // In reference units: sqrt(pi)/P^a = sqrt(rho)/a, 1/(sqrt(pi) P^b) = 1/(sqrt(rho) b).
    let a = d.p_a / sr;
    let b = d.p_b * sr;
    Ok(d
        .weights
        .iter()
        .zip(&rho)
        .map(|(w, x)| {
            let s = x.sqrt();
            let t = w * (s / a - 1.0 / (s * b));
            t * t
        })
        .collect())
}

pub fn var_log_walsh(view: &BilateralView, policy: WalshNegative) -> Result<f64> {
    Ok(var_log_walsh_terms(view, policy)?.iter().sum())
}

/// `Cov(ln P^F_jk, ln P^F_lm) = sum_n u_n(j,k) u_n(l,m)`.
pub fn cov_log_fisher(a: &BilateralView, b: &BilateralView) -> Result<f64> {
    if a.items() != b.items() {
        return Err(IndexError::ItemMismatch);
    }
    let ua = fisher_scores(a)?;
    let ub = fisher_scores(b)?;
    Ok(ua.scores.iter().zip(&ub.scores).map(|(x, y)| x * y).sum())
}

/// Index point estimate with its log variance filled in.
pub fn estimate(view: &BilateralView, method: IndexMethod, opts: &IndexOptions) -> Result<IndexEstimate> {
    match method {
        IndexMethod::Laspeyres => {
            let var = lp_variance_bundle(view)?.var_log_laspeyres;
            Ok(bilateral::laspeyres(view)?.with_var_log(var))
        }
        IndexMethod::Paasche => {
            // Var(ln P^P) = Var(ln 1/P^P).
            let var = lp_variance_bundle(view)?.var_log_inv_paasche;
            Ok(bilateral::paasche(view)?.with_var_log(var))
        }
        IndexMethod::Fisher => {
            let var = var_log_fisher(view)?;
            Ok(bilateral::fisher(view)?.with_var_log(var))
        }
        IndexMethod::Tornqvist | IndexMethod::SatoVartia | IndexMethod::ProductDummy => {
            let kind: WeightKind = method.weight_kind().expect("logarithmic method");
            let scheme = bilateral::weight_scheme(view, kind, opts.zero_shares)?;
            let var = var_log_weighted(view, &scheme)?;
            Ok(bilateral::log_weighted_index(view, &scheme)?.with_var_log(var))
        }
        IndexMethod::Walsh => {
            let var = var_log_walsh(view, opts.walsh_negative)?;
            Ok(bilateral::walsh(view, opts.walsh_negative)?.0.with_var_log(var))
        }
        IndexMethod::Geks => Err(IndexError::InvalidConfig("GEKS is multilateral; use the geks module".into())),
    }
}

/// Covariance matrix of log-Fisher indexes over a list of `(target, base)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherCovariance {
    pub pairs: Vec<(String, String)>,
    pub matrix: DMatrix<f64>,
}

impl FisherCovariance {
    /// Gram matrix of the pairs' score vectors.
    pub fn build(dataset: &ComparisonDataset, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut scores = DMatrix::zeros(dataset.n_items(), pairs.len());
        let mut labels = Vec::with_capacity(pairs.len());
        for (c, &(j, k)) in pairs.iter().enumerate() {
            let view = dataset.view(j, k)?;
            let u = fisher_scores(&view).map_err(|e| e.for_pair(&view.target().id, &view.base().id))?;
            scores.column_mut(c).copy_from_slice(&u.scores);
            labels.push((u.target, u.base));
        }
        let matrix = scores.transpose() * &scores;
        Ok(Self { pairs: labels, matrix })
    }
}
