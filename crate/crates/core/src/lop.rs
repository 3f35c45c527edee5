//! Law-of-one-price estimators: a second, independent route to the same
//! bilateral indexes and variances.
//!
//! Level form, with the base location's level fixed at 1:
//!
//! ```text
//! p_nj / (P alpha_n) - 1 = e_nj,   p_nk / alpha_n - 1 = e_nk
//! ```
//!
//! solved by the weighted moment conditions
//!
//! ```text
//! sum_n (-alpha_n / P) w_n e_nj = 0
//! w_n (-1 / alpha_n) (e_nj + e_nk) = 0      for every n
//! ```
//!
//! With `w = q_k`, `q_j` or `sqrt(q_j q_k)` the parity is Laspeyres, Paasche
//! or Walsh. Log form: weighted least squares of
//! `ln p_nj = ln P + d_n + e_nj`, `ln p_nk = d_n + e_nk`, giving the
//! product-dummy, Törnqvist or Sato-Vartia index depending on the weights.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::bilateral::{self, WeightKind, ZeroShares};
use crate::data::BilateralView;
use crate::error::{IndexError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LopWeighting {
    /// `w = q_nk`: Laspeyres.
    BaseQuantity,
    /// `w = q_nj`: Paasche.
    CurrentQuantity,
    /// `w = sqrt(q_nj q_nk)`: Walsh.
    GeometricQuantity,
    /// `(psi_nj, psi_nk) = (s_nj, s_nk)`: product-dummy.
    ProductDummy,
    /// `psi_nj = psi_nk = (s_nj + s_nk)/2`: Törnqvist.
    Tornqvist,
    /// `psi_nj = psi_nk` = normalized logarithmic mean: Sato-Vartia.
    SatoVartia,
}

impl LopWeighting {
    pub const LEVEL: [LopWeighting; 3] =
        [LopWeighting::BaseQuantity, LopWeighting::CurrentQuantity, LopWeighting::GeometricQuantity];
    pub const LOG: [LopWeighting; 3] = [LopWeighting::ProductDummy, LopWeighting::Tornqvist, LopWeighting::SatoVartia];

    pub fn is_level(self) -> bool {
        Self::LEVEL.contains(&self)
    }

    /// The classical index this weighting reproduces.
    pub fn counterpart(self) -> bilateral::IndexMethod {
        use bilateral::IndexMethod as M;
        match self {
            LopWeighting::BaseQuantity => M::Laspeyres,
            LopWeighting::CurrentQuantity => M::Paasche,
            LopWeighting::GeometricQuantity => M::Walsh,
            LopWeighting::ProductDummy => M::ProductDummy,
            LopWeighting::Tornqvist => M::Tornqvist,
            LopWeighting::SatoVartia => M::SatoVartia,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LopWeighting::BaseQuantity => "base-quantity",
            LopWeighting::CurrentQuantity => "current-quantity",
            LopWeighting::GeometricQuantity => "geometric-quantity",
            LopWeighting::ProductDummy => "pd-weights",
            LopWeighting::Tornqvist => "tornqvist-weights",
            LopWeighting::SatoVartia => "sato-vartia-weights",
        }
    }
}

impl fmt::Display for LopWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LopWeighting {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self> {
        [Self::LEVEL, Self::LOG]
            .concat()
            .into_iter()
            .find(|w| w.name() == s.trim())
            .ok_or_else(|| IndexError::InvalidConfig(format!("unknown weighting '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LopSolution {
    pub weighting: LopWeighting,
    /// `P_jk`.
    pub parity: f64,
    pub log_parity: f64,
    /// `alpha_n` (level form) or `delta_n` (log form).
    pub item_effects: Vec<f64>,
    /// `e_nj` for all items, then `e_nk`.
    pub residuals: Vec<f64>,
    /// Level form: the moment weights `w_n`, normalized to sum to one.
    /// Log form: the implied index weights `omega_n` (coefficient of
    /// `ln p_nj` in the fitted `ln P`).
    pub weights: Vec<f64>,
    /// Fixed-point iterations used (level form), 0 for the log form.
    pub iterations: usize,
}

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-15;

fn level_weights(view: &BilateralView, weighting: LopWeighting) -> Result<Vec<f64>> {
    let qj = view.quantities_j();
    let qk = view.quantities_k();
    let raw: Vec<f64> = match weighting {
        LopWeighting::BaseQuantity => qk,
        LopWeighting::CurrentQuantity => qj,
        LopWeighting::GeometricQuantity => {
            let mut w = Vec::with_capacity(qj.len());
            for (n, (a, b)) in qj.iter().zip(&qk).enumerate() {
                if a * b < 0.0 {
                    return Err(IndexError::NegativeShareProduct { item: view.items()[n].clone() });
                }
                w.push((a * b).sqrt());
            }
            w
        }
        _ => return Err(IndexError::InvalidConfig(format!("{weighting} is not a level weighting"))),
    };
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        return Err(IndexError::Undefined { method: "law-of-one-price", reason: "weights sum to zero".into() });
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Solves the level-form moment conditions.
///
/// The item equations give `alpha_n = p_nj/(2P) + p_nk/2`; substituting into
/// the parity equation gives the map `x -> x/2 + B/(2A)` on `x = 1/P`, with
/// `A = sum w p_j`, `B = sum w p_k`. It contracts at rate 1/2 from any start.
pub fn solve_lop_level(view: &BilateralView, weighting: LopWeighting) -> Result<LopSolution> {
    let w = level_weights(view, weighting)?;
    let pj = view.prices_j();
    let pk = view.prices_k();
    let a: f64 = w.iter().zip(pj).map(|(w, p)| w * p).sum();
    if !(a > 0.0) {
        return Err(IndexError::Undefined {
            method: weighting.counterpart().name(),
            reason: "nonpositive weighted price aggregate".into(),
        });
    }

    let mut x = 1.0;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let alpha_sum: f64 = w.iter().zip(pj.iter().zip(pk)).map(|(w, (p, q))| w * 0.5 * (p * x + q)).sum();
        let next = alpha_sum / a;
        let done = (next - x).abs() <= STEP_TOL * next.abs();
        x = next;
        if done {
            break;
        }
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(IndexError::Undefined {
            method: weighting.counterpart().name(),
            reason: "nonpositive parity".into(),
        });
    }
    let parity = 1.0 / x;
    let alpha: Vec<f64> = pj.iter().zip(pk).map(|(p, q)| p / (2.0 * parity) + q / 2.0).collect();
    let n = alpha.len();
    let mut residuals = Vec::with_capacity(2 * n);
    residuals.extend(pj.iter().zip(&alpha).map(|(p, a)| p / (parity * a) - 1.0));
    residuals.extend(pk.iter().zip(&alpha).map(|(p, a)| p / a - 1.0));
    Ok(LopSolution {
        weighting,
        parity,
        log_parity: parity.ln(),
        item_effects: alpha,
        residuals,
        weights: w,
        iterations,
    })
}

/// Moment conditions at a solution; every component vanishes there.
///
/// Level form: `R'Wr` with the weights normalized to sum to one. Log form:
/// the normal equations `X' Psi r` of the least squares fit.
pub fn moment_conditions(solution: &LopSolution, view: &BilateralView) -> Result<Vec<f64>> {
    let n = solution.item_effects.len();
    if view.n_items() != n {
        return Err(IndexError::Dimension("solution and view differ in item count".into()));
    }
    let (ej, ek) = solution.residuals.split_at(n);
    let mut out = Vec::with_capacity(n + 1);
    if solution.weighting.is_level() {
        let p = solution.parity;
        let w = &solution.weights;
        let alpha = &solution.item_effects;
        out.push((0..n).map(|i| -alpha[i] / p * w[i] * ej[i]).sum());
        out.extend((0..n).map(|i| -w[i] / alpha[i] * (ej[i] + ek[i])));
    } else {
        let (psi_j, psi_k) = log_weights(view, solution.weighting)?;
        out.push((0..n).map(|i| psi_j[i] * ej[i]).sum());
        out.extend((0..n).map(|i| psi_j[i] * ej[i] + psi_k[i] * ek[i]));
    }
    Ok(out)
}

/// Plug-in variance of `ln P` for a level-form solution:
/// `sum_n w_n^2 (P alpha_n e_nj / A - alpha_n e_nk / B)^2`.
pub fn lop_variance_log(solution: &LopSolution, view: &BilateralView) -> Result<f64> {
    if !solution.weighting.is_level() {
        return Err(IndexError::InvalidConfig("expected a level-form solution".into()));
    }
    let n = view.n_items();
    if solution.item_effects.len() != n {
        return Err(IndexError::Dimension("solution and view differ in item count".into()));
    }
    let w = &solution.weights;
    let a: f64 = w.iter().zip(view.prices_j()).map(|(w, p)| w * p).sum();
    let b: f64 = w.iter().zip(view.prices_k()).map(|(w, p)| w * p).sum();
    let (ej, ek) = solution.residuals.split_at(n);
    let p = solution.parity;
    Ok((0..n)
        .map(|i| {
            let al = solution.item_effects[i];
            let t = w[i] * (p * al * ej[i] / a - al * ek[i] / b);
            t * t
        })
        .sum())
}

/// `(psi_nj, psi_nk)` for a log-form weighting.
fn log_weights(view: &BilateralView, weighting: LopWeighting) -> Result<(Vec<f64>, Vec<f64>)> {
    match weighting {
        LopWeighting::ProductDummy => {
            for (n, (a, b)) in view.shares_j().shares.iter().zip(&view.shares_k().shares).enumerate() {
                if *a <= 0.0 || *b <= 0.0 {
                    return Err(IndexError::NonpositiveShare { item: view.items()[n].clone(), kind: "product-dummy" });
                }
            }
            Ok((view.shares_j().shares.clone(), view.shares_k().shares.clone()))
        }
        LopWeighting::Tornqvist | LopWeighting::SatoVartia => {
            let kind =
                if weighting == LopWeighting::Tornqvist { WeightKind::Arithmetic } else { WeightKind::Logarithmic };
            let w = bilateral::weight_scheme(view, kind, ZeroShares::Reject)?.weights;
            Ok((w.clone(), w))
        }
        _ => Err(IndexError::InvalidConfig(format!("{weighting} is not a log weighting"))),
    }
}

/// Weighted least squares fit of the log form.
///
/// Unknowns `theta = (ln P, d_1, ..., d_N)`. The normal equations
/// `X' Psi X theta = X' Psi y` are solved by Cholesky; the index weights are
/// the `ln P` row of `(X' Psi X)^-1 X' Psi` restricted to the `ln p_nj`
/// observations.
pub fn solve_lop_log(view: &BilateralView, weighting: LopWeighting) -> Result<LopSolution> {
    let (psi_j, psi_k) = log_weights(view, weighting)?;
    let n = view.n_items();
    let yj: Vec<f64> = view.prices_j().iter().map(|p| p.ln()).collect();
    let yk: Vec<f64> = view.prices_k().iter().map(|p| p.ln()).collect();

    let mut xtx = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut xty = DVector::<f64>::zeros(n + 1);
    for i in 0..n {
        xtx[(0, 0)] += psi_j[i];
        xtx[(0, i + 1)] = psi_j[i];
        xtx[(i + 1, 0)] = psi_j[i];
        xtx[(i + 1, i + 1)] = psi_j[i] + psi_k[i];
        xty[0] += psi_j[i] * yj[i];
        xty[i + 1] = psi_j[i] * yj[i] + psi_k[i] * yk[i];
    }
    let chol = xtx.clone().cholesky().ok_or_else(|| IndexError::Undefined {
        method: weighting.counterpart().name(),
        reason: "weighted least squares normal equations are singular".into(),
    })?;
    let theta = chol.solve(&xty);
    let inv = chol.inverse();

    // d theta_0 / d y_nj = sum_c inv[0][c] X'Psi[c][nj]; the y_nj column of
    // X'Psi has psi_nj in rows 0 and n+1.
    let weights: Vec<f64> = (0..n).map(|i| (inv[(0, 0)] + inv[(0, i + 1)]) * psi_j[i]).collect();

    let log_parity = theta[0];
    let delta: Vec<f64> = (0..n).map(|i| theta[i + 1]).collect();
    let mut residuals = Vec::with_capacity(2 * n);
    residuals.extend((0..n).map(|i| yj[i] - log_parity - delta[i]));
    residuals.extend((0..n).map(|i| yk[i] - delta[i]));
    Ok(LopSolution {
        weighting,
        parity: log_parity.exp(),
        log_parity,
        item_effects: delta,
        residuals,
        weights,
        iterations: 0,
    })
}

/// `sum_n omega_n^2 (e_nj - e_nk)^2`.
pub fn lop_log_variance(solution: &LopSolution, view: &BilateralView) -> Result<f64> {
    if solution.weighting.is_level() {
        return Err(IndexError::InvalidConfig("expected a log-form solution".into()));
    }
    let n = view.n_items();
    if solution.weights.len() != n {
        return Err(IndexError::Dimension("solution and view differ in item count".into()));
    }
    let (ej, ek) = solution.residuals.split_at(n);
    Ok((0..n)
        .map(|i| {
            let t = solution.weights[i] * (ej[i] - ek[i]);
            t * t
        })
        .sum())
}

/// Either route, by weighting.
pub fn solve(view: &BilateralView, weighting: LopWeighting) -> Result<LopSolution> {
    if weighting.is_level() {
        solve_lop_level(view, weighting)
    } else {
        solve_lop_log(view, weighting)
    }
}

/// Variance of `ln P` from either route.
pub fn variance(solution: &LopSolution, view: &BilateralView) -> Result<f64> {
    if solution.weighting.is_level() {
        lop_variance_log(solution, view)
    } else {
        lop_log_variance(solution, view)
    }
}

/// Largest absolute moment residual at a solution, for either route.
pub fn max_moment_residual(solution: &LopSolution, view: &BilateralView) -> Result<f64> {
    let r = moment_conditions(solution, view)?;
    Ok(r.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}
