//! Bilateral price indexes: Laspeyres, Paasche, Fisher, the three
//! logarithmic indexes (Törnqvist, Sato-Vartia, product-dummy) and Walsh.
//!
//! All aggregates are taken over price relatives divided by a reference
//! relative (the first item's). The index is unchanged mathematically, but a
//! self-pair or an exactly proportional pair then evaluates to its exact value
//! instead of picking up rounding from share sums.

use std::fmt;
use std::str::FromStr;

use crate::data::BilateralView;
use crate::error::{IndexError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexMethod {
    Laspeyres,
    Paasche,
    Fisher,
    Tornqvist,
    SatoVartia,
    ProductDummy,
    Walsh,
    Geks,
}

impl IndexMethod {
    /// The seven bilateral formulas, in report order.
    pub const BILATERAL: [IndexMethod; 7] = [
        IndexMethod::Fisher,
        IndexMethod::Tornqvist,
        IndexMethod::Laspeyres,
        IndexMethod::Paasche,
        IndexMethod::ProductDummy,
        IndexMethod::SatoVartia,
        IndexMethod::Walsh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndexMethod::Laspeyres => "laspeyres",
            IndexMethod::Paasche => "paasche",
            IndexMethod::Fisher => "fisher",
            IndexMethod::Tornqvist => "tornqvist",
            IndexMethod::SatoVartia => "sato-vartia",
            IndexMethod::ProductDummy => "product-dummy",
            IndexMethod::Walsh => "walsh",
            IndexMethod::Geks => "geks",
        }
    }

    /// Weight scheme behind a logarithmic index, if it is one.
    pub fn weight_kind(self) -> Option<WeightKind> {
        match self {
            IndexMethod::Tornqvist => Some(WeightKind::Arithmetic),
            IndexMethod::SatoVartia => Some(WeightKind::Logarithmic),
            IndexMethod::ProductDummy => Some(WeightKind::Harmonic),
            _ => None,
        }
    }
}

impl fmt::Display for IndexMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexMethod {
    type Err = IndexError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "laspeyres" | "lasp" => IndexMethod::Laspeyres,
            "paasche" => IndexMethod::Paasche,
            "fisher" => IndexMethod::Fisher,
            "tornqvist" | "törnqvist" | "tornq" => IndexMethod::Tornqvist,
            "sato-vartia" | "satovartia" | "sv" => IndexMethod::SatoVartia,
            "product-dummy" | "pd" | "cpd" => IndexMethod::ProductDummy,
            "walsh" => IndexMethod::Walsh,
            "geks" => IndexMethod::Geks,
            other => return Err(IndexError::InvalidConfig(format!("unknown index method '{other}'"))),
        })
    }
}

/// One index result for target `j` against base `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEstimate {
    pub method: IndexMethod,
    /// Index level `P_jk`.
    pub value: f64,
    /// `ln P_jk`.
    pub log_value: f64,
    /// Variance of `ln P_jk`, when computed.
    pub var_log: Option<f64>,
    pub base: String,
    pub target: String,
}

impl IndexEstimate {
    fn new(method: IndexMethod, view: &BilateralView, value: f64, log_value: f64) -> Self {
        Self {
            method,
            value,
            log_value,
            var_log: None,
            base: view.base().id.clone(),
            target: view.target().id.clone(),
        }
    }

    pub fn with_var_log(mut self, var_log: f64) -> Self {
        self.var_log = Some(var_log);
        self
    }

    pub fn se_log(&self) -> Option<f64> {
        self.var_log.map(f64::sqrt)
    }

    /// 95% interval for `ln P`: `log_value ± 1.96 · se`.
    pub fn ci95_log(&self) -> Option<(f64, f64)> {
        self.se_log().map(|se| {
            let h = crate::tolerance::Z_95 * se;
            (self.log_value - h, self.log_value + h)
        })
    }
}

/// How the logarithmic and harmonic weight kernels treat a zero share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroShares {
    /// Any nonpositive share is an error.
    #[default]
    Reject,
    /// `L(a, 0) = H(a, 0) = 0`; negative shares are still an error.
    Tolerate,
}

/// What Walsh does with an item whose share product `s_nj s_nk` is negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WalshNegative {
    #[default]
    Error,
    /// Drop the item from the Walsh weights and report it.
    Drop,
}

/// Share-handling policies applied across all index formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndexOptions {
    pub zero_shares: ZeroShares,
    pub walsh_negative: WalshNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    /// `(s_nj + s_nk) / 2`: Törnqvist.
    Arithmetic,
    /// Normalized logarithmic mean of the shares: Sato-Vartia.
    Logarithmic,
    /// Normalized harmonic mean of the shares: bilateral product-dummy.
    Harmonic,
}

impl WeightKind {
    pub fn method(self) -> IndexMethod {
        match self {
            WeightKind::Arithmetic => IndexMethod::Tornqvist,
            WeightKind::Logarithmic => IndexMethod::SatoVartia,
            WeightKind::Harmonic => IndexMethod::ProductDummy,
        }
    }

    fn label(self) -> &'static str {
        match self {
            WeightKind::Arithmetic => "arithmetic",
            WeightKind::Logarithmic => "logarithmic",
            WeightKind::Harmonic => "harmonic",
        }
    }
}

/// Item weights of a logarithmic index; they sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub weights: Vec<f64>,
}

/// Walsh index split as `P^W = P^a / P^b`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalshDecomposition {
    pub p_a: f64,
    pub p_b: f64,
    /// `sqrt(s_nj s_nk) / sum sqrt(s_nj s_nk)`; zero for dropped items.
    pub weights: Vec<f64>,
    /// Items removed under [`WalshNegative::Drop`].
    pub dropped: Vec<usize>,
}

/// Logarithmic mean `(a - b) / (ln a - ln b)`, with `L(a, a) = a`.
///
/// When the logs agree to within `1e-12` the midpoint is returned; the
/// difference from the exact value is of order `(a - b)^2`, far below f64
/// resolution there.
pub fn logarithmic_mean(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let d = a.ln() - b.ln();
    if d.abs() < 1e-12 {
        0.5 * (a + b)
    } else {
        (a - b) / d
    }
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Reference relative `pi_0` and the relatives rescaled by it.
pub(crate) fn relative_ratios(view: &BilateralView) -> (f64, Vec<f64>) {
    let pi = view.price_ratio();
    let r = pi[0];
    (r, pi.iter().map(|p| p / r).collect())
}

/// Laspeyres level and log.
pub(crate) fn laspeyres_parts(view: &BilateralView) -> Result<(f64, f64)> {
    let (r, rho) = relative_ratios(view);
    let e = view.expenditures_k();
    let num: f64 = e.iter().zip(&rho).map(|(e, x)| e * x).sum();
    let den: f64 = e.iter().sum();
    let a = num / den;
    if !(a > 0.0 && a.is_finite()) {
        return Err(IndexError::Undefined {
            method: "Laspeyres",
            reason: "nonpositive arithmetic aggregate".into(),
        });
    }
    Ok((r * a, r.ln() + a.ln()))
}

/// Paasche level and log.
pub(crate) fn paasche_parts(view: &BilateralView) -> Result<(f64, f64)> {
    let (r, rho) = relative_ratios(view);
    let e = view.expenditures_j();
    let num: f64 = e.iter().zip(&rho).map(|(e, x)| e / x).sum();
    let den: f64 = e.iter().sum();
    let b = num / den;
    if !(b > 0.0 && b.is_finite()) {
        return Err(IndexError::Undefined {
            method: "Paasche",
            reason: "nonpositive harmonic aggregate".into(),
        });
    }
    Ok((r / b, r.ln() - b.ln()))
}

/// `P^L = sum_n s_nk pi_n`.
pub fn laspeyres(view: &BilateralView) -> Result<IndexEstimate> {
    let (value, log) = laspeyres_parts(view)?;
    Ok(IndexEstimate::new(IndexMethod::Laspeyres, view, value, log))
}

/// `P^P = (sum_n s_nj / pi_n)^-1`.
pub fn paasche(view: &BilateralView) -> Result<IndexEstimate> {
    let (value, log) = paasche_parts(view)?;
    Ok(IndexEstimate::new(IndexMethod::Paasche, view, value, log))
}

/// Geometric mean of Laspeyres and Paasche.
pub fn fisher(view: &BilateralView) -> Result<IndexEstimate> {
    let (l, ln_l) = laspeyres_parts(view)?;
    let (p, ln_p) = paasche_parts(view)?;
    let r = view.price_ratio()[0];
    // l / r and p / r are the raw aggregates; keep the reference factored out.
    let value = r * ((l / r) * (p / r)).sqrt();
    Ok(IndexEstimate::new(IndexMethod::Fisher, view, value, 0.5 * (ln_l + ln_p)))
}

pub fn weight_scheme(view: &BilateralView, kind: WeightKind, zero_shares: ZeroShares) -> Result<WeightScheme> {
    let sj = &view.shares_j().shares;
    let sk = &view.shares_k().shares;
    if kind == WeightKind::Arithmetic {
        let weights = sj.iter().zip(sk).map(|(a, b)| 0.5 * (a + b)).collect();
        return Ok(WeightScheme { kind, weights });
    }
    let mut raw = Vec::with_capacity(sj.len());
    for (n, (&a, &b)) in sj.iter().zip(sk).enumerate() {
        let bad = match zero_shares {
            ZeroShares::Reject => a <= 0.0 || b <= 0.0,
            ZeroShares::Tolerate => a < 0.0 || b < 0.0,
        };
        if bad {
            return Err(IndexError::NonpositiveShare { item: view.items()[n].clone(), kind: kind.label() });
        }
        raw.push(match kind {
            WeightKind::Logarithmic => logarithmic_mean(a, b),
            WeightKind::Harmonic => harmonic_mean(a, b),
            WeightKind::Arithmetic => unreachable!(),
        });
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(IndexError::Undefined {
            method: kind.method().name(),
            reason: "all weights are zero".into(),
        });
    }
    Ok(WeightScheme { kind, weights: raw.into_iter().map(|w| w / total).collect() })
}

/// `ln P = sum_n w_n ln pi_n`, tagged by the scheme's index.
pub fn log_weighted_index(view: &BilateralView, scheme: &WeightScheme) -> Result<IndexEstimate> {
    if scheme.weights.len() != view.n_items() {
        return Err(IndexError::Dimension("weights and view differ in length".into()));
    }
    let r = view.price_ratio()[0];
    let c = r.ln();
    let dev: f64 = scheme
        .weights
        .iter()
        .zip(view.price_ratio())
        .map(|(w, p)| w * (p.ln() - c))
        .sum();
    Ok(IndexEstimate::new(scheme.kind.method(), view, r * dev.exp(), c + dev))
}

pub fn walsh(view: &BilateralView, policy: WalshNegative) -> Result<(IndexEstimate, WalshDecomposition)> {
    let sj = &view.shares_j().shares;
    let sk = &view.shares_k().shares;
    let mut raw = Vec::with_capacity(sj.len());
    let mut dropped = Vec::new();
    for (n, (&a, &b)) in sj.iter().zip(sk).enumerate() {
        let prod = a * b;
        if prod < 0.0 {
            match policy {
                WalshNegative::Error => {
                    return Err(IndexError::NegativeShareProduct { item: view.items()[n].clone() })
                }
                WalshNegative::Drop => {
                    dropped.push(n);
                    raw.push(0.0);
                    continue;
                }
            }
        }
        raw.push(prod.sqrt());
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(IndexError::Undefined { method: "Walsh", reason: "all weights are zero".into() });
    }
    let (r, rho) = relative_ratios(view);
    let a: f64 = raw.iter().zip(&rho).map(|(w, x)| w * x.sqrt()).sum::<f64>() / total;
    let b: f64 = raw.iter().zip(&rho).map(|(w, x)| w / x.sqrt()).sum::<f64>() / total;
    let sr = r.sqrt();
    let decomposition = WalshDecomposition {
        p_a: sr * a,
        p_b: b / sr,
        weights: raw.iter().map(|w| w / total).collect(),
        dropped,
    };
    let estimate = IndexEstimate::new(IndexMethod::Walsh, view, r * (a / b), r.ln() + a.ln() - b.ln());
    Ok((estimate, decomposition))
}

/// Point estimate of any bilateral method (variance left empty).
pub fn compute(view: &BilateralView, method: IndexMethod, opts: &IndexOptions) -> Result<IndexEstimate> {
    match method {
        IndexMethod::Laspeyres => laspeyres(view),
        IndexMethod::Paasche => paasche(view),
        IndexMethod::Fisher => fisher(view),
        IndexMethod::Tornqvist | IndexMethod::SatoVartia | IndexMethod::ProductDummy => {
            let kind = method.weight_kind().expect("logarithmic method");
            log_weighted_index(view, &weight_scheme(view, kind, opts.zero_shares)?)
        }
        IndexMethod::Walsh => walsh(view, opts.walsh_negative).map(|(e, _)| e),
        IndexMethod::Geks => Err(IndexError::InvalidConfig("GEKS is multilateral; use the geks module".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ComparisonDataset;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn two_item() -> ComparisonDataset {
        ComparisonDataset::new(
            vec!["1".into(), "2".into()],
            vec!["k".into(), "j".into()],
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 4.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 4.0]),
        )
        .unwrap()
    }

    fn view_a() -> BilateralView {
        two_item().view(1, 0).unwrap()
    }

    fn proportional(lambda: f64) -> BilateralView {
        let pk = vec![1.0, 3.0, 0.5, 7.0];
        BilateralView::from_columns(
            (0..4).map(|i| i.to_string()).collect(),
            "j",
            "k",
            pk.iter().map(|p| lambda * p).collect(),
            pk,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![4.0, 1.0, 1.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn two_item_levels() {
        let v = view_a();
        assert_relative_eq!(laspeyres(&v).unwrap().value, 3.0, max_relative = 1e-15);
        assert_relative_eq!(paasche(&v).unwrap().value, 3.0, max_relative = 1e-15);
        let f = fisher(&v).unwrap();
        assert_relative_eq!(f.value, 3.0, max_relative = 1e-15);
        assert_relative_eq!(f.log_value, 3.0f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn two_item_weights() {
        let v = view_a();
        let a = weight_scheme(&v, WeightKind::Arithmetic, ZeroShares::Reject).unwrap();
        assert_relative_eq!(a.weights[0], 5.0 / 12.0, max_relative = 1e-15);
        assert_relative_eq!(a.weights[1], 7.0 / 12.0, max_relative = 1e-15);
        let h = weight_scheme(&v, WeightKind::Harmonic, ZeroShares::Reject).unwrap();
        assert_relative_eq!(h.weights[0], 7.0 / 17.0, max_relative = 1e-15);
        assert_relative_eq!(h.weights[1], 10.0 / 17.0, max_relative = 1e-15);

        let ln2 = 2.0f64.ln();
        let t = log_weighted_index(&v, &a).unwrap();
        assert_eq!(t.method, IndexMethod::Tornqvist);
        assert_relative_eq!(t.log_value, 19.0 / 12.0 * ln2, max_relative = 1e-14);
        let pd = log_weighted_index(&v, &h).unwrap();
        assert_eq!(pd.method, IndexMethod::ProductDummy);
        assert_relative_eq!(pd.log_value, 27.0 / 17.0 * ln2, max_relative = 1e-14);
    }

    #[test]
    fn two_item_walsh() {
        let (w, d) = walsh(&view_a(), WalshNegative::Error).unwrap();
        let s2 = 2.0f64.sqrt();
        assert_relative_eq!(w.value, 3.0, max_relative = 1e-15);
        assert_relative_eq!(d.p_a, 3.0 * s2 / (1.0 + s2), max_relative = 1e-15);
        assert_relative_eq!(d.p_b, s2 / (1.0 + s2), max_relative = 1e-15);
        assert_relative_eq!(d.p_a / d.p_b, w.value, max_relative = 1e-15);
    }

    #[test]
    fn equal_shares_give_equal_weights() {
        let v = BilateralView::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            "j",
            "k",
            vec![1.0, 2.0, 3.0],
            vec![3.0, 2.0, 1.0],
            vec![1.0, 2.0, 5.0],
            vec![2.0, 4.0, 10.0],
        )
        .unwrap();
        for kind in [WeightKind::Arithmetic, WeightKind::Logarithmic, WeightKind::Harmonic] {
            let w = weight_scheme(&v, kind, ZeroShares::Reject).unwrap();
            for (a, b) in w.weights.iter().zip(&v.shares_j().shares) {
                assert_relative_eq!(*a, *b, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn proportional_prices_give_lambda() {
        let v = proportional(1.7);
        for m in IndexMethod::BILATERAL {
            let e = compute(&v, m, &IndexOptions::default()).unwrap();
            assert_relative_eq!(e.value, 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn self_pair_is_exactly_one() {
        let d = two_item();
        for j in 0..2 {
            let v = d.view(j, j).unwrap();
            for m in IndexMethod::BILATERAL {
                let e = compute(&v, m, &IndexOptions::default()).unwrap();
                assert_eq!(e.value, 1.0, "{m}");
                assert_eq!(e.log_value, 0.0, "{m}");
            }
        }
    }

    #[test]
    fn fisher_lies_between_laspeyres_and_paasche() {
        let v = BilateralView::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            "j",
            "k",
            vec![1.0, 5.0, 2.0],
            vec![2.0, 1.0, 1.5],
            vec![1.0, 3.0, 2.0],
            vec![4.0, 1.0, 1.0],
        )
        .unwrap();
        let l = laspeyres(&v).unwrap().value;
        let p = paasche(&v).unwrap().value;
        let f = fisher(&v).unwrap().value;
        assert!(l.min(p) <= f && f <= l.max(p));
    }

    #[test]
    fn negative_shares() {
        // Net-export style heading: a negative expenditure in the target location.
        let v = BilateralView::from_columns(
            vec!["a".into(), "b".into()],
            "j",
            "k",
            vec![1.0, 10.0],
            vec![1.0, 1.0],
            vec![3.0, -1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(laspeyres(&v).is_ok());
        // sum s_nj / pi_n = 1.5 - (-0.5)/10... stays positive here.
        assert!(paasche(&v).is_ok());
        assert!(matches!(
            weight_scheme(&v, WeightKind::Logarithmic, ZeroShares::Tolerate),
            Err(IndexError::NonpositiveShare { .. })
        ));
        assert!(matches!(walsh(&v, WalshNegative::Error), Err(IndexError::NegativeShareProduct { .. })));
        let (w, d) = walsh(&v, WalshNegative::Drop).unwrap();
        assert_eq!(d.dropped, vec![1]);
        assert_relative_eq!(w.value, 1.0, max_relative = 1e-15);

        let bad = BilateralView::from_columns(
            vec!["a".into(), "b".into()],
            "j",
            "k",
            vec![1.0, 0.01],
            vec![1.0, 1.0],
            vec![3.0, -1.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let err = paasche(&bad).unwrap_err();
        assert_eq!(err.to_string(), "Paasche undefined: nonpositive harmonic aggregate");
        assert!(fisher(&bad).is_err());
    }

    #[test]
    fn zero_share_policy() {
        let v = BilateralView::from_columns(
            vec!["a".into(), "b".into(), "c".into()],
            "j",
            "k",
            vec![1.0, 2.0, 3.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let err = weight_scheme(&v, WeightKind::Harmonic, ZeroShares::Reject).unwrap_err();
        assert!(err.to_string().contains("'a'"));
        let w = weight_scheme(&v, WeightKind::Logarithmic, ZeroShares::Tolerate).unwrap();
        assert_eq!(w.weights[0], 0.0);
        assert_relative_eq!(w.weights.iter().sum::<f64>(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn logarithmic_mean_branches() {
        assert_eq!(logarithmic_mean(0.3, 0.3), 0.3);
        assert_relative_eq!(logarithmic_mean(1.0, std::f64::consts::E), (1.0 - std::f64::consts::E) / -1.0);
        assert_eq!(logarithmic_mean(0.2, 0.0), 0.0);
        assert_eq!(logarithmic_mean(0.2, 0.5), logarithmic_mean(0.5, 0.2));
        assert_relative_eq!(harmonic_mean(1.0 / 3.0, 0.5), 0.4, max_relative = 1e-15);
    }

    #[test]
    fn parse_methods() {
        for m in IndexMethod::BILATERAL {
            assert_eq!(m.name().parse::<IndexMethod>().unwrap(), m);
        }
        assert_eq!("CPD".parse::<IndexMethod>().unwrap(), IndexMethod::ProductDummy);
        assert!("chained".parse::<IndexMethod>().is_err());
    }
}
