//! Tolerance policy shared by the property suite, the validation report and
//! the acceptance tests.
//!
//! Three tiers keep floating-point noise apart from real violations:
//! algebraic rearrangements of one formula, identities between two
//! independent computational routes, and statistical checks.

/// Rearrangements of the same formula (e.g. composing log-Fisher variance
/// from the Laspeyres/Paasche bundle vs the direct score sum).
pub const ALGEBRAIC_REL: f64 = 1e-12;

/// Two independent routes to the same quantity (moment solution vs
/// least-squares solution), where a 2N-term sum accumulates rounding.
pub const CROSS_ROUTE_REL: f64 = 1e-10;

/// Self-pair identity: every index returns 1.
pub const IDENTITY_ABS: f64 = 1e-14;

/// Relative agreement of two f64 computations of the same ratio.
pub const RATIO_REL: f64 = 1e-14;

/// Transitivity residual of GEKS log parities.
pub const TRANSITIVITY_ABS: f64 = 1e-13;

/// Pairwise log-GEKS differences under a change of base.
pub const BASE_CHANGE_ABS: f64 = 1e-12;

/// Minimum eigenvalue of a covariance matrix may dip to `-PSD_TRACE_FRACTION * trace`.
pub const PSD_TRACE_FRACTION: f64 = 1e-10;

/// Expenditure shares sum to one.
pub const SHARE_SUM_ABS: f64 = 1e-12;

/// Dissimilarity axioms.
pub const AXIOM: f64 = 1e-10;

/// Contributions of a dissimilarity measure add up to its value.
pub const CONTRIBUTION_REL: f64 = 1e-10;

/// Moment conditions at a law-of-one-price solution.
pub const MOMENT_RESIDUAL_ABS: f64 = 1e-10;

/// Bootstrap SE vs delta-method SE on synthetic data.
pub const BOOTSTRAP_AGREEMENT_REL: f64 = 0.15;

/// Bootstrap SE with R vs 2R replications.
pub const BOOTSTRAP_STABILITY_REL: f64 = 0.05;

/// Acceptable empirical coverage band for nominal 95% intervals.
pub const COVERAGE_BAND: (f64, f64) = (0.90, 0.98);

/// Two-sided 95% standard-normal critical value.
pub const Z_95: f64 = 1.96;

/// Relative gap `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
