//! High-order moment estimation: per-level regression weights built from
//! recursive variance estimates of `V^(2^l)`.
//!
//! Level `l` regresses `V^(2^l)(s')` on `phi_{V^(2^l)}(s,a)`. Its variance
//! estimate uses the predictions of levels `l` and `l+1`, so the weight of
//! every level but the last is variance-aware; the last level falls back to
//! a constant variance proxy of one.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::wls::{GramInverse, IntervalSnapshot, RegressionLevel};

/// Closed interval `[lo, hi]` used by [`truncate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationBounds {
    lo: f64,
    hi: f64,
}

impl TruncationBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidInput(format!(
                "truncation bounds need lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }
    pub fn hi(&self) -> f64 {
        self.hi
    }
}

#[inline]
pub fn truncate(x: f64, bounds: TruncationBounds) -> f64 {
    if x < bounds.lo {
        bounds.lo
    } else if x > bounds.hi {
        bounds.hi
    } else {
        x
    }
}

/// `B^(2^l)`, the range of `V^(2^l)` when `V` takes values in `[0, B]`.
#[inline]
pub fn moment_scale(b: f64, level: usize) -> f64 {
    b.powf(2f64.powi(level as i32))
}

fn clamp_to_range(x: f64, hi: f64) -> f64 {
    // hi > 0 always; a degenerate range collapses to the point 0
    if hi > 0.0 {
        truncate(x, TruncationBounds { lo: 0.0, hi })
    } else {
        0.0
    }
}

/// `[<phi_{l+1}, theta_{l+1}>]_[0, B^(2^(l+1))] - ([<phi_l, theta_l>]_[0, B^(2^l)])^2`.
pub fn estimate_variance(
    level: usize,
    phi_l: &DVector<f64>,
    phi_lp1: &DVector<f64>,
    theta_l: &DVector<f64>,
    theta_lp1: &DVector<f64>,
    b: f64,
) -> f64 {
    let second = clamp_to_range(phi_lp1.dot(theta_lp1), moment_scale(b, level + 1));
    let first = clamp_to_range(phi_l.dot(theta_l), moment_scale(b, level));
    second - first * first
}

/// Two-term clamped bonus measured in the snapshot geometry of levels `l` and `l+1`.
pub fn error_bonus(
    level: usize,
    phi_l: &DVector<f64>,
    phi_lp1: &DVector<f64>,
    snapshot: &IntervalSnapshot,
    beta_hat: f64,
    b: f64,
) -> f64 {
    let first =
        2.0 * beta_hat * snapshot.level(level).ellipsoid_norm(phi_l) / moment_scale(b, level);
    let second =
        beta_hat * snapshot.level(level + 1).ellipsoid_norm(phi_lp1) / moment_scale(b, level + 1);
    first.min(1.0) + second.min(1.0)
}

/// Scalars shared by every level at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomeParams {
    pub beta_hat: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub b: f64,
    /// Include the `gamma^2 ||phi||_{Sigma^-1}` floor. Disabled only by the
    /// variance-only ablation.
    pub uncertainty_guard: bool,
}

/// Per-level output of [`home_weights`]. `var_est` and `error_bonus` have
/// `L - 1` entries (none for the top level).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub sigma_bar_sq: Vec<f64>,
    pub var_est: Vec<f64>,
    pub error_bonus: Vec<f64>,
}

impl WeightBundle {
    pub fn levels(&self) -> usize {
        self.sigma_bar_sq.len()
    }
}

/// Computes `sigma_bar^2_{t,l}` for every level from the current features,
/// the live regression states (estimates and Gram matrices) and the interval snapshot.
pub fn home_weights(
    features: &[DVector<f64>],
    live: &[RegressionLevel],
    snapshot: &IntervalSnapshot,
    params: &HomeParams,
) -> Result<WeightBundle> {
    let levels = features.len();
    if levels == 0 {
        return Err(Error::InvalidInput(
            "at least one moment level is required".into(),
        ));
    }
    if live.len() != levels || snapshot.levels.len() != levels {
        return Err(Error::InvalidInput(format!(
            "level count mismatch: {} features, {} live states, {} snapshot levels",
            levels,
            live.len(),
            snapshot.levels.len()
        )));
    }
    let HomeParams {
        beta_hat,
        alpha,
        gamma,
        b,
        uncertainty_guard,
    } = *params;
    let guard = |l: usize| -> f64 {
        if uncertainty_guard {
            gamma * gamma * live[l].ellipsoid_norm(&features[l]) / moment_scale(b, l)
        } else {
            0.0
        }
    };

    let mut sigma_bar_sq = Vec::with_capacity(levels);
    let mut var_est = Vec::with_capacity(levels - 1);
    let mut bonus = Vec::with_capacity(levels - 1);
    for l in 0..levels - 1 {
        let v = estimate_variance(
            l,
            &features[l],
            &features[l + 1],
            live[l].theta(),
            live[l + 1].theta(),
            b,
        );
        let e = error_bonus(l, &features[l], &features[l + 1], snapshot, beta_hat, b);
        let scale = moment_scale(b, l + 1);
        let sigma_sq = v / scale + e;
        sigma_bar_sq.push(scale * sigma_sq.max(alpha * alpha).max(guard(l)));
        var_est.push(v);
        bonus.push(e);
    }
    let top = levels - 1;
    sigma_bar_sq.push(moment_scale(b, levels) * 1f64.max(alpha * alpha).max(guard(top)));
    Ok(WeightBundle {
        sigma_bar_sq,
        var_est,
        error_bonus: bonus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{LinearMixtureSsp, SyntheticInstance};

    fn bounds(lo: f64, hi: f64) -> TruncationBounds {
        TruncationBounds::new(lo, hi).unwrap()
    }

    #[test]
    fn truncation_cases() {
        assert_eq!(truncate(5.0, bounds(0.0, 3.0)), 3.0);
        assert_eq!(truncate(-1.0, bounds(0.0, 3.0)), 0.0);
        assert_eq!(truncate(2.0, bounds(0.0, 3.0)), 2.0);
        assert!(TruncationBounds::new(1.0, 1.0).is_err());
    }

    fn powers(values: &[f64], l: usize) -> Vec<f64> {
        values.iter().map(|v| v.powi(1 << l)).collect()
    }

    #[test]
    fn variance_with_true_parameter_is_exact() {
        let env = LinearMixtureSsp::synthetic(SyntheticInstance::new(4, 0.25, 1.0 / 12.0).unwrap());
        let theta = env.theta_star();
        let b = 3.0;
        let values = [2.0, 0.0];
        for a in 0..env.num_actions() {
            for l in 0..3 {
                let phi_l = env.feature_expectation(&powers(&values, l), 0, a);
                let phi_lp1 = env.feature_expectation(&powers(&values, l + 1), 0, a);
                let est = estimate_variance(l, &phi_l, &phi_lp1, theta, theta, b);
                let p = env.transition_probs(0, a).unwrap();
                let x = values[0].powi(1 << l);
                let mean = p[0] * x;
                let brute = p[0] * x * x - mean * mean;
                assert!(
                    (est - brute).abs() <= 1e-12 * x * x,
                    "l={l} a={a}: {est} vs {brute}"
                );
            }
        }
    }

    #[test]
    fn variance_of_zero_values() {
        let z = DVector::zeros(4);
        let theta = DVector::from_element(4, 0.3);
        assert_eq!(estimate_variance(0, &z, &z, &theta, &theta, 3.0), 0.0);
    }

    #[test]
    fn bonus_saturates_and_vanishes() {
        let levels: Vec<_> = (0..2)
            .map(|l| RegressionLevel::new(l, 3, 1.0).unwrap())
            .collect();
        let snap = IntervalSnapshot::take(1, &levels);
        let z = DVector::zeros(3);
        assert_eq!(error_bonus(0, &z, &z, &snap, 10.0, 2.0), 0.0);
        let phi = DVector::from_element(3, 1.0);
        assert_eq!(error_bonus(0, &phi, &phi, &snap, 1e9, 2.0), 2.0);
    }

    #[test]
    fn bonus_isotropic_closed_form() {
        let lambda = 0.25;
        let levels: Vec<_> = (0..2)
            .map(|l| RegressionLevel::new(l, 2, lambda).unwrap())
            .collect();
        let snap = IntervalSnapshot::take(1, &levels);
        let (beta, b) = (0.2, 1.5);
        let phi_l = DVector::from_vec(vec![0.3, 0.4]);
        let phi_lp1 = DVector::from_vec(vec![1.2, -0.5]);
        let expect = (2.0 * beta * 0.5 / (lambda.sqrt() * b)).min(1.0)
            + (beta * 1.3 / (lambda.sqrt() * b * b)).min(1.0);
        assert!((error_bonus(0, &phi_l, &phi_lp1, &snap, beta, b) - expect).abs() < 1e-14);
    }

    #[test]
    fn zero_features_hit_alpha_floor() {
        let levels: Vec<_> = (0..3)
            .map(|l| RegressionLevel::new(l, 2, 1.0).unwrap())
            .collect();
        let snap = IntervalSnapshot::take(1, &levels);
        let features = vec![DVector::zeros(2); 3];
        let params = HomeParams {
            beta_hat: 5.0,
            alpha: 0.1,
            gamma: 0.8,
            b: 2.0,
            uncertainty_guard: true,
        };
        let w = home_weights(&features, &levels, &snap, &params).unwrap();
        assert!((w.sigma_bar_sq[0] - 4.0 * 0.01).abs() < 1e-15);
        assert!((w.sigma_bar_sq[1] - 16.0 * 0.01).abs() < 1e-15);
        assert_eq!(w.sigma_bar_sq[2], 256.0);
    }

    #[test]
    fn single_level_is_degenerate_recursion() {
        let levels = vec![RegressionLevel::new(0, 2, 1.0).unwrap()];
        let snap = IntervalSnapshot::take(1, &levels);
        let phi = DVector::from_vec(vec![3.0, 4.0]);
        let params = HomeParams {
            beta_hat: 5.0,
            alpha: 0.5,
            gamma: 2.0,
            b: 2.0,
            uncertainty_guard: true,
        };
        let w = home_weights(std::slice::from_ref(&phi), &levels, &snap, &params).unwrap();
        // gamma^2 ||phi|| / B = 4 * 5 / 2 = 10
        assert!((w.sigma_bar_sq[0] - 4.0 * 10.0).abs() < 1e-12);
        assert!(w.var_est.is_empty());
    }

    #[test]
    fn rejects_zero_levels() {
        let snap = IntervalSnapshot {
            t_j: 1,
            levels: vec![],
        };
        let params = HomeParams {
            beta_hat: 1.0,
            alpha: 1.0,
            gamma: 1.0,
            b: 1.0,
            uncertainty_guard: true,
        };
        assert!(home_weights(&[], &[], &snap, &params).is_err());
    }

    #[test]
    fn moment_scale_powers() {
        assert_eq!(moment_scale(3.0, 0), 3.0);
        assert_eq!(moment_scale(3.0, 2), 81.0);
        assert_eq!(moment_scale(1.0, 40), 1.0);
    }
}
