//! Closed-form quantities for the A/B leakage analysis: the engagement output
//! sub-distributions `R_b`, Hellinger sample-complexity bounds, and the
//! campaign-size expansion factor.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::behaviors::{prob_show_first, rho_apply, ActiveAd, BehaviorParams};
use crate::error::{Error, Result};
use crate::feature_space::{closeness, hellinger_squared, ExplicitDistribution, FeatureVector, MassFunction};

/// `4 / ln(3/2)`
pub fn gamma() -> f64 {
    4.0 / 1.5f64.ln()
}

/// Joint sub-distribution over `x` of (sampled x, shown the ad, converted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementOutputDistribution {
    dimension: usize,
    masses: Vec<f64>,
}

impl EngagementOutputDistribution {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mass(&self, x: &FeatureVector) -> Result<f64> {
        Error::check_dim(self.dimension, x.len())?;
        Ok(self.masses[x.index()])
    }
}

impl MassFunction for EngagementOutputDistribution {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn check_pair(ads: &[ActiveAd]) -> Result<(&ActiveAd, &ActiveAd)> {
    match ads {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Unsupported(format!("analysis needs exactly two ads, got {}", ads.len()))),
    }
}

/// `R_b` for the ad at `which` (0 or 1) of an A/B pair.
pub fn engagement_output_distribution_for(
    d: &ExplicitDistribution,
    ads: &[ActiveAd],
    params: &BehaviorParams,
    which: usize,
) -> Result<EngagementOutputDistribution> {
    let (first, second) = check_pair(ads)?;
    let target = [first, second]
        .get(which)
        .copied()
        .ok_or(Error::IndexOutOfRange { index: which, len: 2 })?;
    let l = d.dimension();
    Error::check_dim(l, target.ad.len())?;
    let masses = d
        .probabilities()
        .iter()
        .enumerate()
        .map(|(idx, &px)| {
            if px == 0.0 {
                return Ok(0.0);
            }
            let x = FeatureVector::from_index(idx, l);
            let filtered = rho_apply(&params.rho, &x);
            let show_first = prob_show_first(params.alpha_t, first, second, &filtered)?;
            let show = if which == 0 { show_first } else { 1.0 - show_first };
            Ok(px * show * params.alpha_e * closeness(&target.ad, &x)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EngagementOutputDistribution { dimension: l, masses })
}

/// `R_b(x) = D_b(x) · (1 + α_t Δ_x)/2 · α_e close(ad_1, x)`.
pub fn engagement_output_distribution(
    d: &ExplicitDistribution,
    ads: &[ActiveAd],
    params: &BehaviorParams,
) -> Result<EngagementOutputDistribution> {
    engagement_output_distribution_for(d, ads, params, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub h_squared: f64,
    pub sc_lower: f64,
    pub sc_upper: f64,
    pub sc_private_upper: Option<f64>,
    pub beta: f64,
    pub epsilon: Option<f64>,
}

/// Hellinger bounds on the number of samples needed to tell `r0` from `r1`
/// with error `beta`; adds the private upper bound when `epsilon` is given.
pub fn sc_bounds<P: MassFunction, Q: MassFunction>(
    r0: &P,
    r1: &Q,
    beta: f64,
    epsilon: Option<f64>,
) -> Result<BoundsReport> {
    if !(beta > 0.0 && beta <= 0.25) {
        return Err(Error::config(format!("beta must lie in (0, 1/4], got {beta}")));
    }
    let h = hellinger_squared(r0, r1)?;
    if h <= 0.0 {
        return Err(Error::UndefinedSampleComplexity("Hellinger distance is zero".into()));
    }
    let sc_upper = 1.0 / h;
    let sc_private_upper = epsilon.map(|e| sc_private_bound(sc_upper, e)).transpose()?;
    Ok(BoundsReport {
        h_squared: h,
        sc_lower: (1.0 / (4.0 * beta)).ln() / (4.0 * h),
        sc_upper,
        sc_private_upper,
        beta,
        epsilon,
    })
}

/// `10 · sc_upper / ε`, valid only for ε in (0, 1).
pub fn sc_private_bound(sc_upper: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRegime(format!("private bound needs epsilon in (0, 1), got {epsilon}")));
    }
    Ok(10.0 * sc_upper / epsilon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ExpansionReport {
    pub A: f64,
    pub B: f64,
    pub K: f64,
    pub gamma: f64,
    pub z: f64,
    pub n_private_predicted: u64,
}

/// Factor by which a private ecosystem (targeting utility `alpha_t_prime`,
/// ε-DP reports) must grow the campaign to match the leakage of a
/// non-private one (`alpha_t`, campaign size `n_nonprivate`).
pub fn expansion_factor(
    d0: &ExplicitDistribution,
    d1: &ExplicitDistribution,
    ads: &[ActiveAd],
    alpha_t: f64,
    alpha_t_prime: f64,
    n_nonprivate: u64,
    epsilon: f64,
) -> Result<ExpansionReport> {
    let (first, second) = check_pair(ads)?;
    Error::check_dim(d0.dimension(), d1.dimension())?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::OutOfRegime(format!("expansion needs epsilon in (0, 1), got {epsilon}")));
    }
    let l = d0.dimension();
    let (mut a, mut b) = (0.0, 0.0);
    for (idx, (p0, p1)) in d0.probabilities().iter().zip(d1.probabilities()).enumerate() {
        let diff = (p0.sqrt() - p1.sqrt()).powi(2);
        if diff == 0.0 {
            continue;
        }
        let x = FeatureVector::from_index(idx, l);
        let close = closeness(&first.ad, &x)?;
        let delta = closeness(&first.audience, &x)? - closeness(&second.audience, &x)?;
        a += close * diff;
        b += close * delta * diff;
    }
    if a <= 0.0 {
        return Err(Error::Degenerate("A = 0: distributions agree wherever ad_1 is close".into()));
    }
    let k = b / a;
    let g = gamma();
    let z = g * (1.0 + alpha_t * k) / (1.0 + alpha_t_prime * k);
    let n_private = (10.0 * z * n_nonprivate as f64 / epsilon).ceil();
    Ok(ExpansionReport { A: a, B: b, K: k, gamma: g, z, n_private_predicted: n_private as u64 })
}

/// `z` for given `K`, without the distributions.
pub fn expansion_z(k: f64, alpha_t: f64, alpha_t_prime: f64) -> f64 {
    gamma() * (1.0 + alpha_t * k) / (1.0 + alpha_t_prime * k)
}

pub fn advantage_degradation(nonprivate_advantage: f64) -> f64 {
    0.8 * nonprivate_advantage
}

pub fn advantage_degradation_exact(nonprivate_advantage: Ratio<i64>) -> Ratio<i64> {
    Ratio::new(4, 5) * nonprivate_advantage
}
