//! Concrete parameterizing functions for the ecosystem: the feature filter
//! ρ and the browsing, targeting, engagement, attribution and reporting
//! behaviours, each tunable through its utility parameter.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp_stats::{tulap_sample, TulapParams};
use crate::ecosystem::BrowsingEntry;
use crate::error::{Error, Result};
use crate::feature_space::{closeness, FeatureVector};

/// Feature filter applied before targeting.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rho {
    #[default]
    Identity,
    /// Zero out the listed positions. Positions past the vector end are ignored.
    Mask { positions: Vec<usize> },
}

fn default_alpha_a() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub alpha_t: f64,
    pub alpha_e: f64,
    #[serde(default = "default_alpha_a")]
    pub alpha_a: f64,
    /// DP reporting when set; identity reporting otherwise.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub rho: Rho,
}

impl BehaviorParams {
    pub fn new(alpha_t: f64, alpha_e: f64, epsilon: Option<f64>) -> Result<Self> {
        let p = BehaviorParams { alpha_t, alpha_e, alpha_a: 1.0, epsilon, rho: Rho::Identity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_t", self.alpha_t), ("alpha_e", self.alpha_e), ("alpha_a", self.alpha_a)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::config(format!("epsilon must lie in (0, 1), got {eps}")));
            }
        }
        Ok(())
    }

    pub fn tulap(&self) -> Result<Option<TulapParams>> {
        self.epsilon.map(TulapParams::from_epsilon).transpose()
    }
}

/// Opaque site identifier. Browsing uses a single constant site.
pub type Site = u32;

pub const SITE_0: Site = 0;

/// Marker for a conversion event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conversion;

/// One `(audience, ad)` pair drawn from the registered campaigns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveAd {
    pub audience: FeatureVector,
    pub ad: FeatureVector,
}

pub fn rho_apply(rho: &Rho, features: &FeatureVector) -> FeatureVector {
    match rho {
        Rho::Identity => features.clone(),
        Rho::Mask { positions } => {
            let mut bits = features.bits().to_vec();
            for &j in positions {
                if let Some(b) = bits.get_mut(j) {
                    *b = 0;
                }
            }
            FeatureVector::new(bits).expect("masking keeps bits binary")
        }
    }
}

/// `Δ_x = close(audience_1, x) − close(audience_2, x)`.
pub fn targeting_delta(first: &ActiveAd, second: &ActiveAd, features: &FeatureVector) -> Result<f64> {
    Ok(closeness(&first.audience, features)? - closeness(&second.audience, features)?)
}

/// Probability the first of two active ads is shown: `(1 + α_t Δ_x) / 2`.
pub fn prob_show_first(alpha_t: f64, first: &ActiveAd, second: &ActiveAd, features: &FeatureVector) -> Result<f64> {
    let delta = targeting_delta(first, second, features)?;
    Ok(((1.0 + alpha_t * delta) / 2.0).clamp(0.0, 1.0))
}

/// A/B targeting. With anything other than two active ads the choice is
/// uniform and carries no utility guarantee.
pub fn targeting_pairwise<R: Rng + ?Sized>(
    params: &BehaviorParams,
    active_ads: &[ActiveAd],
    features: &FeatureVector,
    _site: Site,
    rng: &mut R,
) -> Result<FeatureVector> {
    match active_ads {
        [] => Err(Error::Usage("no active ads to target".into())),
        [first, second] => {
            let p = prob_show_first(params.alpha_t, first, second, features)?;
            Ok(if rng.random::<f64>() < p { first.ad.clone() } else { second.ad.clone() })
        }
        many => Ok(many[rng.random_range(0..many.len())].ad.clone()),
    }
}

pub fn browsing_constant(_features: &FeatureVector, _history: &[BrowsingEntry]) -> Site {
    SITE_0
}

/// Converts with probability `α_e · close(ad, features)`.
pub fn engagement_bernoulli<R: Rng + ?Sized>(
    params: &BehaviorParams,
    features: &FeatureVector,
    _site: Site,
    ad: &FeatureVector,
    rng: &mut R,
) -> Result<Option<Conversion>> {
    let p = params.alpha_e * closeness(ad, features)?;
    Ok((rng.random::<f64>() < p).then_some(Conversion))
}

/// Full credit to the converting impression.
pub fn attribution_last_touch(history: &[BrowsingEntry]) -> Vec<(FeatureVector, f64)> {
    history
        .iter()
        .rev()
        .find(|e| e.conversion().is_some())
        .and_then(|e| e.ad.clone())
        .map(|ad| vec![(ad, 1.0)])
        .unwrap_or_default()
}

/// A campaign report: per-ad released scores, plus the noise parameters if
/// the release was privatized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scores: BTreeMap<FeatureVector, f64>,
    pub noise: Option<TulapParams>,
}

impl Report {
    pub fn get(&self, ad: &FeatureVector) -> f64 {
        self.scores.get(ad).copied().unwrap_or(0.0)
    }

    /// Union of per-campaign reports. Noise parameters must agree.
    pub fn merge(reports: impl IntoIterator<Item = Report>) -> Result<Report> {
        let mut out: Option<Report> = None;
        for r in reports {
            match out.as_mut() {
                None => out = Some(r),
                Some(acc) => {
                    if acc.noise != r.noise {
                        return Err(Error::config("cannot merge reports with different noise"));
                    }
                    for (ad, v) in r.scores {
                        *acc.scores.entry(ad).or_insert(0.0) += v;
                    }
                }
            }
        }
        out.ok_or_else(|| Error::Usage("no reports to merge".into()))
    }
}

pub fn reporting_identity(scores: &BTreeMap<FeatureVector, f64>) -> Report {
    Report { scores: scores.clone(), noise: None }
}

/// ε-DP release with ε restricted to (0, 1).
pub fn reporting_dp<R: Rng + ?Sized>(
    params: &BehaviorParams,
    scores: &BTreeMap<FeatureVector, f64>,
    rng: &mut R,
) -> Result<Report> {
    match params.epsilon {
        Some(eps) if eps > 0.0 && eps < 1.0 => tulap_report(scores, eps, rng),
        other => Err(Error::config(format!("dp reporting needs epsilon in (0, 1), got {other:?}"))),
    }
}

/// Adds independent Tulap noise to every score, in key order. Accepts any
/// positive ε.
pub fn tulap_report<R: Rng + ?Sized>(
    scores: &BTreeMap<FeatureVector, f64>,
    epsilon: f64,
    rng: &mut R,
) -> Result<Report> {
    let params = TulapParams::from_epsilon(epsilon)?;
    let scores = scores
        .iter()
        .map(|(ad, &s)| (ad.clone(), s + tulap_sample(&params, rng)))
        .collect();
    Ok(Report { scores, noise: Some(params) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecosystem::Engagement;
    use crate::rng;

    fn fv(s: &str) -> FeatureVector {
        s.parse().unwrap()
    }

    fn ab(a: &str, b: &str) -> Vec<ActiveAd> {
        vec![
            ActiveAd { audience: fv(a), ad: fv(a) },
            ActiveAd { audience: fv(b), ad: fv(b) },
        ]
    }

    fn entry(ad: &str, converted: bool) -> BrowsingEntry {
        BrowsingEntry {
            site: SITE_0,
            ad: Some(fv(ad)),
            engagement: if converted { Engagement::Converted(Conversion) } else { Engagement::NoConversion },
        }
    }

    #[test]
    fn rho_examples() {
        let x = fv("1011");
        assert_eq!(rho_apply(&Rho::Identity, &x), x);
        assert_eq!(rho_apply(&Rho::Mask { positions: vec![0, 1, 2, 3] }, &x), fv("0000"));
        assert_eq!(rho_apply(&Rho::Mask { positions: vec![] }, &x), x);
        assert_eq!(rho_apply(&Rho::Mask { positions: vec![2, 9] }, &x), fv("1001"));
    }

    #[test]
    fn targeting_probabilities() {
        let ads = ab("1111", "0111");
        assert_eq!(prob_show_first(0.0, &ads[0], &ads[1], &fv("1111")).unwrap(), 0.5);
        assert_eq!(prob_show_first(1.0, &ads[0], &ads[1], &fv("1111")).unwrap(), 0.625);
        // Δ = 0 when bit 0 is irrelevant to both audiences.
        let sym = ab("1100", "0011");
        assert_eq!(prob_show_first(1.0, &sym[0], &sym[1], &fv("1010")).unwrap(), 0.5);
    }

    #[test]
    fn targeting_single_pair_only_option() {
        let params = BehaviorParams::new(1.0, 1.0, None).unwrap();
        let one = vec![ActiveAd { audience: fv("10"), ad: fv("10") }];
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            assert_eq!(targeting_pairwise(&params, &one, &fv("01"), SITE_0, &mut r).unwrap(), fv("10"));
        }
        assert!(targeting_pairwise(&params, &[], &fv("01"), SITE_0, &mut r).is_err());
    }

    #[test]
    fn targeting_monte_carlo_matches_formula() {
        let params = BehaviorParams::new(1.0, 1.0, None).unwrap();
        let ads = ab("1111", "0111");
        let mut r = rng::seeded(8);
        let trials = 200_000;
        let hits = (0..trials)
            .filter(|_| targeting_pairwise(&params, &ads, &fv("1111"), SITE_0, &mut r).unwrap() == fv("1111"))
            .count();
        let p = hits as f64 / trials as f64;
        let sigma = (0.625f64 * 0.375 / trials as f64).sqrt();
        assert!((p - 0.625).abs() < 3.0 * sigma, "{p}");
    }

    #[test]
    fn engagement_examples() {
        let mut r = rng::seeded(5);
        let zero = BehaviorParams::new(1.0, 0.0, None).unwrap();
        let one = BehaviorParams::new(1.0, 1.0, None).unwrap();
        for _ in 0..1000 {
            assert_eq!(engagement_bernoulli(&zero, &fv("1010"), SITE_0, &fv("1010"), &mut r).unwrap(), None);
            assert!(engagement_bernoulli(&one, &fv("1010"), SITE_0, &fv("1010"), &mut r).unwrap().is_some());
        }
    }

    #[test]
    fn engagement_rate_matches_product() {
        let params = BehaviorParams::new(1.0, 0.05, None).unwrap();
        // closeness 0.8
        let (x, ad) = (fv("11111"), fv("11110"));
        let mut r = rng::seeded(6);
        let trials = 1_000_000;
        let hits = (0..trials)
            .filter(|_| engagement_bernoulli(&params, &x, SITE_0, &ad, &mut r).unwrap().is_some())
            .count();
        let p = hits as f64 / trials as f64;
        let sigma = (0.04f64 * 0.96 / trials as f64).sqrt();
        assert!((p - 0.04).abs() < 3.0 * sigma, "{p}");
    }

    #[test]
    fn browsing_is_constant() {
        assert_eq!(browsing_constant(&fv("1"), &[]), SITE_0);
        assert_eq!(browsing_constant(&fv("0"), &[entry("1", true)]), SITE_0);
    }

    #[test]
    fn last_touch_examples() {
        assert_eq!(attribution_last_touch(&[entry("10", true)]), vec![(fv("10"), 1.0)]);
        assert_eq!(
            attribution_last_touch(&[entry("01", false), entry("10", true)]),
            vec![(fv("10"), 1.0)]
        );
        assert!(attribution_last_touch(&[entry("01", false)]).is_empty());
    }

    #[test]
    fn identity_report_is_unchanged() {
        for scores in [
            BTreeMap::new(),
            BTreeMap::from([(fv("1"), 3.0)]),
            BTreeMap::from([(fv("10"), 0.0), (fv("01"), 7.0)]),
        ] {
            assert_eq!(reporting_identity(&scores).scores, scores);
        }
    }

    #[test]
    fn dp_report_checks_epsilon() {
        let scores = BTreeMap::from([(fv("1"), 3.0)]);
        let mut r = rng::seeded(1);
        let none = BehaviorParams { alpha_t: 1.0, alpha_e: 1.0, alpha_a: 1.0, epsilon: None, rho: Rho::Identity };
        assert!(matches!(reporting_dp(&none, &scores, &mut r), Err(Error::Config(_))));
        let big = BehaviorParams { epsilon: Some(1.5), ..none.clone() };
        assert!(matches!(reporting_dp(&big, &scores, &mut r), Err(Error::Config(_))));
        assert!(BehaviorParams::new(1.0, 1.0, Some(1.0)).is_err());
    }

    #[test]
    fn dp_report_behaviour() {
        let scores = BTreeMap::from([(fv("1"), 50.0)]);
        let params = BehaviorParams::new(1.0, 1.0, Some(0.5)).unwrap();
        let a = reporting_dp(&params, &scores, &mut rng::seeded(2)).unwrap();
        let b = reporting_dp(&params, &scores, &mut rng::seeded(2)).unwrap();
        assert_eq!(a, b);
        let sharp = tulap_report(&scores, 60.0, &mut rng::seeded(3)).unwrap();
        assert!((sharp.get(&fv("1")) - 50.0).abs() <= 0.5);
        let mut r = rng::seeded(4);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| reporting_dp(&params, &scores, &mut r).unwrap().get(&fv("1"))).sum::<f64>() / n as f64;
        assert!((mean - 50.0).abs() < 0.1, "{mean}");
    }
}
