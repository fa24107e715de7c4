//! The advertising ecosystem as one state machine composed of the Society,
//! User, Targeting, Engagement and Metrics functionalities.
//!
//! Every operation either succeeds or returns a [`Fail`] without touching any
//! state, including the random stream.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behaviors::{
    attribution_last_touch, browsing_constant, engagement_bernoulli, reporting_dp, reporting_identity, rho_apply,
    targeting_pairwise, ActiveAd, BehaviorParams, Conversion, Report, Site,
};
use crate::error::{Error, Result};
use crate::feature_space::{ExplicitDistribution, FeatureVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engagement {
    Pending,
    NoConversion,
    Converted(Conversion),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowsingEntry {
    pub site: Site,
    pub ad: Option<FeatureVector>,
    pub engagement: Engagement,
}

impl BrowsingEntry {
    pub fn conversion(&self) -> Option<Conversion> {
        match self.engagement {
            Engagement::Converted(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    pub features: Option<FeatureVector>,
    pub browsing_history: Vec<BrowsingEntry>,
    pub targeting_idx: usize,
    pub engagement_idx: usize,
    pub attribution_idx: usize,
}

impl UserRecord {
    fn new(user_id: usize) -> Self {
        UserRecord {
            user_id,
            features: None,
            browsing_history: Vec::new(),
            targeting_idx: 0,
            engagement_idx: 0,
            attribution_idx: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Campaign {
    pub audience: FeatureVector,
    pub ads: Vec<FeatureVector>,
}

impl Campaign {
    pub fn new(audience: FeatureVector, ads: Vec<FeatureVector>) -> Result<Self> {
        if ads.is_empty() {
            return Err(Error::model("campaign needs at least one ad"));
        }
        for ad in &ads {
            Error::check_dim(audience.len(), ad.len())?;
        }
        Ok(Campaign { audience, ads })
    }

    pub fn dimension(&self) -> usize {
        self.audience.len()
    }
}

/// Cumulative attributed score per ad.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdScores(BTreeMap<FeatureVector, f64>);

impl AdScores {
    pub fn add(&mut self, ad: FeatureVector, score: f64) {
        *self.0.entry(ad).or_insert(0.0) += score;
    }

    pub fn get(&self, ad: &FeatureVector) -> f64 {
        self.0.get(ad).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    /// Scores for `ads` only; ads never credited report 0.
    pub fn restrict(&self, ads: &[FeatureVector]) -> BTreeMap<FeatureVector, f64> {
        ads.iter().map(|a| (a.clone(), self.get(a))).collect()
    }

    pub fn as_map(&self) -> &BTreeMap<FeatureVector, f64> {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocietyConfig {
    pub n: usize,
    pub dist: ExplicitDistribution,
}

impl SocietyConfig {
    pub fn new(n: usize, dist: ExplicitDistribution) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("society needs at least one user"));
        }
        Ok(SocietyConfig { n, dist })
    }
}

/// Failure outcomes. None of them changes ecosystem state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fail {
    UnknownUser,
    NoPendingImpression,
    NoPendingEngagement,
    NoUnattributedConversion,
    NoActiveAds,
}

pub type Outcome<T> = std::result::Result<T, Fail>;

#[derive(Clone, Debug)]
pub struct Ecosystem<R> {
    society: SocietyConfig,
    params: BehaviorParams,
    users: Vec<UserRecord>,
    campaigns: Vec<Campaign>,
    active_ads: Vec<ActiveAd>,
    ad_scores: AdScores,
    rng: R,
}

impl<R: Rng> Ecosystem<R> {
    pub fn new(society: SocietyConfig, params: BehaviorParams, rng: R) -> Result<Self> {
        params.validate()?;
        let users = (0..society.n).map(UserRecord::new).collect();
        Ok(Ecosystem {
            society,
            params,
            users,
            campaigns: Vec::new(),
            active_ads: Vec::new(),
            ad_scores: AdScores::default(),
            rng,
        })
    }

    pub fn dimension(&self) -> usize {
        self.society.dist.dimension()
    }

    pub fn params(&self) -> &BehaviorParams {
        &self.params
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn user(&self, user_id: usize) -> Option<&UserRecord> {
        self.users.get(user_id)
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    pub fn active_ads(&self) -> &[ActiveAd] {
        &self.active_ads
    }

    pub fn ad_scores(&self) -> &AdScores {
        &self.ad_scores
    }

    pub fn register_campaign(&mut self, campaign: Campaign) -> Result<()> {
        if campaign.ads.is_empty() {
            return Err(Error::model("campaign needs at least one ad"));
        }
        Error::check_dim(self.dimension(), campaign.audience.len())?;
        for ad in &campaign.ads {
            Error::check_dim(self.dimension(), ad.len())?;
        }
        for ad in &campaign.ads {
            self.active_ads.push(ActiveAd { audience: campaign.audience.clone(), ad: ad.clone() });
        }
        self.campaigns.push(campaign);
        Ok(())
    }

    pub fn browse(&mut self, user_id: usize) -> Outcome<Site> {
        if user_id >= self.users.len() {
            return Err(Fail::UnknownUser);
        }
        if self.users[user_id].features.is_none() {
            let x = self.society.dist.sample(&mut self.rng);
            self.users[user_id].features = Some(x);
        }
        let user = &mut self.users[user_id];
        let features = user.features.as_ref().expect("initialized above");
        let site = browsing_constant(features, &user.browsing_history);
        user.browsing_history.push(BrowsingEntry { site, ad: None, engagement: Engagement::Pending });
        Ok(site)
    }

    pub fn target_ad(&mut self, user_id: usize) -> Outcome<FeatureVector> {
        let user = self.users.get(user_id).ok_or(Fail::UnknownUser)?;
        if user.targeting_idx >= user.browsing_history.len() {
            return Err(Fail::NoPendingImpression);
        }
        if self.active_ads.is_empty() {
            return Err(Fail::NoActiveAds);
        }
        let features = user.features.as_ref().expect("browsed users have features");
        let filtered = rho_apply(&self.params.rho, features);
        let site = user.browsing_history[user.targeting_idx].site;
        let ad = targeting_pairwise(&self.params, &self.active_ads, &filtered, site, &mut self.rng)
            .expect("registered ads share the society dimension");
        let user = &mut self.users[user_id];
        let idx = user.targeting_idx;
        user.browsing_history[idx].ad = Some(ad.clone());
        user.targeting_idx += 1;
        Ok(ad)
    }

    pub fn engage(&mut self, user_id: usize) -> Outcome<Option<Conversion>> {
        let user = self.users.get(user_id).ok_or(Fail::UnknownUser)?;
        if user.engagement_idx >= user.targeting_idx {
            return Err(Fail::NoPendingEngagement);
        }
        let entry = &user.browsing_history[user.engagement_idx];
        let features = user.features.as_ref().expect("browsed users have features");
        let ad = entry.ad.as_ref().expect("targeted entries carry an ad");
        let conversion = engagement_bernoulli(&self.params, features, entry.site, ad, &mut self.rng)
            .expect("registered ads share the society dimension");
        let user = &mut self.users[user_id];
        let idx = user.engagement_idx;
        user.browsing_history[idx].engagement = match conversion {
            Some(c) => Engagement::Converted(c),
            None => Engagement::NoConversion,
        };
        user.engagement_idx += 1;
        Ok(conversion)
    }

    /// Credits the next unattributed conversion. The slice handed to the
    /// attribution function runs from `attribution_idx` through the
    /// converting entry inclusive.
    pub fn attribute(&mut self, user_id: usize) -> Outcome<()> {
        let user = self.users.get(user_id).ok_or(Fail::UnknownUser)?;
        let start = user.attribution_idx;
        let k = user.browsing_history[start..user.engagement_idx]
            .iter()
            .position(|e| e.conversion().is_some())
            .map(|off| start + off)
            .ok_or(Fail::NoUnattributedConversion)?;
        for (ad, score) in attribution_last_touch(&user.browsing_history[start..=k]) {
            self.ad_scores.add(ad, score);
        }
        self.users[user_id].attribution_idx = k + 1;
        Ok(())
    }

    pub fn generate_report(&mut self, campaign: &Campaign) -> Result<Report> {
        if !self.campaigns.contains(campaign) {
            return Err(Error::Usage("report requested for an unregistered campaign".into()));
        }
        let scores = self.ad_scores.restrict(&campaign.ads);
        if self.params.epsilon.is_some() {
            reporting_dp(&self.params, &scores, &mut self.rng)
        } else {
            Ok(reporting_identity(&scores))
        }
    }

    /// `rounds` × (browse → target → engage) per user, then attribution of
    /// every conversion.
    pub fn run_standard_schedule(&mut self, rounds: usize) -> Result<()> {
        for user in 0..self.users.len() {
            for _ in 0..rounds {
                self.browse(user).map_err(schedule_fail)?;
                self.target_ad(user).map_err(schedule_fail)?;
                self.engage(user).map_err(schedule_fail)?;
            }
        }
        for user in 0..self.users.len() {
            while self.attribute(user).is_ok() {}
        }
        Ok(())
    }
}

fn schedule_fail(f: Fail) -> Error {
    Error::Usage(format!("standard schedule hit fail outcome {f:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, SimRng};

    fn fv(s: &str) -> FeatureVector {
        s.parse().unwrap()
    }

    fn eco(dist: ExplicitDistribution, n: usize, alpha_e: f64) -> Ecosystem<SimRng> {
        let params = BehaviorParams::new(1.0, alpha_e, None).unwrap();
        Ecosystem::new(SocietyConfig::new(n, dist).unwrap(), params, rng::seeded(7)).unwrap()
    }

    fn uniform_eco(n: usize) -> Ecosystem<SimRng> {
        eco(ExplicitDistribution::uniform(4).unwrap(), n, 1.0)
    }

    #[test]
    fn register_examples() {
        let mut e = uniform_eco(2);
        let c = Campaign::new(fv("1111"), vec![fv("1111"), fv("0111")]).unwrap();
        e.register_campaign(c.clone()).unwrap();
        assert_eq!(e.active_ads().len(), 2);
        e.register_campaign(c).unwrap();
        assert_eq!(e.active_ads().len(), 4);
        assert!(Campaign::new(fv("1111"), vec![]).is_err());
        let bad = Campaign { audience: fv("111"), ads: vec![fv("111")] };
        assert!(matches!(e.register_campaign(bad), Err(Error::Dimension { .. })));
        let empty = Campaign { audience: fv("1111"), ads: vec![] };
        assert!(e.register_campaign(empty).is_err());
    }

    #[test]
    fn browse_examples() {
        let mut e = uniform_eco(2);
        let s1 = e.browse(0).unwrap();
        let f1 = e.user(0).unwrap().features.clone().unwrap();
        assert_eq!(e.user(0).unwrap().browsing_history.len(), 1);
        let s2 = e.browse(0).unwrap();
        assert_eq!(e.user(0).unwrap().browsing_history.len(), 2);
        assert_eq!(e.user(0).unwrap().features.clone().unwrap(), f1);
        assert_eq!(s1, s2);
        assert_eq!(e.browse(2), Err(Fail::UnknownUser));
    }

    #[test]
    fn target_examples() {
        let mut e = uniform_eco(1);
        e.register_campaign(Campaign::new(fv("1010"), vec![fv("1010")]).unwrap()).unwrap();
        assert_eq!(e.target_ad(0), Err(Fail::NoPendingImpression));
        e.browse(0).unwrap();
        assert_eq!(e.target_ad(0), Ok(fv("1010")));
        let u = e.user(0).unwrap();
        assert_eq!(u.targeting_idx, 1);
        assert_eq!(u.browsing_history[0].ad, Some(fv("1010")));
        assert_eq!(e.target_ad(0), Err(Fail::NoPendingImpression));
    }

    #[test]
    fn target_without_campaign_fails() {
        let mut e = uniform_eco(1);
        e.browse(0).unwrap();
        assert_eq!(e.target_ad(0), Err(Fail::NoActiveAds));
    }

    #[test]
    fn engage_examples() {
        let x = fv("1100");
        let mut zero = eco(ExplicitDistribution::point_mass(&x).unwrap(), 1, 0.0);
        let mut one = eco(ExplicitDistribution::point_mass(&x).unwrap(), 1, 1.0);
        for e in [&mut zero, &mut one] {
            e.register_campaign(Campaign::new(x.clone(), vec![x.clone()]).unwrap()).unwrap();
        }
        for _ in 0..50 {
            for e in [&mut zero, &mut one] {
                e.browse(0).unwrap();
                e.target_ad(0).unwrap();
            }
            assert_eq!(zero.engage(0), Ok(None));
            assert_eq!(one.engage(0), Ok(Some(Conversion)));
        }
        assert_eq!(one.engage(0), Err(Fail::NoPendingEngagement));
    }

    #[test]
    fn attribute_examples() {
        let x = fv("1100");
        let mut e = eco(ExplicitDistribution::point_mass(&x).unwrap(), 1, 1.0);
        let c = Campaign::new(x.clone(), vec![x.clone()]).unwrap();
        e.register_campaign(c.clone()).unwrap();
        assert_eq!(e.attribute(0), Err(Fail::NoUnattributedConversion));
        for _ in 0..2 {
            e.browse(0).unwrap();
            e.target_ad(0).unwrap();
            e.engage(0).unwrap();
        }
        assert_eq!(e.attribute(0), Ok(()));
        assert_eq!(e.user(0).unwrap().attribution_idx, 1);
        assert_eq!(e.ad_scores().get(&x), 1.0);
        assert_eq!(e.attribute(0), Ok(()));
        assert_eq!(e.user(0).unwrap().attribution_idx, 2);
        assert_eq!(e.attribute(0), Err(Fail::NoUnattributedConversion));
        assert_eq!(e.generate_report(&c).unwrap().get(&x), 2.0);
    }

    #[test]
    fn no_conversions_leave_scores_empty() {
        let x = fv("1100");
        let mut e = eco(ExplicitDistribution::point_mass(&x).unwrap(), 1, 0.0);
        let c = Campaign::new(x.clone(), vec![x.clone(), fv("0100")]).unwrap();
        e.register_campaign(c.clone()).unwrap();
        e.run_standard_schedule(3).unwrap();
        assert_eq!(e.attribute(0), Err(Fail::NoUnattributedConversion));
        let r = e.generate_report(&c).unwrap();
        assert_eq!(r.scores.values().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    }

    #[test]
    fn report_only_for_registered_campaigns() {
        let mut e = uniform_eco(1);
        let c = Campaign::new(fv("1111"), vec![fv("1111")]).unwrap();
        assert!(matches!(e.generate_report(&c), Err(Error::Usage(_))));
    }

    #[test]
    fn dp_report_is_seed_deterministic() {
        let run = || {
            let params = BehaviorParams::new(1.0, 0.5, Some(0.5)).unwrap();
            let dist = ExplicitDistribution::uniform(4).unwrap();
            let mut e = Ecosystem::new(SocietyConfig::new(30, dist).unwrap(), params, rng::seeded(21)).unwrap();
            let c = Campaign::new(fv("1111"), vec![fv("1111"), fv("0111")]).unwrap();
            e.register_campaign(c.clone()).unwrap();
            e.run_standard_schedule(1).unwrap();
            e.generate_report(&c).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.noise.is_some());
    }

    #[test]
    fn ad_targeted_to_features_when_alpha_is_one() {
        // Point mass at ad_1's vector, audiences equal to ads, ℓ = 4: Δ = 1/4.
        let a1 = fv("1111");
        let a2 = fv("0111");
        let n = 40_000;
        let mut e = eco(ExplicitDistribution::point_mass(&a1).unwrap(), n, 1.0);
        let c1 = Campaign::new(a1.clone(), vec![a1.clone()]).unwrap();
        let c2 = Campaign::new(a2.clone(), vec![a2.clone()]).unwrap();
        e.register_campaign(c1.clone()).unwrap();
        e.register_campaign(c2.clone()).unwrap();
        e.run_standard_schedule(1).unwrap();
        let r = Report::merge([e.generate_report(&c1).unwrap(), e.generate_report(&c2).unwrap()]).unwrap();
        let nf = n as f64;
        let (m1, m2) = (0.625, 0.28125);
        assert!((r.get(&a1) - m1 * nf).abs() < 3.0 * (nf * m1 * (1.0 - m1)).sqrt());
        assert!((r.get(&a2) - m2 * nf).abs() < 3.0 * (nf * m2 * (1.0 - m2)).sqrt());
    }
}
