//! The EXEC experiment, the distinguishing game between `D_0` and `D_1`, and
//! the empirical sample-complexity search.
//!
//! Trial `t` under master seed `s` always draws from `rng::stream(s, t)` in a
//! fixed layout, so runs at different campaign sizes, arms and parameters
//! share their random numbers:
//!
//! | draw | use |
//! |------|-----|
//! | 0 | secret bit `b` |
//! | 1 | ad_1 (or baseline) count, by inversion |
//! | 2 | ad_2 count, by inversion |
//! | 3..6 | Tulap noise on ad_1 |
//! | 6..9 | Tulap noise on ad_2 |
//!
//! The full simulator (`Backend::Simulate`) consumes draw 0 and then hands the
//! stream to the ecosystem.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::engagement_output_distribution_for;
use crate::behaviors::{ActiveAd, BehaviorParams, Report};
use crate::dp_stats::{tulap_from_uniforms, BinomialTable, Side, TestResult, TulapParams};
use crate::ecosystem::{Campaign, Ecosystem, SocietyConfig};
use crate::error::{Error, Result};
use crate::feature_space::{total_variation, ExplicitDistribution, FeatureVector};
use crate::rng::{self, SimRng};

pub const DEFAULT_CEILING: u64 = 10_000_000;

/// Two single-ad campaigns whose ads differ only at `b_test`: ad_A is all
/// ones and ad_B clears `b_test`. Each ad is its own audience.
pub fn ab_campaigns(ell: usize, b_test: usize) -> Result<[Campaign; 2]> {
    if ell == 0 {
        return Err(Error::model("feature length must be >= 1"));
    }
    let a = FeatureVector::ones(ell);
    let b = a.with_bit(b_test, 0)?;
    Ok([Campaign::new(a.clone(), vec![a])?, Campaign::new(b.clone(), vec![b])?])
}

pub fn active_ads(campaigns: &[Campaign]) -> Vec<ActiveAd> {
    campaigns
        .iter()
        .flat_map(|c| c.ads.iter().map(|ad| ActiveAd { audience: c.audience.clone(), ad: ad.clone() }))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Aggregate sampling when `rounds_per_user == 1`, full simulation otherwise.
    #[default]
    Auto,
    /// Sample the two ad counts directly from their exact joint law.
    Aggregate,
    /// Run the ecosystem state machine user by user.
    Simulate,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    /// The full ecosystem; the adversary sees the campaign report.
    #[default]
    Ecosystem,
    /// Direct samples of the `b_test` bit, no ecosystem.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub n: u64,
    pub d0: ExplicitDistribution,
    pub d1: ExplicitDistribution,
    pub b_test: usize,
    pub campaigns: Vec<Campaign>,
    pub behavior: BehaviorParams,
    pub rounds_per_user: usize,
    pub level: f64,
    pub kind: GameKind,
    pub backend: Backend,
    /// Test direction; chosen from the alternative when absent.
    pub side: Option<Side>,
}

impl GameConfig {
    /// Standard A/B game with defaults (one round, level 0.05, auto backend).
    pub fn ab(
        n: u64,
        d0: ExplicitDistribution,
        d1: ExplicitDistribution,
        b_test: usize,
        behavior: BehaviorParams,
    ) -> Result<Self> {
        let campaigns = ab_campaigns(d0.dimension(), b_test)?.to_vec();
        let cfg = GameConfig {
            n,
            d0,
            d1,
            b_test,
            campaigns,
            behavior,
            rounds_per_user: 1,
            level: 0.05,
            kind: GameKind::Ecosystem,
            backend: Backend::Auto,
            side: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_n(&self, n: u64) -> Self {
        GameConfig { n, ..self.clone() }
    }

    pub fn ell(&self) -> usize {
        self.d0.dimension()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("campaign size n must be >= 1"));
        }
        Error::check_dim(self.d0.dimension(), self.d1.dimension())?;
        if self.b_test >= self.ell() {
            return Err(Error::IndexOutOfRange { index: self.b_test, len: self.ell() });
        }
        if self.rounds_per_user == 0 {
            return Err(Error::config("rounds_per_user must be >= 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        self.behavior.validate()?;
        let ads = active_ads(&self.campaigns);
        if ads.len() != 2 {
            return Err(Error::Unsupported(format!("the game needs exactly two ads, got {}", ads.len())));
        }
        for a in &ads {
            Error::check_dim(self.ell(), a.ad.len())?;
            Error::check_dim(self.ell(), a.audience.len())?;
        }
        if self.backend == Backend::Aggregate && self.rounds_per_user != 1 {
            return Err(Error::Unsupported("aggregate backend needs rounds_per_user = 1".into()));
        }
        Ok(())
    }

    fn uses_aggregate(&self) -> bool {
        match self.backend {
            Backend::Auto => self.rounds_per_user == 1,
            Backend::Aggregate => true,
            Backend::Simulate => false,
        }
    }

    fn dist(&self, b: u8) -> &ExplicitDistribution {
        if b == 0 {
            &self.d0
        } else {
            &self.d1
        }
    }

    pub fn ad_1(&self) -> FeatureVector {
        self.campaigns[0].ads[0].clone()
    }
}

/// Per-user success probabilities of the adversary's statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticLaw {
    /// `[P(ad_1 conversion), P(ad_2 conversion)]` under `D_0` and `D_1`, or
    /// the `b_test` marginals for the baseline.
    pub first: [f64; 2],
    pub second: [f64; 2],
}

pub fn statistic_law(config: &GameConfig) -> Result<StatisticLaw> {
    match config.kind {
        GameKind::Baseline => {
            let m0 = config.d0.marginals()[config.b_test];
            let m1 = config.d1.marginals()[config.b_test];
            Ok(StatisticLaw { first: [m0, m1], second: [0.0, 0.0] })
        }
        GameKind::Ecosystem => {
            let ads = active_ads(&config.campaigns);
            let mass = |b: u8, which: usize| -> Result<f64> {
                Ok(engagement_output_distribution_for(config.dist(b), &ads, &config.behavior, which)?
                    .total_mass()
                    .clamp(0.0, 1.0))
            };
            Ok(StatisticLaw { first: [mass(0, 0)?, mass(1, 0)?], second: [mass(0, 1)?, mass(1, 1)?] })
        }
    }
}

/// The one-sided test the adversary runs against the `D_0` null.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub side: Side,
    pub null_p: f64,
    pub trials: u64,
    pub level: f64,
    pub noise: Option<TulapParams>,
    null: BinomialTable,
    critical: Option<u64>,
}

impl Adversary {
    pub fn new(config: &GameConfig) -> Result<Self> {
        config.validate()?;
        let law = statistic_law(config)?;
        let (p0, p1) = (law.first[0], law.first[1]);
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::Degenerate(format!("null proportion {p0} leaves nothing to test")));
        }
        let side = config.side.unwrap_or(if p1 >= p0 { Side::Upper } else { Side::Lower });
        let trials = match config.kind {
            GameKind::Baseline => config.n,
            GameKind::Ecosystem => config.n * config.rounds_per_user as u64,
        };
        let noise = match config.kind {
            GameKind::Baseline => None,
            GameKind::Ecosystem => config.behavior.tulap()?,
        };
        let null = BinomialTable::new(trials, p0)?;
        let critical = if noise.is_none() { Some(critical_count(&null, side, config.level)) } else { None };
        Ok(Adversary { side, null_p: p0, trials, level: config.level, noise, null, critical })
    }

    pub fn test(&self, statistic: f64, noise: Option<&TulapParams>) -> Result<TestResult> {
        if noise != self.noise.as_ref() {
            return Err(Error::config("report noise does not match the test's noise parameters"));
        }
        match noise {
            Some(params) => self.null.ump_test(statistic, params, self.side, self.level),
            None => {
                if statistic < 0.0 || statistic.fract() != 0.0 {
                    return Err(Error::config(format!("exact test needs an integer count, got {statistic}")));
                }
                self.null.exact_test(statistic as u64, self.side, self.level)
            }
        }
    }

    fn rejects_fast(&self, statistic: f64) -> Result<bool> {
        match (self.critical, self.noise) {
            (Some(k), None) => Ok(match self.side {
                Side::Upper => statistic >= k as f64,
                Side::Lower => statistic <= k as f64,
            }),
            _ => Ok(self.test(statistic, self.noise.as_ref())?.reject),
        }
    }

    /// Guess `b = 1` iff the test rejects the `D_0` null.
    pub fn guess(&self, report: &Report, ad_1: &FeatureVector) -> Result<u8> {
        Ok(self.test(report.get(ad_1), report.noise.as_ref())?.reject as u8)
    }
}

/// Boundary count of the exact test's rejection region at `level`.
fn critical_count(null: &BinomialTable, side: Side, level: f64) -> u64 {
    let n = null.n();
    match side {
        Side::Upper => {
            let (mut lo, mut hi) = (0u64, n + 1);
            // smallest k with P(X >= k) <= level; n + 1 means never
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if null.survival(mid as i64) <= level {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            lo
        }
        Side::Lower => {
            // largest k with P(X <= k) <= level; u64::MAX means never
            if null.cdf(0) > level {
                return u64::MAX;
            }
            let (mut lo, mut hi) = (0u64, n);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if null.cdf(mid as i64) <= level {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lo
        }
    }
}

struct TrialDraws {
    u_b: f64,
    u_first: f64,
    u_second: f64,
    tulap_first: [f64; 3],
    tulap_second: [f64; 3],
}

fn draw_layout<R: Rng + ?Sized>(rng: &mut R) -> TrialDraws {
    let u_b = rng.random::<f64>();
    let u_first = rng.random::<f64>();
    let u_second = rng.random::<f64>();
    let tulap_first = [rng::open_unit(rng), rng::open_unit(rng), rng.random::<f64>()];
    let tulap_second = [rng::open_unit(rng), rng::open_unit(rng), rng.random::<f64>()];
    TrialDraws { u_b, u_first, u_second, tulap_first, tulap_second }
}

fn bit_from(u: f64) -> u8 {
    (u >= 0.5) as u8
}

/// Precomputed sampling tables for the aggregate backend at one `n`.
struct AggregateSampler {
    first: [BinomialTable; 2],
    law: StatisticLaw,
}

impl AggregateSampler {
    fn new(config: &GameConfig, law: StatisticLaw) -> Result<Self> {
        Ok(AggregateSampler {
            first: [BinomialTable::new(config.n, law.first[0])?, BinomialTable::new(config.n, law.first[1])?],
            law,
        })
    }

    fn first_count(&self, b: u8, u: f64) -> u64 {
        self.first[b as usize].quantile(u)
    }

    fn second_count(&self, config: &GameConfig, b: u8, first: u64, u: f64) -> Result<u64> {
        let (pa, pb) = (self.law.first[b as usize], self.law.second[b as usize]);
        let rest = config.n - first;
        let cond = if pa >= 1.0 { 0.0 } else { (pb / (1.0 - pa)).clamp(0.0, 1.0) };
        Ok(BinomialTable::new(rest, cond)?.quantile(u))
    }
}

fn aggregate_report(
    config: &GameConfig,
    sampler: &AggregateSampler,
    b: u8,
    draws: &TrialDraws,
) -> Result<Report> {
    let first = sampler.first_count(b, draws.u_first);
    let second = sampler.second_count(config, b, first, draws.u_second)?;
    let ads = active_ads(&config.campaigns);
    let noise = config.behavior.tulap()?;
    let release = |count: u64, u: &[f64; 3]| match noise {
        Some(p) => count as f64 + tulap_from_uniforms(&p, u[0], u[1], u[2]),
        None => count as f64,
    };
    let scores = BTreeMap::from([
        (ads[0].ad.clone(), release(first, &draws.tulap_first)),
        (ads[1].ad.clone(), release(second, &draws.tulap_second)),
    ]);
    Ok(Report { scores, noise })
}

/// One EXEC run with society distribution `D_b`, simulated user by user.
pub fn run_exec<R: Rng>(config: &GameConfig, b: u8, rng: R) -> Result<Report> {
    config.validate()?;
    if config.kind == GameKind::Baseline {
        return Err(Error::Usage("the baseline game has no ecosystem to execute".into()));
    }
    let society = SocietyConfig::new(config.n as usize, config.dist(b).clone())?;
    let mut eco = Ecosystem::new(society, config.behavior.clone(), rng)?;
    for c in &config.campaigns {
        eco.register_campaign(c.clone())?;
    }
    eco.run_standard_schedule(config.rounds_per_user)?;
    let reports = config
        .campaigns
        .iter()
        .map(|c| eco.generate_report(c))
        .collect::<Result<Vec<_>>>()?;
    Report::merge(reports)
}

/// Statistic observed by the adversary in one trial with secret bit `b`.
fn observe(
    config: &GameConfig,
    sampler: Option<&AggregateSampler>,
    b: u8,
    draws: &TrialDraws,
    rng: &mut SimRng,
) -> Result<Report> {
    match (config.kind, sampler) {
        (GameKind::Baseline, Some(s)) => {
            let count = s.first_count(b, draws.u_first);
            Ok(Report { scores: BTreeMap::from([(config.ad_1(), count as f64)]), noise: None })
        }
        (GameKind::Baseline, None) => {
            let dist = config.dist(b);
            let count = (0..config.n).filter(|_| dist.sample(rng).bit(config.b_test) == 1).count();
            Ok(Report { scores: BTreeMap::from([(config.ad_1(), count as f64)]), noise: None })
        }
        (GameKind::Ecosystem, Some(s)) => aggregate_report(config, s, b, draws),
        (GameKind::Ecosystem, None) => run_exec(config, b, rng.clone()),
    }
}

/// Everything fixed across the trials of one configuration.
struct Prepared<'a> {
    config: &'a GameConfig,
    adversary: Adversary,
    sampler: Option<AggregateSampler>,
}

impl<'a> Prepared<'a> {
    fn new(config: &'a GameConfig) -> Result<Self> {
        let adversary = Adversary::new(config)?;
        let aggregate = config.kind == GameKind::Baseline && config.backend != Backend::Simulate
            || config.kind == GameKind::Ecosystem && config.uses_aggregate();
        let sampler = if aggregate { Some(AggregateSampler::new(config, statistic_law(config)?)?) } else { None };
        Ok(Prepared { config, adversary, sampler })
    }

    /// Secret bit and adversary guess for the trial drawn from `rng`.
    fn play(&self, rng: &mut SimRng, force_b: Option<u8>) -> Result<(u8, u8)> {
        let draws = draw_layout(rng);
        let b = force_b.unwrap_or_else(|| bit_from(draws.u_b));
        let report = observe(self.config, self.sampler.as_ref(), b, &draws, rng)?;
        let guess = match self.adversary.noise {
            None => self.adversary.rejects_fast(report.get(&self.config.ad_1()))? as u8,
            Some(_) => self.adversary.guess(&report, &self.config.ad_1())?,
        };
        Ok((b, guess))
    }
}

/// One round of the game: sample `b`, run EXEC on `D_b`, let the adversary
/// guess. Returns whether the guess was right.
pub fn run_trial(config: &GameConfig, rng: &mut SimRng) -> Result<bool> {
    let prepared = Prepared::new(config)?;
    let (b, guess) = prepared.play(rng, None)?;
    Ok(b == guess)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    pub advantage: f64,
    pub trials: u64,
    pub half_width_3sigma: f64,
}

impl AdvantageEstimate {
    pub fn from_counts(correct: u64, trials: u64) -> Self {
        let q = correct as f64 / trials as f64;
        AdvantageEstimate {
            advantage: 2.0 * q - 1.0,
            trials,
            half_width_3sigma: 2.0 * 3.0 * (q * (1.0 - q) / trials as f64).sqrt(),
        }
    }
}

pub fn estimate_advantage(config: &GameConfig, trials: u64, master_seed: u64) -> Result<AdvantageEstimate> {
    if trials < 100 {
        return Err(Error::config(format!("advantage estimation needs at least 100 trials, got {trials}")));
    }
    let prepared = Prepared::new(config)?;
    let correct = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(master_seed, t);
            let (b, guess) = prepared.play(&mut rng, None)?;
            Ok((b == guess) as u64)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(AdvantageEstimate::from_counts(correct, trials))
}

/// Fraction of `b = 1` trials in which the adversary's test rejects.
pub fn estimate_power(config: &GameConfig, trials: u64, master_seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::config("power estimation needs at least one trial"));
    }
    let prepared = Prepared::new(config)?;
    let rejections: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(master_seed, t);
            Ok(prepared.play(&mut rng, Some(1))?.1 as u64)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum();
    Ok(rejections as f64 / trials as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SCResult {
    pub minimal_n: u64,
    pub power_at_n: f64,
    pub level: f64,
    pub target_power: f64,
    pub search_trace: Vec<(u64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub target_power: f64,
    pub trials_per_point: u64,
    pub master_seed: u64,
    pub ceiling: u64,
    pub start: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { target_power: 0.8, trials_per_point: 400, master_seed: 0, ceiling: DEFAULT_CEILING, start: 16 }
    }
}

/// Smallest campaign size whose power reaches the target: doubling from
/// `start`, then bisection to integer resolution. Every evaluation reuses the
/// same trial streams.
pub fn find_sample_complexity(template: &GameConfig, opts: &SearchOptions) -> Result<SCResult> {
    if !(opts.target_power > 0.5 && opts.target_power < 1.0) {
        return Err(Error::config(format!("target power must lie in (0.5, 1), got {}", opts.target_power)));
    }
    if opts.start == 0 || opts.ceiling < opts.start {
        return Err(Error::config("search needs 1 <= start <= ceiling"));
    }
    template.validate()?;
    if total_variation(&template.d0, &template.d1)? <= 1e-6 {
        return Err(Error::UndefinedSampleComplexity("D0 and D1 are indistinguishable (TV <= 1e-6)".into()));
    }
    let law = statistic_law(template)?;
    if law.first[0] == law.first[1] {
        return Err(Error::UndefinedSampleComplexity(
            "the adversary's statistic has the same law under D0 and D1".into(),
        ));
    }

    let mut trace: Vec<(u64, f64)> = Vec::new();
    let power = |n: u64, trace: &mut Vec<(u64, f64)>| -> Result<f64> {
        if let Some(&(_, p)) = trace.iter().find(|(m, _)| *m == n) {
            return Ok(p);
        }
        let p = estimate_power(&template.with_n(n), opts.trials_per_point, opts.master_seed)?;
        trace.push((n, p));
        Ok(p)
    };
    let passes = |p: f64| p >= opts.target_power;

    // Exponential bracketing. n = 0 has power 0.
    let (mut lo, mut hi) = (0u64, opts.start);
    loop {
        if passes(power(hi, &mut trace)?) {
            break;
        }
        if hi >= opts.ceiling {
            return Err(Error::Ceiling { ceiling: opts.ceiling, trace });
        }
        lo = hi;
        hi = (hi * 2).min(opts.ceiling);
    }

    for _ in 0..64 {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if passes(power(mid, &mut trace)?) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // Bracketing evidence: power at half the answer must fall short.
        let half = hi / 2;
        if half == 0 || !passes(power(half, &mut trace)?) {
            break;
        }
        hi = half;
        lo = trace.iter().filter(|(m, p)| *m < half && !passes(*p)).map(|(m, _)| *m).max().unwrap_or(0);
    }
    let power_at_n = power(hi, &mut trace)?;
    Ok(SCResult { minimal_n: hi, power_at_n, level: template.level, target_power: opts.target_power, search_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_space::CorrelatedBernoulliSpec;

    fn fv(s: &str) -> FeatureVector {
        s.parse().unwrap()
    }

    fn dists(m1: f64) -> (ExplicitDistribution, ExplicitDistribution) {
        let base = CorrelatedBernoulliSpec::equicorrelated(vec![0.5, 0.15, 0.15, 0.15], 0.16).unwrap();
        (base.materialize().unwrap(), base.derive_alternate(0, m1).unwrap().materialize().unwrap())
    }

    fn game(n: u64, m1: f64, eps: Option<f64>) -> GameConfig {
        let (d0, d1) = dists(m1);
        GameConfig::ab(n, d0, d1, 0, BehaviorParams::new(1.0, 0.2, eps).unwrap()).unwrap()
    }

    #[test]
    fn ab_campaigns_differ_in_one_bit() {
        let [a, b] = ab_campaigns(5, 2).unwrap();
        assert_eq!(a.ads[0], fv("11111"));
        assert_eq!(b.ads[0], fv("11011"));
        assert_eq!(a.ads[0].hamming(&b.ads[0]).unwrap(), 1);
        assert!(ab_campaigns(5, 5).is_err());
    }

    #[test]
    fn config_validation() {
        let g = game(10, 0.7, None);
        assert!(g.with_n(0).validate().is_err());
        let mut bad = g.clone();
        bad.rounds_per_user = 2;
        bad.backend = Backend::Aggregate;
        assert!(matches!(bad.validate(), Err(Error::Unsupported(_))));
        let mut single = g.clone();
        single.campaigns.truncate(1);
        assert!(single.validate().is_err());
    }

    #[test]
    fn critical_counts_match_p_values() {
        let null = BinomialTable::new(100, 0.5).unwrap();
        let k = critical_count(&null, Side::Upper, 0.05);
        assert!(null.survival(k as i64) <= 0.05 && null.survival(k as i64 - 1) > 0.05);
        let k = critical_count(&null, Side::Lower, 0.05);
        assert!(null.cdf(k as i64) <= 0.05 && null.cdf(k as i64 + 1) > 0.05);
        let tiny = BinomialTable::new(3, 0.5).unwrap();
        assert_eq!(critical_count(&tiny, Side::Upper, 0.05), 4);
        assert_eq!(critical_count(&tiny, Side::Lower, 0.05), u64::MAX);
    }

    #[test]
    fn exec_with_no_engagement_reports_zero() {
        let (d0, d1) = dists(0.7);
        let g = GameConfig::ab(50, d0, d1, 0, BehaviorParams::new(1.0, 0.0, None).unwrap()).unwrap();
        let r = run_exec(&g, 1, rng::seeded(1)).unwrap();
        assert!(r.scores.values().all(|&v| v == 0.0));
    }

    #[test]
    fn trials_are_deterministic() {
        let g = game(500, 0.8, Some(0.5));
        let a = run_trial(&g, &mut rng::stream(5, 3)).unwrap();
        let b = run_trial(&g, &mut rng::stream(5, 3)).unwrap();
        assert_eq!(a, b);
        let e1 = estimate_advantage(&g, 200, 9).unwrap();
        let e2 = estimate_advantage(&g, 200, 9).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn null_game_has_no_advantage() {
        let (d0, _) = dists(0.5);
        let g = GameConfig::ab(2000, d0.clone(), d0, 0, BehaviorParams::new(1.0, 0.2, None).unwrap()).unwrap();
        let e = estimate_advantage(&g, 4000, 1).unwrap();
        assert!(e.advantage.abs() <= e.half_width_3sigma, "{e:?}");
    }

    #[test]
    fn perfect_signal_game() {
        let a = fv("1111");
        let d0 = ExplicitDistribution::point_mass(&a.with_bit(0, 0).unwrap()).unwrap();
        let d1 = ExplicitDistribution::point_mass(&a).unwrap();
        let g = GameConfig::ab(5000, d0, d1, 0, BehaviorParams::new(1.0, 1.0, None).unwrap()).unwrap();
        // Advantage = power − type-I error; power is 1 here, type-I is at most the level.
        let e = estimate_advantage(&g, 400, 2).unwrap();
        assert!(e.advantage >= 1.0 - g.level - e.half_width_3sigma, "{e:?}");
        let power = estimate_power(&g, 400, 2).unwrap();
        assert_eq!(power, 1.0);
    }

    #[test]
    fn search_rejects_undefined_instances() {
        let (d0, _) = dists(0.5);
        let g = GameConfig::ab(10, d0.clone(), d0, 0, BehaviorParams::new(1.0, 0.2, None).unwrap()).unwrap();
        assert!(matches!(
            find_sample_complexity(&g, &SearchOptions::default()),
            Err(Error::UndefinedSampleComplexity(_))
        ));
        let g = game(10, 0.7, None);
        let bad = SearchOptions { target_power: 0.4, ..SearchOptions::default() };
        assert!(matches!(find_sample_complexity(&g, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn search_reports_ceiling_with_trace() {
        let g = game(10, 0.55, Some(0.5));
        let opts = SearchOptions { ceiling: 64, trials_per_point: 200, ..SearchOptions::default() };
        match find_sample_complexity(&g, &opts) {
            Err(Error::Ceiling { ceiling, trace }) => {
                assert_eq!(ceiling, 64);
                assert_eq!(trace.iter().map(|t| t.0).collect::<Vec<_>>(), vec![16, 32, 64]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn search_brackets_its_answer() {
        let g = game(10, 0.8, None);
        let opts = SearchOptions { trials_per_point: 300, master_seed: 4, ..SearchOptions::default() };
        let sc = find_sample_complexity(&g, &opts).unwrap();
        assert!(sc.power_at_n >= 0.8);
        let half = sc.search_trace.iter().find(|(n, _)| *n == sc.minimal_n / 2).unwrap();
        assert!(half.1 < 0.8);
        let below = sc.search_trace.iter().find(|(n, _)| *n == sc.minimal_n - 1);
        if let Some((_, p)) = below {
            assert!(*p < 0.8);
        }
    }

    #[test]
    fn adversary_rejects_noise_mismatch() {
        let g = game(100, 0.8, Some(0.5));
        let adv = Adversary::new(&g).unwrap();
        assert!(adv.test(10.0, None).is_err());
        let other = TulapParams::from_epsilon(0.3).unwrap();
        assert!(matches!(adv.test(10.0, Some(&other)), Err(Error::Config(_))));
        assert!(adv.test(10.0, g.behavior.tulap().unwrap().as_ref()).is_ok());
    }
}
