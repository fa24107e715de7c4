//! Attribute privacy checks in the Pufferfish style: statistic sensitivity,
//! exhaustive verification of the Pufferfish ratio bound on small instances,
//! and violation evidence from the distinguishing game.
//!
//! A dataset is `n` records drawn i.i.d. from a record distribution `D`. A
//! secret is a threshold event on the fraction of records carrying one
//! attribute.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behaviors::{prob_show_first, rho_apply, ActiveAd, BehaviorParams};
use crate::distinguishing::{estimate_advantage, GameConfig};
use crate::dp_stats::{geometric_noise_pmf, tulap_cdf, TulapParams};
use crate::error::{Error, Result};
use crate::feature_space::{closeness, ExplicitDistribution, FeatureVector};
use crate::rng;

/// Largest `n · ℓ` handled by exhaustive enumeration.
pub const MAX_ENUMERATED_BITS: usize = 16;

/// `lo <= fraction of records with attribute = 1 <= hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Secret {
    pub attribute: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Secret {
    pub fn new(attribute: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::config(format!("secret interval [{lo}, {hi}] is not inside [0, 1]")));
        }
        Ok(Secret { attribute, lo, hi })
    }

    pub fn holds(&self, records: &[FeatureVector]) -> bool {
        let g = attribute_fraction(records, self.attribute);
        g >= self.lo - 1e-12 && g <= self.hi + 1e-12
    }
}

pub fn attribute_fraction(records: &[FeatureVector], attribute: usize) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.bit(attribute) == 1).count() as f64 / records.len() as f64
}

/// Candidate data-generating distribution: `n` records i.i.d. from `dist`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub dist: ExplicitDistribution,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PufferfishFramework {
    pub secrets: Vec<Secret>,
    pub pairs: Vec<(usize, usize)>,
    pub thetas: Vec<Theta>,
}

impl PufferfishFramework {
    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() {
            return Err(Error::config("framework needs at least one distribution"));
        }
        let l = self.thetas[0].dist.dimension();
        for t in &self.thetas {
            Error::check_dim(l, t.dist.dimension())?;
        }
        for s in &self.secrets {
            if s.attribute >= l {
                return Err(Error::IndexOutOfRange { index: s.attribute, len: l });
            }
        }
        for &(a, b) in &self.pairs {
            if a >= self.secrets.len() || b >= self.secrets.len() {
                return Err(Error::config(format!("secret pair ({a}, {b}) refers to a missing secret")));
            }
            if a == b || self.secrets[a] == self.secrets[b] {
                return Err(Error::config(format!("secret pair ({a}, {b}) is not two distinct secrets")));
            }
        }
        Ok(())
    }
}

/// Enumerates every dataset of `theta` with its probability.
fn datasets(theta: &Theta) -> Result<Vec<(Vec<FeatureVector>, f64)>> {
    let l = theta.dist.dimension();
    let bits = theta.n * l;
    if bits > MAX_ENUMERATED_BITS {
        return Err(Error::Capacity(format!(
            "dataset space of {bits} bits exceeds the enumeration limit of {MAX_ENUMERATED_BITS}"
        )));
    }
    let per = 1usize << l;
    let total = per.pow(theta.n as u32);
    Ok((0..total)
        .filter_map(|code| {
            let mut rest = code;
            let mut p = 1.0;
            let mut records = Vec::with_capacity(theta.n);
            for _ in 0..theta.n {
                let idx = rest % per;
                rest /= per;
                p *= theta.dist.probabilities()[idx];
                records.push(FeatureVector::from_index(idx, l));
            }
            (p > 0.0).then_some((records, p))
        })
        .collect())
}

/// A randomized release whose output distribution is known in closed form
/// for every dataset. Outputs are integer-coded.
pub trait Mechanism: Sync {
    fn output_distribution(&self, records: &[FeatureVector]) -> Result<BTreeMap<i64, f64>>;

    fn probability(&self, records: &[FeatureVector], output: i64) -> Result<f64> {
        Ok(self.output_distribution(records)?.get(&output).copied().unwrap_or(0.0))
    }
}

pub struct ConstantMechanism;

impl Mechanism for ConstantMechanism {
    fn output_distribution(&self, _records: &[FeatureVector]) -> Result<BTreeMap<i64, f64>> {
        Ok(BTreeMap::from([(0, 1.0)]))
    }
}

/// Per-record probabilities of converting on ad_1 and on ad_2.
fn conversion_probs(ads: &[ActiveAd], params: &BehaviorParams, x: &FeatureVector) -> Result<(f64, f64)> {
    let [first, second] = ads else {
        return Err(Error::Unsupported(format!("needs exactly two ads, got {}", ads.len())));
    };
    let show = prob_show_first(params.alpha_t, first, second, &rho_apply(&params.rho, x))?;
    Ok((
        show * params.alpha_e * closeness(&first.ad, x)?,
        (1.0 - show) * params.alpha_e * closeness(&second.ad, x)?,
    ))
}

/// Joint law of (ad_1 count, ad_2 count) for one campaign run over `records`.
fn joint_counts(ads: &[ActiveAd], params: &BehaviorParams, records: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    let n = records.len();
    let mut table = vec![vec![0.0; n + 1]; n + 1];
    table[0][0] = 1.0;
    for (k, x) in records.iter().enumerate() {
        let (pa, pb) = conversion_probs(ads, params, x)?;
        let mut next = vec![vec![0.0; n + 1]; n + 1];
        for a in 0..=k {
            for b in 0..=(k - a) {
                let w = table[a][b];
                if w == 0.0 {
                    continue;
                }
                next[a][b] += w * (1.0 - pa - pb);
                next[a + 1][b] += w * pa;
                next[a][b + 1] += w * pb;
            }
        }
        table = next;
    }
    Ok(table)
}

/// The ecosystem with identity reporting: releases both ads' exact counts,
/// coded as `count_1 · (n + 1) + count_2`.
pub struct IdentityReportMechanism {
    pub ads: Vec<ActiveAd>,
    pub params: BehaviorParams,
}

impl IdentityReportMechanism {
    pub fn encode(n: usize, count_1: usize, count_2: usize) -> i64 {
        (count_1 * (n + 1) + count_2) as i64
    }
}

impl Mechanism for IdentityReportMechanism {
    fn output_distribution(&self, records: &[FeatureVector]) -> Result<BTreeMap<i64, f64>> {
        let n = records.len();
        let table = joint_counts(&self.ads, &self.params, records)?;
        let mut out = BTreeMap::new();
        for (a, row) in table.iter().enumerate() {
            for (b, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    out.insert(Self::encode(n, a, b), w);
                }
            }
        }
        Ok(out)
    }
}

/// Count of records with `attribute = 1` released through the two-sided
/// geometric mechanism. Outputs outside `count ± range` are dropped.
pub struct GeometricCountMechanism {
    pub attribute: usize,
    pub epsilon: f64,
    pub range: i64,
}

impl Mechanism for GeometricCountMechanism {
    fn output_distribution(&self, records: &[FeatureVector]) -> Result<BTreeMap<i64, f64>> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("geometric mechanism needs epsilon > 0"));
        }
        let c = records.iter().filter(|r| r.bit(self.attribute) == 1).count() as i64;
        Ok((-self.range..=self.range).map(|z| (c + z, geometric_noise_pmf(z, self.epsilon))).collect())
    }
}

/// ad_1's Tulap-noised count, bucketed at `width` over `[-range, range]`.
pub struct TulapReportMechanism {
    pub ads: Vec<ActiveAd>,
    pub params: BehaviorParams,
    pub noise: TulapParams,
    pub width: f64,
    pub range: f64,
}

impl TulapReportMechanism {
    pub fn new(ads: Vec<ActiveAd>, params: BehaviorParams, epsilon: f64) -> Result<Self> {
        Ok(TulapReportMechanism { ads, params, noise: TulapParams::from_epsilon(epsilon)?, width: 0.25, range: 20.0 })
    }
}

impl Mechanism for TulapReportMechanism {
    fn output_distribution(&self, records: &[FeatureVector]) -> Result<BTreeMap<i64, f64>> {
        let table = joint_counts(&self.ads, &self.params, records)?;
        let first: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
        let buckets = (2.0 * self.range / self.width).round() as i64;
        let mut out = BTreeMap::new();
        for k in 0..buckets {
            let lo = -self.range + k as f64 * self.width;
            let hi = lo + self.width;
            let p: f64 = first
                .iter()
                .enumerate()
                .map(|(c, w)| w * (tulap_cdf(&self.noise, hi - c as f64) - tulap_cdf(&self.noise, lo - c as f64)))
                .sum();
            out.insert(k, p);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub theta: usize,
    pub pair: (usize, usize),
    pub output: i64,
    pub p_i: f64,
    pub p_j: f64,
    pub ratio: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Satisfied,
    Violated(Witness),
}

impl Verdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, Verdict::Satisfied)
    }
}

/// Relative slack on the ratio test, absorbing floating-point error.
const RATIO_SLACK: f64 = 1e-9;

/// Checks `e^-ε <= P(M = w | s_i, θ) / P(M = w | s_j, θ) <= e^ε` for every
/// θ, secret pair and output on the grid (or every output in the support when
/// no grid is given). Returns the first violation found.
pub fn pufferfish_verify<M: Mechanism + ?Sized>(
    mechanism: &M,
    framework: &PufferfishFramework,
    epsilon: f64,
    output_grid: Option<&[i64]>,
) -> Result<Verdict> {
    framework.validate()?;
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let bound = epsilon.exp() * (1.0 + RATIO_SLACK);
    let mut feasible = vec![false; framework.secrets.len()];
    let mut per_theta = Vec::with_capacity(framework.thetas.len());
    for theta in &framework.thetas {
        let (mass, joint) = conditional_tables(mechanism, framework, theta)?;
        for (s, &m) in mass.iter().enumerate() {
            feasible[s] |= m > 0.0;
        }
        per_theta.push((mass, joint));
    }
    for &(i, j) in &framework.pairs {
        for s in [i, j] {
            if !feasible[s] {
                return Err(Error::InfeasibleSecret(format!("secret {s} has probability 0 under every distribution")));
            }
        }
    }
    for (t, (mass, joint)) in per_theta.iter().enumerate() {
        for &(i, j) in &framework.pairs {
            if mass[i] == 0.0 || mass[j] == 0.0 {
                continue;
            }
            let outputs: Vec<i64> = match output_grid {
                Some(g) => g.to_vec(),
                None => joint[i].keys().chain(joint[j].keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
            };
            for w in outputs {
                let p_i = joint[i].get(&w).copied().unwrap_or(0.0) / mass[i];
                let p_j = joint[j].get(&w).copied().unwrap_or(0.0) / mass[j];
                if p_i == 0.0 && p_j == 0.0 {
                    continue;
                }
                let ratio = p_i / p_j;
                if ratio > bound || ratio * bound < 1.0 {
                    return Ok(Verdict::Violated(Witness { theta: t, pair: (i, j), output: w, p_i, p_j, ratio, epsilon }));
                }
            }
        }
    }
    Ok(Verdict::Satisfied)
}

type Conditional = (Vec<f64>, Vec<BTreeMap<i64, f64>>);

/// `P(s | θ)` and `P(M = w, s | θ)` for every secret.
fn conditional_tables<M: Mechanism + ?Sized>(
    mechanism: &M,
    framework: &PufferfishFramework,
    theta: &Theta,
) -> Result<Conditional> {
    let all = datasets(theta)?;
    let k = framework.secrets.len();
    let partials = all
        .par_iter()
        .map(|(records, p)| {
            let holds: Vec<bool> = framework.secrets.iter().map(|s| s.holds(records)).collect();
            if !holds.iter().any(|h| *h) {
                return Ok(None);
            }
            Ok(Some((holds, *p, mechanism.output_distribution(records)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mass = vec![0.0; k];
    let mut joint = vec![BTreeMap::new(); k];
    for (holds, p, dist) in partials.into_iter().flatten() {
        for s in 0..k {
            if holds[s] {
                mass[s] += p;
                for (&w, &q) in &dist {
                    *joint[s].entry(w).or_insert(0.0) += p * q;
                }
            }
        }
    }
    Ok((mass, joint))
}

/// `P(M = w | s, θ)` evaluated on its own, one dataset at a time.
pub fn conditional_output_probability<M: Mechanism + ?Sized>(
    mechanism: &M,
    theta: &Theta,
    secret: &Secret,
    output: i64,
) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (records, p) in datasets(theta)? {
        if secret.holds(&records) {
            den += p;
            num += p * mechanism.probability(&records, output)?;
        }
    }
    if den == 0.0 {
        return Err(Error::InfeasibleSecret("secret has probability 0 under this distribution".into()));
    }
    Ok(num / den)
}

/// Recomputes a witness's two conditionals independently and returns the
/// recomputed ratio.
pub fn recheck_witness<M: Mechanism + ?Sized>(
    mechanism: &M,
    framework: &PufferfishFramework,
    witness: &Witness,
) -> Result<f64> {
    let theta = &framework.thetas[witness.theta];
    let p_i = conditional_output_probability(mechanism, theta, &framework.secrets[witness.pair.0], witness.output)?;
    let p_j = conditional_output_probability(mechanism, theta, &framework.secrets[witness.pair.1], witness.output)?;
    Ok(p_i / p_j)
}

/// A statistic `F(X)`, given by its expectation over any internal randomness.
pub trait Statistic: Sync {
    fn expected(&self, records: &[FeatureVector]) -> Result<f64>;
}

impl<F: Fn(&[FeatureVector]) -> f64 + Sync> Statistic for F {
    fn expected(&self, records: &[FeatureVector]) -> Result<f64> {
        Ok(self(records))
    }
}

/// Number of records with `attribute = 1`.
pub struct AttributeCount(pub usize);

impl Statistic for AttributeCount {
    fn expected(&self, records: &[FeatureVector]) -> Result<f64> {
        Ok(records.iter().filter(|r| r.bit(self.0) == 1).count() as f64)
    }
}

/// Expected ad_1 conversion count of one A/B campaign run over the dataset.
pub struct ConversionCount {
    pub ads: Vec<ActiveAd>,
    pub params: BehaviorParams,
}

impl Statistic for ConversionCount {
    fn expected(&self, records: &[FeatureVector]) -> Result<f64> {
        records.iter().map(|x| Ok(conversion_probs(&self.ads, &self.params, x)?.0)).sum()
    }
}

pub struct SensitivitySpec<'a> {
    pub statistic: &'a dyn Statistic,
    pub attribute: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub value: f64,
    /// 3σ Monte-Carlo half-width; zero for exact enumeration.
    pub half_width_3sigma: f64,
    pub exact: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct SensitivityOptions {
    pub min_accepted: u64,
    pub max_attempts: u64,
    pub seed: u64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions { min_accepted: 100_000, max_attempts: 100_000_000, seed: 0x5e45 }
    }
}

/// `max_θ max_(s_a, s_b) |E[F | s_a, θ] − E[F | s_b, θ]|` over the framework's
/// secret pairs. Exact when the dataset space is enumerable, otherwise by
/// rejection sampling on each secret.
pub fn sensitivity(spec: &SensitivitySpec<'_>, framework: &PufferfishFramework) -> Result<SensitivityResult> {
    sensitivity_with(spec, framework, SensitivityOptions::default())
}

pub fn sensitivity_with(
    spec: &SensitivitySpec<'_>,
    framework: &PufferfishFramework,
    opts: SensitivityOptions,
) -> Result<SensitivityResult> {
    framework.validate()?;
    let l = framework.thetas[0].dist.dimension();
    if spec.attribute >= l {
        return Err(Error::IndexOutOfRange { index: spec.attribute, len: l });
    }
    let exact = framework.thetas.iter().all(|t| t.n * l <= MAX_ENUMERATED_BITS);
    let mut feasible = vec![false; framework.secrets.len()];
    let mut per_theta = Vec::new();
    for (t, theta) in framework.thetas.iter().enumerate() {
        let moments = if exact {
            exact_conditional_means(spec.statistic, framework, theta)?
        } else {
            sampled_conditional_means(spec.statistic, framework, theta, opts, t as u64)?
        };
        for (s, m) in moments.iter().enumerate() {
            feasible[s] |= m.is_some();
        }
        per_theta.push(moments);
    }
    let mut best = SensitivityResult { value: 0.0, half_width_3sigma: 0.0, exact };
    for &(i, j) in &framework.pairs {
        for s in [i, j] {
            if !feasible[s] {
                return Err(Error::InfeasibleSecret(format!("secret {s} has probability 0 under every distribution")));
            }
        }
        for moments in &per_theta {
            if let (Some((mi, hi)), Some((mj, hj))) = (moments[i], moments[j]) {
                let gap = (mi - mj).abs();
                if gap > best.value {
                    best = SensitivityResult { value: gap, half_width_3sigma: (hi * hi + hj * hj).sqrt(), exact };
                }
            }
        }
    }
    Ok(best)
}

type Moment = Option<(f64, f64)>;

fn exact_conditional_means(
    statistic: &dyn Statistic,
    framework: &PufferfishFramework,
    theta: &Theta,
) -> Result<Vec<Moment>> {
    let k = framework.secrets.len();
    let (mut num, mut den) = (vec![0.0; k], vec![0.0; k]);
    for (records, p) in datasets(theta)? {
        let f = statistic.expected(&records)?;
        for (s, secret) in framework.secrets.iter().enumerate() {
            if secret.holds(&records) {
                num[s] += p * f;
                den[s] += p;
            }
        }
    }
    Ok((0..k).map(|s| (den[s] > 0.0).then(|| (num[s] / den[s], 0.0))).collect())
}

fn sampled_conditional_means(
    statistic: &dyn Statistic,
    framework: &PufferfishFramework,
    theta: &Theta,
    opts: SensitivityOptions,
    theta_index: u64,
) -> Result<Vec<Moment>> {
    framework
        .secrets
        .iter()
        .enumerate()
        .map(|(s, secret)| {
            let mut rng = rng::stream(opts.seed, theta_index * 1024 + s as u64);
            let (mut accepted, mut attempts) = (0u64, 0u64);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            while accepted < opts.min_accepted && attempts < opts.max_attempts {
                attempts += 1;
                let records: Vec<FeatureVector> = (0..theta.n).map(|_| theta.dist.sample(&mut rng)).collect();
                if secret.holds(&records) {
                    let f = statistic.expected(&records)?;
                    accepted += 1;
                    sum += f;
                    sum_sq += f * f;
                }
            }
            if accepted == 0 {
                return Ok(None);
            }
            if accepted < opts.min_accepted {
                return Err(Error::Capacity(format!(
                    "secret {s} accepted only {accepted} of {attempts} samples (floor {})",
                    opts.min_accepted
                )));
            }
            let a = accepted as f64;
            let mean = sum / a;
            let var = (sum_sq / a - mean * mean).max(0.0);
            Ok(Some((mean, 3.0 * (var / a).sqrt())))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvidence {
    pub advantage: f64,
    pub half_width_3sigma: f64,
    pub attribute: usize,
    /// Expected fraction `g` of the attribute under `D_0` and under `D_1`.
    pub pair: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum WitnessVerdict {
    ViolationEvidence(ViolationEvidence),
    Inconclusive { advantage: f64, half_width_3sigma: f64 },
}

impl WitnessVerdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, WitnessVerdict::ViolationEvidence(_))
    }
}

/// Runs the distinguishing game; a positive advantage beyond its 3σ
/// half-width is evidence that the `b_test` fraction is not protected.
pub fn violation_witness(config: &GameConfig, trials: u64, master_seed: u64) -> Result<WitnessVerdict> {
    let est = estimate_advantage(config, trials, master_seed)?;
    if est.advantage - est.half_width_3sigma > 0.0 {
        let i = config.b_test;
        Ok(WitnessVerdict::ViolationEvidence(ViolationEvidence {
            advantage: est.advantage,
            half_width_3sigma: est.half_width_3sigma,
            attribute: i,
            pair: (config.d0.marginals()[i], config.d1.marginals()[i]),
        }))
    } else {
        Ok(WitnessVerdict::Inconclusive { advantage: est.advantage, half_width_3sigma: est.half_width_3sigma })
    }
}

/// An enumerable stand-in for a game: `n` users, `b_test` plus the next
/// `ell − 1` attributes of `D_0`, identity reporting, and the secret pair
/// "g ≥ 3/4" vs "g ≤ 1/4" on `b_test`.
pub fn miniature(config: &GameConfig, n: usize, ell: usize) -> Result<(IdentityReportMechanism, PufferfishFramework)> {
    if ell == 0 || n * ell > MAX_ENUMERATED_BITS || ell > config.ell() {
        return Err(Error::config(format!("miniature of {n} users x {ell} bits is not enumerable")));
    }
    let full = config.ell();
    let mut keep = vec![config.b_test];
    keep.extend((0..full).filter(|&j| j != config.b_test).take(ell - 1));
    let mut probs = vec![0.0; 1 << ell];
    for (idx, p) in config.d0.probabilities().iter().enumerate() {
        let small = keep.iter().enumerate().fold(0usize, |acc, (k, &j)| acc | (((idx >> j) & 1) << k));
        probs[small] += p;
    }
    let dist = ExplicitDistribution::new(ell, probs)?;
    let campaigns = crate::distinguishing::ab_campaigns(ell, 0)?;
    let mut params = config.behavior.clone();
    params.epsilon = None;
    params.rho = crate::behaviors::Rho::Identity;
    let mechanism = IdentityReportMechanism { ads: crate::distinguishing::active_ads(&campaigns), params };
    let framework = PufferfishFramework {
        secrets: vec![Secret::new(0, 0.75, 1.0)?, Secret::new(0, 0.0, 0.25)?],
        pairs: vec![(0, 1)],
        thetas: vec![Theta { dist, n }],
    };
    Ok((mechanism, framework))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distinguishing::{ab_campaigns, active_ads};
    use crate::feature_space::CorrelatedBernoulliSpec;

    fn all_vs_none(attribute: usize) -> Vec<Secret> {
        vec![Secret::new(attribute, 1.0, 1.0).unwrap(), Secret::new(attribute, 0.0, 0.0).unwrap()]
    }

    fn framework(dist: ExplicitDistribution, n: usize, secrets: Vec<Secret>) -> PufferfishFramework {
        PufferfishFramework { secrets, pairs: vec![(0, 1)], thetas: vec![Theta { dist, n }] }
    }

    #[test]
    fn sensitivity_of_count_all_vs_none() {
        let f = framework(ExplicitDistribution::uniform(1).unwrap(), 10, all_vs_none(0));
        let s = sensitivity(&SensitivitySpec { statistic: &AttributeCount(0), attribute: 0 }, &f).unwrap();
        assert!(s.exact);
        assert!((s.value - 10.0).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_of_constant_is_zero() {
        let f = framework(ExplicitDistribution::uniform(2).unwrap(), 3, all_vs_none(1));
        let constant = |_: &[FeatureVector]| 7.0;
        let s = sensitivity(&SensitivitySpec { statistic: &constant, attribute: 1 }, &f).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn sensitivity_by_sampling_matches_exact() {
        let dist = CorrelatedBernoulliSpec::equicorrelated(vec![0.5, 0.3], 0.4).unwrap().materialize().unwrap();
        let secrets = vec![Secret::new(0, 0.6, 1.0).unwrap(), Secret::new(0, 0.0, 0.4).unwrap()];
        let exact_f = framework(dist.clone(), 5, secrets.clone());
        let spec = SensitivitySpec { statistic: &AttributeCount(1), attribute: 0 };
        let exact = sensitivity(&spec, &exact_f).unwrap();
        // Same instance through the rejection-sampling route.
        let sampled = sampled_conditional_means(
            &AttributeCount(1),
            &exact_f,
            &exact_f.thetas[0],
            SensitivityOptions { min_accepted: 100_000, ..Default::default() },
            0,
        )
        .unwrap();
        let (m0, h0) = sampled[0].unwrap();
        let (m1, h1) = sampled[1].unwrap();
        let gap = (m0 - m1).abs();
        assert!((gap - exact.value).abs() < (h0 * h0 + h1 * h1).sqrt(), "{gap} vs {}", exact.value);
    }

    #[test]
    fn infeasible_secret_is_reported() {
        let point = ExplicitDistribution::point_mass(&"1".parse().unwrap()).unwrap();
        let f = framework(point, 3, all_vs_none(0));
        assert!(matches!(
            sensitivity(&SensitivitySpec { statistic: &AttributeCount(0), attribute: 0 }, &f),
            Err(Error::InfeasibleSecret(_))
        ));
        assert!(matches!(pufferfish_verify(&ConstantMechanism, &f, 1.0, None), Err(Error::InfeasibleSecret(_))));
    }

    #[test]
    fn constant_mechanism_is_private() {
        let f = framework(ExplicitDistribution::uniform(2).unwrap(), 3, all_vs_none(0));
        for eps in [0.0, 0.1, 1.0] {
            assert!(pufferfish_verify(&ConstantMechanism, &f, eps, None).unwrap().is_satisfied());
        }
    }

    #[test]
    fn identity_report_violates_on_two_records() {
        let dist = CorrelatedBernoulliSpec::equicorrelated(vec![0.5, 0.5, 0.5], 0.5).unwrap().materialize().unwrap();
        let ads = active_ads(&ab_campaigns(3, 0).unwrap());
        let mech = IdentityReportMechanism { ads, params: BehaviorParams::new(1.0, 0.5, None).unwrap() };
        let f = framework(dist, 2, all_vs_none(0));
        match pufferfish_verify(&mech, &f, 0.1, None).unwrap() {
            Verdict::Violated(w) => {
                let again = recheck_witness(&mech, &f, &w).unwrap();
                assert!((again - w.ratio).abs() <= 1e-9 * w.ratio.max(1.0));
                assert!(!(again <= 0.1f64.exp() && again >= (-0.1f64).exp()));
            }
            Verdict::Satisfied => panic!("expected a violation"),
        }
    }

    #[test]
    fn geometric_count_depends_on_epsilon() {
        // Pair differs by one record in expectation: exactly one vs exactly none.
        let secrets = vec![Secret::new(0, 0.5, 0.5).unwrap(), Secret::new(0, 0.0, 0.0).unwrap()];
        let f = framework(ExplicitDistribution::uniform(1).unwrap(), 2, secrets);
        let grid: Vec<i64> = (-30..=30).collect();
        let small = GeometricCountMechanism { attribute: 0, epsilon: 0.5, range: 200 };
        assert!(pufferfish_verify(&small, &f, 0.5, Some(&grid)).unwrap().is_satisfied());
        assert!(!pufferfish_verify(&small, &f, 0.4, Some(&grid)).unwrap().is_satisfied());
        let large = GeometricCountMechanism { attribute: 0, epsilon: 5.0, range: 200 };
        assert!(!pufferfish_verify(&large, &f, 1.0, Some(&grid)).unwrap().is_satisfied());
    }

    #[test]
    fn tulap_mechanism_outputs_are_a_distribution() {
        let ads = active_ads(&ab_campaigns(2, 0).unwrap());
        let mech = TulapReportMechanism::new(ads, BehaviorParams::new(1.0, 0.5, None).unwrap(), 0.5).unwrap();
        let records: Vec<FeatureVector> = vec!["11".parse().unwrap(), "01".parse().unwrap()];
        let total: f64 = mech.output_distribution(&records).unwrap().values().sum();
        assert!(total > 0.999 && total <= 1.0 + 1e-12);
    }

    #[test]
    fn framework_validation() {
        let mut f = framework(ExplicitDistribution::uniform(1).unwrap(), 2, all_vs_none(0));
        f.pairs = vec![(0, 0)];
        assert!(f.validate().is_err());
        f.pairs = vec![(0, 5)];
        assert!(f.validate().is_err());
        assert!(Secret::new(0, 0.6, 0.4).is_err());
    }
}
