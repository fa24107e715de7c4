//! Binary feature vectors, the closeness metric, and distributions over
//! `{0,1}^ℓ`.
//!
//! Outcomes of an ℓ-bit space are indexed by `0..2^ℓ`, with bit `j` of the
//! index holding position `j` of the vector.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Largest ℓ for which distributions are enumerated exactly.
pub const MAX_EXPLICIT_DIM: usize = 12;

/// Normalization tolerance for probability mass functions.
pub const PMF_TOLERANCE: f64 = 1e-9;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureVector {
    bits: Vec<u8>,
}

impl FeatureVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::model("feature vector must have length >= 1"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::model(format!("feature bit {b} is not 0 or 1")));
        }
        Ok(FeatureVector { bits })
    }

    pub fn zeros(len: usize) -> Self {
        FeatureVector { bits: vec![0; len] }
    }

    pub fn ones(len: usize) -> Self {
        FeatureVector { bits: vec![1; len] }
    }

    /// Vector for outcome `index` of a `len`-bit space.
    pub fn from_index(index: usize, len: usize) -> Self {
        FeatureVector {
            bits: (0..len).map(|j| ((index >> j) & 1) as u8).collect(),
        }
    }

    pub fn index(&self) -> usize {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &b)| acc | ((b as usize) << j))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, j: usize) -> u8 {
        self.bits[j]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn with_bit(&self, j: usize, value: u8) -> Result<Self> {
        if j >= self.len() {
            return Err(Error::IndexOutOfRange { index: j, len: self.len() });
        }
        let mut bits = self.bits.clone();
        bits[j] = value.min(1);
        Ok(FeatureVector { bits })
    }

    pub fn flip(&self, j: usize) -> Result<Self> {
        let current = *self
            .bits
            .get(j)
            .ok_or(Error::IndexOutOfRange { index: j, len: self.len() })?;
        self.with_bit(j, 1 - current)
    }

    pub fn hamming(&self, other: &FeatureVector) -> Result<usize> {
        Error::check_dim(self.len(), other.len())?;
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FeatureVector({self})")
    }
}

impl FromStr for FeatureVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::model(format!("invalid feature character {other:?}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        FeatureVector::new(bits)
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Normalized Hamming similarity: `1 - hamming(a, b) / ℓ`.
pub fn closeness(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    let d = a.hamming(b)?;
    Ok(1.0 - d as f64 / a.len() as f64)
}

/// Anything that assigns a non-negative mass to each outcome of `{0,1}^ℓ`.
/// Sub-distributions (total mass below one) are allowed.
pub trait MassFunction {
    fn dimension(&self) -> usize;
    fn masses(&self) -> &[f64];
}

/// An explicit probability mass function over `{0,1}^ℓ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitDistribution {
    dimension: usize,
    probabilities: Vec<f64>,
    /// Draw count when the table was estimated by Monte Carlo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    monte_carlo_draws: Option<u64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl ExplicitDistribution {
    pub fn new(dimension: usize, probabilities: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::model("distribution dimension must be >= 1"));
        }
        if dimension > MAX_EXPLICIT_DIM {
            return Err(Error::Capacity(format!(
                "explicit distributions support at most {MAX_EXPLICIT_DIM} bits, got {dimension}"
            )));
        }
        Error::check_dim(1 << dimension, probabilities.len())?;
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::model(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::model(format!("probabilities sum to {total}, not 1")));
        }
        let cumulative = probabilities
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(ExplicitDistribution { dimension, probabilities, monte_carlo_draws: None, cumulative })
    }

    pub fn point_mass(x: &FeatureVector) -> Result<Self> {
        let mut probs = vec![0.0; 1 << x.len()];
        probs[x.index()] = 1.0;
        ExplicitDistribution::new(x.len(), probs)
    }

    pub fn uniform(dimension: usize) -> Result<Self> {
        let size = 1usize << dimension.min(MAX_EXPLICIT_DIM + 1);
        ExplicitDistribution::new(dimension, vec![1.0 / size as f64; size])
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn probability(&self, x: &FeatureVector) -> Result<f64> {
        Error::check_dim(self.dimension, x.len())?;
        Ok(self.probabilities[x.index()])
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn monte_carlo_draws(&self) -> Option<u64> {
        self.monte_carlo_draws
    }

    /// `P(bit j = 1)` for each position.
    pub fn marginals(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dimension];
        for (idx, p) in self.probabilities.iter().enumerate() {
            for (j, mj) in m.iter_mut().enumerate() {
                if (idx >> j) & 1 == 1 {
                    *mj += p;
                }
            }
        }
        m
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty table");
        let u = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= u);
        // Guard against landing on a trailing zero-probability outcome.
        let idx = idx.min(self.probabilities.len() - 1);
        if self.probabilities[idx] > 0.0 {
            idx
        } else {
            self.probabilities[..idx]
                .iter()
                .rposition(|&p| p > 0.0)
                .expect("distribution has positive mass")
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FeatureVector {
        FeatureVector::from_index(self.sample_index(rng), self.dimension)
    }

    fn with_draws(mut self, draws: Option<u64>) -> Self {
        self.monte_carlo_draws = draws;
        self
    }
}

impl MassFunction for ExplicitDistribution {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn masses(&self) -> &[f64] {
        &self.probabilities
    }
}

pub fn total_variation(p: &ExplicitDistribution, q: &ExplicitDistribution) -> Result<f64> {
    Error::check_dim(p.dimension, q.dimension)?;
    let s: f64 = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((0.5 * s).min(1.0))
}

/// `½ Σ (√p(x) − √q(x))²`, applied verbatim to sub-distributions.
pub fn hellinger_squared<P: MassFunction + ?Sized, Q: MassFunction + ?Sized>(
    p: &P,
    q: &Q,
) -> Result<f64> {
    Error::check_dim(p.dimension(), q.dimension())?;
    let (pm, qm) = (p.masses(), q.masses());
    Error::check_dim(pm.len(), qm.len())?;
    let mut s = 0.0;
    for (a, b) in pm.iter().zip(qm) {
        if *a < 0.0 || *b < 0.0 || !a.is_finite() || !b.is_finite() {
            return Err(Error::model(format!("negative or non-finite mass ({a}, {b})")));
        }
        let d = a.sqrt() - b.sqrt();
        s += d * d;
    }
    Ok(0.5 * s)
}

/// Correlated Bernoulli bits generated by thresholding a latent Gaussian
/// vector (a Gaussian copula): bit `j` is 1 iff `Z_j ≤ Φ⁻¹(marginals[j])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedBernoulliSpec {
    pub marginals: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct MaterializeOptions {
    /// Monte-Carlo draws used when the correlation has no one-factor form.
    pub monte_carlo_draws: u64,
    pub seed: u64,
}

impl Default for MaterializeOptions {
    fn default() -> Self {
        MaterializeOptions { monte_carlo_draws: 1 << 21, seed: 0x5eed_c0b1a }
    }
}

impl CorrelatedBernoulliSpec {
    pub fn new(marginals: Vec<f64>, correlation: Vec<Vec<f64>>) -> Result<Self> {
        let spec = CorrelatedBernoulliSpec { marginals, correlation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn independent(marginals: Vec<f64>) -> Result<Self> {
        let l = marginals.len();
        let corr = (0..l)
            .map(|i| (0..l).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        CorrelatedBernoulliSpec::new(marginals, corr)
    }

    /// Every off-diagonal latent correlation equal to `rho`.
    pub fn equicorrelated(marginals: Vec<f64>, rho: f64) -> Result<Self> {
        let l = marginals.len();
        let corr = (0..l)
            .map(|i| (0..l).map(|j| if i == j { 1.0 } else { rho }).collect())
            .collect();
        CorrelatedBernoulliSpec::new(marginals, corr)
    }

    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.marginals.len();
        if l == 0 {
            return Err(Error::model("spec needs at least one bit"));
        }
        if let Some(p) = self.marginals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::model(format!("marginal {p} outside [0, 1]")));
        }
        Error::check_dim(l, self.correlation.len())?;
        for (i, row) in self.correlation.iter().enumerate() {
            Error::check_dim(l, row.len())?;
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(Error::model(format!("correlation diagonal entry {i} is {}", row[i])));
            }
            for (j, r) in row.iter().enumerate() {
                if !(-1.0..=1.0).contains(r) {
                    return Err(Error::model(format!("correlation entry ({i},{j}) = {r}")));
                }
                if (r - self.correlation[j][i]).abs() > 1e-12 {
                    return Err(Error::model(format!("correlation not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Same spec with `marginals[test_bit]` replaced; correlation untouched.
    pub fn derive_alternate(&self, test_bit: usize, new_marginal: f64) -> Result<Self> {
        if test_bit >= self.dimension() {
            return Err(Error::IndexOutOfRange { index: test_bit, len: self.dimension() });
        }
        if !(0.0..=1.0).contains(&new_marginal) {
            return Err(Error::model(format!("marginal {new_marginal} outside [0, 1]")));
        }
        let mut out = self.clone();
        out.marginals[test_bit] = new_marginal;
        Ok(out)
    }

    pub fn materialize(&self) -> Result<ExplicitDistribution> {
        self.materialize_with(MaterializeOptions::default())
    }

    /// Exact PMF of the thresholded copula.
    ///
    /// One-factor correlations (`r_ij = λ_i λ_j`, which covers independence,
    /// equicorrelation and ±1 pairs) are integrated by quadrature over the
    /// common factor. Anything else is estimated by seeded Monte Carlo with the
    /// draw count recorded. Both routes finish with proportional fitting so the
    /// per-bit marginals match the requested ones to round-off.
    pub fn materialize_with(&self, opts: MaterializeOptions) -> Result<ExplicitDistribution> {
        self.validate()?;
        let l = self.dimension();
        if l > MAX_EXPLICIT_DIM {
            return Err(Error::Capacity(format!(
                "materialize supports at most {MAX_EXPLICIT_DIM} bits, got {l}"
            )));
        }
        check_psd(&self.correlation)?;
        let (probs, draws) = match one_factor_loadings(&self.correlation) {
            Some(loadings) => (integrate_one_factor(&self.marginals, &loadings), None),
            None => (
                monte_carlo_copula(&self.marginals, &self.correlation, opts)?,
                Some(opts.monte_carlo_draws),
            ),
        };
        let probs = rake_to_marginals(probs, &self.marginals)?;
        Ok(ExplicitDistribution::new(l, probs)?.with_draws(draws))
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn threshold(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        std_normal().inverse_cdf(p)
    }
}

fn check_psd(corr: &[Vec<f64>]) -> Result<()> {
    let l = corr.len();
    let m = DMatrix::from_fn(l, l, |i, j| corr[i][j]);
    let eig = m.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-9 {
        return Err(Error::model(format!(
            "correlation matrix is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    Ok(())
}

/// Loadings `λ` with `corr[i][j] = λ_i λ_j` off the diagonal, if they exist.
fn one_factor_loadings(corr: &[Vec<f64>]) -> Option<Vec<f64>> {
    const TOL: f64 = 1e-10;
    let l = corr.len();
    if l == 1 {
        return Some(vec![0.0]);
    }
    let off_max = (0..l)
        .flat_map(|i| (0..l).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| corr[i][j].abs())
        .fold(0.0, f64::max);
    if off_max < TOL {
        return Some(vec![0.0; l]);
    }
    let lambda = if l == 2 {
        let r = corr[0][1];
        vec![r.abs().sqrt(), r.signum() * r.abs().sqrt()]
    } else {
        let mut sq = vec![0.0; l];
        for (i, s) in sq.iter_mut().enumerate() {
            let mut best: Option<(usize, usize)> = None;
            for j in 0..l {
                for k in (j + 1)..l {
                    if j == i || k == i {
                        continue;
                    }
                    if best.is_none_or(|(bj, bk)| corr[j][k].abs() > corr[bj][bk].abs()) {
                        best = Some((j, k));
                    }
                }
            }
            let (j, k) = best?;
            if corr[j][k].abs() < TOL {
                // Loading of `i` is not identified from the other entries.
                return None;
            }
            *s = corr[i][j] * corr[i][k] / corr[j][k];
            if *s < -TOL || *s > 1.0 + 1e-9 {
                return None;
            }
        }
        let reference = (0..l).max_by(|&a, &b| sq[a].total_cmp(&sq[b]))?;
        (0..l)
            .map(|i| {
                let mag = sq[i].clamp(0.0, 1.0).sqrt();
                if i == reference {
                    mag
                } else {
                    mag * corr[i][reference].signum()
                }
            })
            .collect()
    };
    for i in 0..l {
        for j in 0..l {
            if i != j && (lambda[i] * lambda[j] - corr[i][j]).abs() > TOL {
                return None;
            }
        }
    }
    Some(lambda.into_iter().map(|v: f64| v.clamp(-1.0, 1.0)).collect())
}

/// 10-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

fn integrate_one_factor(marginals: &[f64], loadings: &[f64]) -> Vec<f64> {
    const SPAN: f64 = 10.0;
    const PANEL: f64 = 0.05;
    let l = marginals.len();
    let normal = std_normal();
    let thresholds: Vec<f64> = marginals.iter().map(|&p| threshold(p)).collect();

    // Panel edges, with the jump points of perfectly loaded bits added.
    let mut edges: Vec<f64> = (0..=((2.0 * SPAN / PANEL) as usize))
        .map(|k| -SPAN + k as f64 * PANEL)
        .collect();
    for (t, lam) in thresholds.iter().zip(loadings) {
        if lam.abs() > 1.0 - 1e-12 && t.is_finite() {
            edges.push((t / lam).clamp(-SPAN, SPAN));
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let mut probs = vec![0.0; 1 << l];
    let mut layer = vec![0.0; 1 << l];
    let mut cond = vec![0.0; l];
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for k in 0..10 {
            let (node, weight) = if k < 5 {
                (-GL_NODES[k], GL_WEIGHTS[k])
            } else {
                (GL_NODES[k - 5], GL_WEIGHTS[k - 5])
            };
            let z = mid + half * node;
            let wt = weight * half * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            for i in 0..l {
                let (t, lam) = (thresholds[i], loadings[i]);
                cond[i] = if t == f64::NEG_INFINITY {
                    0.0
                } else if t == f64::INFINITY {
                    1.0
                } else if lam.abs() > 1.0 - 1e-12 {
                    if lam * z <= t {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal.cdf((t - lam * z) / (1.0 - lam * lam).sqrt())
                };
            }
            // Product over bits, built one position at a time.
            layer[0] = wt;
            let mut size = 1;
            for &q in cond.iter() {
                for idx in 0..size {
                    let base = layer[idx];
                    layer[idx + size] = base * q;
                    layer[idx] = base * (1.0 - q);
                }
                size <<= 1;
            }
            for (p, v) in probs.iter_mut().zip(&layer) {
                *p += v;
            }
        }
    }
    probs
}

fn monte_carlo_copula(
    marginals: &[f64],
    corr: &[Vec<f64>],
    opts: MaterializeOptions,
) -> Result<Vec<f64>> {
    let l = marginals.len();
    let m = DMatrix::from_fn(l, l, |i, j| corr[i][j]);
    let eig = m.symmetric_eigen();
    let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let factor = &eig.eigenvectors * scale;
    let thresholds: Vec<f64> = marginals.iter().map(|&p| threshold(p)).collect();
    let mut rng = rng::seeded(opts.seed);
    let mut counts = vec![0u64; 1 << l];
    let mut g = vec![0.0; l];
    for _ in 0..opts.monte_carlo_draws {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        let mut idx = 0usize;
        for i in 0..l {
            let z: f64 = (0..l).map(|k| factor[(i, k)] * g[k]).sum();
            if z <= thresholds[i] {
                idx |= 1 << i;
            }
        }
        counts[idx] += 1;
    }
    if opts.monte_carlo_draws == 0 {
        return Err(Error::model("monte carlo materialization needs at least one draw"));
    }
    let total = opts.monte_carlo_draws as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Iterative proportional fitting of a joint table to target bit marginals.
fn rake_to_marginals(mut probs: Vec<f64>, targets: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::model("joint table has no mass"));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    for _ in 0..10_000 {
        let mut worst: f64 = 0.0;
        for (j, &target) in targets.iter().enumerate() {
            let ones: f64 = probs
                .iter()
                .enumerate()
                .filter(|(idx, _)| (idx >> j) & 1 == 1)
                .map(|(_, p)| p)
                .sum();
            let zeros = 1.0 - ones;
            worst = worst.max((ones - target).abs());
            if (target > 0.0 && ones <= 0.0) || (target < 1.0 && zeros <= 0.0) {
                return Err(Error::model(format!(
                    "cannot match marginal {target} for bit {j}: no mass on one side"
                )));
            }
            let up = if ones > 0.0 { target / ones } else { 0.0 };
            let down = if zeros > 0.0 { (1.0 - target) / zeros } else { 0.0 };
            for (idx, p) in probs.iter_mut().enumerate() {
                *p *= if (idx >> j) & 1 == 1 { up } else { down };
            }
        }
        if worst < 1e-14 {
            break;
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Marginal for `test_bit` (at or above the base marginal) whose materialized
/// distribution sits at total-variation distance `target_tv` from the base.
pub fn marginal_for_total_variation(
    base: &CorrelatedBernoulliSpec,
    test_bit: usize,
    target_tv: f64,
) -> Result<f64> {
    let d0 = base.materialize()?;
    let start = base
        .marginals
        .get(test_bit)
        .copied()
        .ok_or(Error::IndexOutOfRange { index: test_bit, len: base.dimension() })?;
    let tv_at = |m: f64| -> Result<f64> { total_variation(&d0, &base.derive_alternate(test_bit, m)?.materialize()?) };
    if tv_at(1.0)? < target_tv {
        return Err(Error::model(format!("total variation {target_tv} is not reachable")));
    }
    let (mut lo, mut hi) = (start, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if tv_at(mid)? < target_tv {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
