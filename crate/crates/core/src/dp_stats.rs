//! Noise mechanisms and the hypothesis tests used by the distinguisher.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::rng::open_unit;

/// Tulap noise parameters. Only the pure-DP case `q = 0` is supported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TulapParams {
    pub b: f64,
    pub q: f64,
}

impl TulapParams {
    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        Ok(TulapParams { b: (-epsilon).exp(), q: 0.0 })
    }

    pub fn epsilon(&self) -> f64 {
        -self.b.ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(Error::config(format!("tulap b must lie in (0, 1), got {}", self.b)));
        }
        if self.q != 0.0 {
            if (0.0..1.0).contains(&self.q) {
                return Err(Error::Unsupported("tulap truncation q > 0 (approximate DP)".into()));
            }
            return Err(Error::config(format!("tulap q must lie in [0, 1), got {}", self.q)));
        }
        Ok(())
    }

    /// Offset beyond which the Tulap tail mass is below 1e-20.
    fn negligible_range(&self) -> f64 {
        ((1e-20f64).ln() / self.b.ln()).ceil() + 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, level: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestResult { statistic, p_value, reject: p_value <= level, level }
    }
}

/// Geometric draw on {0, 1, ...} with `P(G >= k) = b^k`, by inversion of
/// `u` in (0, 1].
pub fn geometric_from_uniform(b: f64, u: f64) -> u64 {
    if b <= 0.0 {
        return 0;
    }
    let g = (u.ln() / b.ln()).floor();
    if g.is_finite() && g >= 0.0 {
        g as u64
    } else {
        0
    }
}

/// Tulap draw from three uniforms: `u1`, `u2` in (0, 1] drive the two
/// geometrics and `u3` in [0, 1) the uniform component.
pub fn tulap_from_uniforms(params: &TulapParams, u1: f64, u2: f64, u3: f64) -> f64 {
    let g1 = geometric_from_uniform(params.b, u1) as f64;
    let g2 = geometric_from_uniform(params.b, u2) as f64;
    g1 - g2 + (u3 - 0.5)
}

pub fn tulap_sample<R: Rng + ?Sized>(params: &TulapParams, rng: &mut R) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    let u3 = rng.random::<f64>();
    tulap_from_uniforms(params, u1, u2, u3)
}

pub fn tulap_cdf(params: &TulapParams, t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t > 0.0 {
        return 1.0 - tulap_cdf(params, -t);
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let b = params.b;
    let r = t.round();
    let frac = t - r + 0.5;
    // b^(-r) with r <= 0
    let scale = (-r * b.ln()).exp();
    (scale / (1.0 + b) * (b + frac * (1.0 - b))).clamp(0.0, 1.0)
}

/// Binomial(n, p) probabilities over the window where they are not
/// negligible, with both tails precomputed.
#[derive(Clone, Debug)]
pub struct BinomialTable {
    n: u64,
    p: f64,
    lo: u64,
    pmf: Vec<f64>,
    /// `upper[i] = P(X >= lo + i)`
    upper: Vec<f64>,
    /// `lower[i] = P(X <= lo + i)`
    lower: Vec<f64>,
}

impl BinomialTable {
    pub fn new(n: u64, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("binomial probability {p} outside [0, 1]")));
        }
        let (lo, pmf) = if p == 0.0 {
            (0, vec![1.0])
        } else if p == 1.0 {
            (n, vec![1.0])
        } else {
            let nf = n as f64;
            let sd = (nf * p * (1.0 - p)).sqrt();
            let half = 40.0 * sd + 10.0;
            let mode = (((n + 1) as f64) * p).floor().min(nf) as u64;
            let lo = (mode as f64 - half).max(0.0) as u64;
            let hi = ((mode as f64 + half).min(nf)) as u64;
            let mut pmf = vec![0.0; (hi - lo + 1) as usize];
            let ln_mode = ln_binomial(n, mode) + mode as f64 * p.ln() + (n - mode) as f64 * (1.0 - p).ln();
            let mi = (mode - lo) as usize;
            pmf[mi] = ln_mode.exp();
            let odds = p / (1.0 - p);
            for k in mode..hi {
                let i = (k - lo) as usize;
                pmf[i + 1] = pmf[i] * ((n - k) as f64 / (k + 1) as f64) * odds;
            }
            for k in (lo + 1..=mode).rev() {
                let i = (k - lo) as usize;
                pmf[i - 1] = pmf[i] * (k as f64 / (n - k + 1) as f64) / odds;
            }
            (lo, pmf)
        };
        let total: f64 = pmf.iter().sum();
        let pmf: Vec<f64> = pmf.into_iter().map(|v| v / total).collect();
        let mut upper = vec![0.0; pmf.len()];
        let mut acc = 0.0;
        for i in (0..pmf.len()).rev() {
            acc += pmf[i];
            upper[i] = acc.min(1.0);
        }
        let mut lower = vec![0.0; pmf.len()];
        let mut acc = 0.0;
        for i in 0..pmf.len() {
            acc += pmf[i];
            lower[i] = acc.min(1.0);
        }
        Ok(BinomialTable { n, p, lo, pmf, upper, lower })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn hi(&self) -> u64 {
        self.lo + self.pmf.len() as u64 - 1
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k < self.lo || k > self.hi() {
            0.0
        } else {
            self.pmf[(k - self.lo) as usize]
        }
    }

    /// `P(X >= k)`
    pub fn survival(&self, k: i64) -> f64 {
        if k <= self.lo as i64 {
            1.0
        } else if k > self.hi() as i64 {
            0.0
        } else {
            self.upper[(k as u64 - self.lo) as usize]
        }
    }

    /// `P(X <= k)`
    pub fn cdf(&self, k: i64) -> f64 {
        if k < self.lo as i64 {
            0.0
        } else if k >= self.hi() as i64 {
            1.0
        } else {
            self.lower[(k as u64 - self.lo) as usize]
        }
    }

    /// Inverse-CDF draw: the smallest `k` with `P(X <= k) > u`.
    pub fn quantile(&self, u: f64) -> u64 {
        let i = self.lower.partition_point(|&c| c <= u);
        (self.lo + i as u64).min(self.hi())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.quantile(rng.random::<f64>())
    }

    pub fn exact_test(&self, k: u64, side: Side, level: f64) -> Result<TestResult> {
        if k > self.n {
            return Err(Error::config(format!("successes {k} exceed trials {}", self.n)));
        }
        let p = match side {
            Side::Upper => self.survival(k as i64),
            Side::Lower => self.cdf(k as i64),
        };
        Ok(TestResult::new(k as f64, p, level))
    }

    pub fn ump_test(&self, noisy: f64, params: &TulapParams, side: Side, level: f64) -> Result<TestResult> {
        params.validate()?;
        if !noisy.is_finite() {
            let p = match (side, noisy > 0.0) {
                (Side::Upper, true) | (Side::Lower, false) => 0.0,
                _ => 1.0,
            };
            return Ok(TestResult::new(noisy, p, level));
        }
        let range = params.negligible_range();
        let x_lo = ((noisy - range).floor().max(self.lo as f64)) as i64;
        let x_hi = ((noisy + range).ceil().min(self.hi() as f64)) as i64;
        let mut p = 0.0;
        if x_lo <= x_hi {
            for x in x_lo..=x_hi {
                let w = self.pmf(x as u64);
                if w == 0.0 {
                    continue;
                }
                let f = tulap_cdf(params, noisy - x as f64);
                p += w * match side {
                    Side::Upper => 1.0 - f,
                    Side::Lower => f,
                };
            }
        }
        p += match side {
            Side::Upper => self.survival(x_hi.max(self.lo as i64 - 1) + 1),
            Side::Lower => self.cdf(x_lo.min(self.hi() as i64 + 1) - 1),
        };
        Ok(TestResult::new(noisy, p, level))
    }
}

fn check_null(null_p: f64) -> Result<()> {
    if !(null_p > 0.0 && null_p < 1.0) {
        return Err(Error::config(format!("null proportion must lie in (0, 1), got {null_p}")));
    }
    Ok(())
}

/// Exact one-sided binomial tail test; rejects iff `p_value <= level`.
pub fn binomial_test_exact(k: u64, n: u64, null_p: f64, side: Side, level: f64) -> Result<TestResult> {
    check_null(null_p)?;
    if k > n {
        return Err(Error::config(format!("successes {k} exceed trials {n}")));
    }
    BinomialTable::new(n, null_p)?.exact_test(k, side, level)
}

/// Uniformly most powerful one-sided test on a Tulap-noised binomial count.
pub fn ump_dp_binomial_test(
    noisy_count: f64,
    n: u64,
    null_p: f64,
    params: &TulapParams,
    side: Side,
    level: f64,
) -> Result<TestResult> {
    check_null(null_p)?;
    BinomialTable::new(n, null_p)?.ump_test(noisy_count, params, side, level)
}

/// Two-sided geometric release `count + Z`, `P(Z = z) ∝ e^(-ε|z|)`.
pub fn geometric_mechanism<R: Rng + ?Sized>(count: i64, epsilon: f64, rng: &mut R) -> Result<i64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let b = (-epsilon).exp();
    let g1 = geometric_from_uniform(b, open_unit(rng)) as i64;
    let g2 = geometric_from_uniform(b, open_unit(rng)) as i64;
    Ok(count + g1 - g2)
}

/// Closed-form `P(Z = z)` of the geometric mechanism's noise.
pub fn geometric_noise_pmf(z: i64, epsilon: f64) -> f64 {
    let b = (-epsilon).exp();
    (1.0 - b) / (1.0 + b) * b.powf(z.unsigned_abs() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsAlphaEstimate {
    pub alpha: f64,
    pub half_width_3sigma: f64,
    pub trials: u64,
}

/// Monte-Carlo estimate of `|Pr[f_s(d) = 1] − Pr[f_s(f_r(d)) = 1]|`.
pub fn estimate_metrics_alpha<D, R, FR, FS>(
    f_r: FR,
    f_s: FS,
    dataset: &D,
    trials: u64,
    rng: &mut R,
) -> Result<MetricsAlphaEstimate>
where
    R: Rng + ?Sized,
    FR: Fn(&D, &mut R) -> Result<D>,
    FS: Fn(&D, &mut R) -> Result<bool>,
{
    if trials < 1000 {
        return Err(Error::config(format!("need at least 1000 trials, got {trials}")));
    }
    let (mut raw, mut processed) = (0u64, 0u64);
    for _ in 0..trials {
        if f_s(dataset, rng)? {
            raw += 1;
        }
        let released = f_r(dataset, rng)?;
        if f_s(&released, rng)? {
            processed += 1;
        }
    }
    let t = trials as f64;
    let (a, b) = (raw as f64 / t, processed as f64 / t);
    let var = a * (1.0 - a) / t + b * (1.0 - b) / t;
    Ok(MetricsAlphaEstimate { alpha: (a - b).abs(), half_width_3sigma: 3.0 * var.sqrt(), trials })
}
