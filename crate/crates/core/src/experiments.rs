//! Experiment configuration, sweeps over the test-bit marginal and the
//! behaviour parameters, CSV output and SVG plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{engagement_output_distribution, expansion_factor, sc_bounds, BoundsReport, ExpansionReport};
use crate::attribute_privacy::{
    miniature, pufferfish_verify, recheck_witness, violation_witness, ConstantMechanism, Verdict, WitnessVerdict,
};
use crate::behaviors::BehaviorParams;
use crate::distinguishing::{
    active_ads, estimate_advantage, find_sample_complexity, AdvantageEstimate, Backend, GameConfig, GameKind,
    SCResult, SearchOptions, DEFAULT_CEILING,
};
use crate::error::{Error, Result};
use crate::feature_space::{marginal_for_total_variation, total_variation, CorrelatedBernoulliSpec, ExplicitDistribution};

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "arm",
    "tv_distance",
    "param_name",
    "param_value",
    "minimal_n",
    "power",
    "level",
    "seed",
    "config_hash",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TvSweep,
    EpsilonSweep,
    AlphaESweep,
    AlphaTSweep,
    Bounds,
    Audit,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TvSweep => "tv_sweep",
            ExperimentKind::EpsilonSweep => "epsilon_sweep",
            ExperimentKind::AlphaESweep => "alpha_e_sweep",
            ExperimentKind::AlphaTSweep => "alpha_t_sweep",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::Audit => "audit",
        }
    }

    /// Swept parameter name for parameter sweeps.
    pub fn param(self) -> Option<&'static str> {
        match self {
            ExperimentKind::EpsilonSweep => Some("epsilon"),
            ExperimentKind::AlphaESweep => Some("alpha_e"),
            ExperimentKind::AlphaTSweep => Some("alpha_t"),
            _ => None,
        }
    }

    fn default_values(self) -> Vec<f64> {
        match self {
            ExperimentKind::EpsilonSweep => vec![0.1, 0.5, 0.9],
            ExperimentKind::AlphaESweep => vec![0.01, 0.05, 0.2],
            ExperimentKind::AlphaTSweep => vec![0.2, 0.6, 1.0],
            _ => Vec::new(),
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config(format!("unknown experiment kind {s:?}")))
    }
}

fn default_rho() -> f64 {
    0.16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    /// Per-bit marginals under `D_0`. Defaults to 0.5 on `b_test`, 0.15 elsewhere.
    pub marginals: Option<Vec<f64>>,
    /// Common latent correlation between every pair of bits.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Full latent correlation matrix; overrides `rho`.
    pub correlation: Option<Vec<Vec<f64>>>,
}

impl Default for BaseSpec {
    fn default() -> Self {
        BaseSpec { marginals: None, rho: default_rho(), correlation: None }
    }
}

fn default_grid_marginals() -> Vec<f64> {
    vec![0.55, 0.6375, 0.725, 0.8125, 0.9]
}

fn default_fixed_marginal() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// `b_test` marginals under `D_1` for the TV sweep.
    #[serde(default = "default_grid_marginals")]
    pub marginals: Vec<f64>,
    /// Swept parameter values; defaults depend on the experiment kind.
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    /// `b_test` marginal under `D_1` held fixed during parameter sweeps.
    #[serde(default = "default_fixed_marginal")]
    pub marginal: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { marginals: default_grid_marginals(), values: None, marginal: default_fixed_marginal() }
    }
}

fn default_alpha_t() -> f64 {
    1.0
}

fn default_alpha_e() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    #[serde(default)]
    pub kind: GameKind,
    #[serde(default = "default_alpha_t")]
    pub alpha_t: f64,
    #[serde(default = "default_alpha_e")]
    pub alpha_e: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl ArmConfig {
    pub fn behavior(&self) -> Result<BehaviorParams> {
        BehaviorParams::new(self.alpha_t, self.alpha_e, self.epsilon)
    }

    fn with_param(&self, param: &str, value: f64) -> ArmConfig {
        let mut arm = self.clone();
        match param {
            "epsilon" => arm.epsilon = Some(value),
            "alpha_e" => arm.alpha_e = value,
            "alpha_t" => arm.alpha_t = value,
            _ => {}
        }
        arm
    }

    fn sweeps(&self, param: &str) -> bool {
        self.kind == GameKind::Ecosystem && (param != "epsilon" || self.epsilon.is_some())
    }
}

fn default_arms() -> Vec<ArmConfig> {
    vec![
        ArmConfig { name: "baseline".into(), kind: GameKind::Baseline, alpha_t: 1.0, alpha_e: 0.05, epsilon: None },
        ArmConfig { name: "non_private".into(), kind: GameKind::Ecosystem, alpha_t: 1.0, alpha_e: 0.05, epsilon: None },
        ArmConfig { name: "private".into(), kind: GameKind::Ecosystem, alpha_t: 0.5, alpha_e: 0.05, epsilon: Some(0.5) },
    ]
}

fn default_target_tv() -> f64 {
    0.3
}

fn default_audit_trials() -> u64 {
    2000
}

fn default_audit_epsilons() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}

fn default_miniature_n() -> usize {
    4
}

fn default_miniature_ell() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_target_tv")]
    pub target_tv: f64,
    #[serde(default = "default_audit_trials")]
    pub trials: u64,
    #[serde(default = "default_audit_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_miniature_n")]
    pub miniature_n: usize,
    #[serde(default = "default_miniature_ell")]
    pub miniature_ell: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            target_tv: default_target_tv(),
            trials: default_audit_trials(),
            epsilons: default_audit_epsilons(),
            miniature_n: default_miniature_n(),
            miniature_ell: default_miniature_ell(),
        }
    }
}

fn default_ell() -> usize {
    8
}

fn default_level() -> f64 {
    0.05
}

fn default_target_power() -> f64 {
    0.8
}

fn default_trials() -> u64 {
    400
}

fn default_rounds() -> usize {
    1
}

fn default_ceiling() -> u64 {
    DEFAULT_CEILING
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_ell")]
    pub ell: usize,
    #[serde(default)]
    pub b_test: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_target_power")]
    pub target_power: f64,
    #[serde(default = "default_trials")]
    pub trials_per_point: u64,
    #[serde(default = "default_rounds")]
    pub rounds_per_user: usize,
    #[serde(default = "default_ceiling")]
    pub ceiling: u64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub base: BaseSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_arms")]
    pub arms: Vec<ArmConfig>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    /// Defaults for `kind` with the mandatory seed.
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            seed,
            ell: default_ell(),
            b_test: 0,
            level: default_level(),
            target_power: default_target_power(),
            trials_per_point: default_trials(),
            rounds_per_user: default_rounds(),
            ceiling: default_ceiling(),
            backend: Backend::Auto,
            base: BaseSpec::default(),
            grid: GridConfig::default(),
            arms: default_arms(),
            audit: AuditConfig::default(),
            output: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell == 0 || self.b_test >= self.ell {
            return Err(Error::config(format!("b_test {} must index one of {} bits", self.b_test, self.ell)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config("level must lie in (0, 1)"));
        }
        if !(self.target_power > 0.5 && self.target_power < 1.0) {
            return Err(Error::config("target_power must lie in (0.5, 1)"));
        }
        if self.trials_per_point == 0 || self.rounds_per_user == 0 || self.ceiling < 16 {
            return Err(Error::config("trials_per_point and rounds_per_user must be >= 1, ceiling >= 16"));
        }
        if self.arms.is_empty() {
            return Err(Error::config("at least one arm is required"));
        }
        let mut names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("arm names must be unique"));
        }
        for arm in &self.arms {
            arm.behavior().map_err(|e| Error::config(format!("arm {}: {e}", arm.name)))?;
        }
        for &m in self.grid.marginals.iter().chain(std::iter::once(&self.grid.marginal)) {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::config(format!("grid marginal {m} outside [0, 1]")));
            }
        }
        match self.experiment {
            ExperimentKind::TvSweep | ExperimentKind::Bounds => {
                let need = if self.experiment == ExperimentKind::TvSweep { 3 } else { 1 };
                if self.grid.marginals.len() < need {
                    return Err(Error::config(format!("the marginal grid needs at least {need} points")));
                }
            }
            kind @ (ExperimentKind::EpsilonSweep | ExperimentKind::AlphaESweep | ExperimentKind::AlphaTSweep) => {
                if self.sweep_values().is_empty() {
                    return Err(Error::config("the parameter grid is empty"));
                }
                let param = kind.param().expect("parameter sweep");
                if !self.arms.iter().any(|a| a.sweeps(param)) {
                    return Err(Error::config(format!("no arm takes the swept parameter {param}")));
                }
                for arm in &self.arms {
                    for &v in &self.sweep_values() {
                        arm.with_param(param, v)
                            .behavior()
                            .map_err(|e| Error::config(format!("{param} = {v}: {e}")))?;
                    }
                }
            }
            ExperimentKind::Audit => {
                if !(self.audit.target_tv > 0.0 && self.audit.target_tv < 1.0) || self.audit.trials < 100 {
                    return Err(Error::config("audit needs target_tv in (0, 1) and at least 100 trials"));
                }
            }
        }
        self.base_spec()?;
        Ok(())
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        self.grid.values.clone().unwrap_or_else(|| self.experiment.default_values())
    }

    pub fn base_spec(&self) -> Result<CorrelatedBernoulliSpec> {
        let marginals = match &self.base.marginals {
            Some(m) => m.clone(),
            None => (0..self.ell).map(|j| if j == self.b_test { 0.5 } else { 0.15 }).collect(),
        };
        if marginals.len() != self.ell {
            return Err(Error::config(format!("base marginals have {} entries, ell is {}", marginals.len(), self.ell)));
        }
        match &self.base.correlation {
            Some(c) => CorrelatedBernoulliSpec::new(marginals, c.clone()),
            None => CorrelatedBernoulliSpec::equicorrelated(marginals, self.base.rho),
        }
    }

    /// First 16 hex digits of SHA-256 over the config's canonical JSON.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn search_options(&self) -> SearchOptions {
        SearchOptions {
            target_power: self.target_power,
            trials_per_point: self.trials_per_point,
            master_seed: self.seed,
            ceiling: self.ceiling,
            start: 16,
        }
    }

    pub fn game(&self, arm: &ArmConfig, d0: &ExplicitDistribution, d1: &ExplicitDistribution, n: u64) -> Result<GameConfig> {
        let mut g = GameConfig::ab(n, d0.clone(), d1.clone(), self.b_test, arm.behavior()?)?;
        g.kind = arm.kind;
        g.level = self.level;
        g.rounds_per_user = self.rounds_per_user;
        g.backend = self.backend;
        g.validate()?;
        Ok(g)
    }

    fn distributions(&self, marginal: f64) -> Result<(ExplicitDistribution, ExplicitDistribution)> {
        let base = self.base_spec()?;
        Ok((base.materialize()?, base.derive_alternate(self.b_test, marginal)?.materialize()?))
    }
}

/// One CSV row. `minimal_n` is empty when the search hit the ceiling; `power`
/// is then the power at the ceiling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment: String,
    pub arm: String,
    pub tv_distance: f64,
    pub param_name: String,
    pub param_value: f64,
    pub minimal_n: Option<u64>,
    pub power: Option<f64>,
    pub level: f64,
    pub seed: u64,
    pub config_hash: String,
}

impl CsvRow {
    fn sort_key(&self) -> (String, String, f64, f64) {
        (self.experiment.clone(), self.arm.clone(), self.param_value, self.tv_distance)
    }
}

fn sort_rows(rows: &mut [CsvRow]) {
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.cmp(&kb.0)
            .then(ka.1.cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
            .then(ka.3.total_cmp(&kb.3))
    });
}

struct Job {
    arm: ArmConfig,
    marginal: f64,
    param_name: String,
    param_value: f64,
}

fn run_jobs(config: &ExperimentConfig, jobs: Vec<Job>) -> Result<Vec<CsvRow>> {
    let hash = config.config_hash();
    let mut marginals: Vec<f64> = jobs.iter().map(|j| j.marginal).collect();
    marginals.sort_by(f64::total_cmp);
    marginals.dedup();
    let dists: Vec<(f64, ExplicitDistribution, ExplicitDistribution, f64)> = marginals
        .par_iter()
        .map(|&m| {
            let (d0, d1) = config.distributions(m)?;
            let tv = total_variation(&d0, &d1)?;
            Ok((m, d0, d1, tv))
        })
        .collect::<Result<_>>()?;
    let opts = config.search_options();
    let mut rows = jobs
        .par_iter()
        .map(|job| {
            let (_, d0, d1, tv) = dists.iter().find(|d| d.0 == job.marginal).expect("materialized above");
            let game = config.game(&job.arm, d0, d1, 1)?;
            let (minimal_n, power) = match find_sample_complexity(&game, &opts) {
                Ok(sc) => (Some(sc.minimal_n), Some(sc.power_at_n)),
                Err(Error::Ceiling { ceiling, trace }) => {
                    (None, trace.iter().find(|(n, _)| *n == ceiling).map(|t| t.1))
                }
                Err(e) => return Err(e),
            };
            Ok(CsvRow {
                experiment: config.experiment.name().to_string(),
                arm: job.arm.name.clone(),
                tv_distance: *tv,
                param_name: job.param_name.clone(),
                param_value: job.param_value,
                minimal_n,
                power,
                level: config.level,
                seed: config.seed,
                config_hash: hash.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(rows)
}

/// Sample complexity of every arm at every `b_test` marginal in the grid.
pub fn run_tv_sweep(config: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    config.validate()?;
    if config.grid.marginals.len() < 3 {
        return Err(Error::config("the TV sweep needs at least 3 grid points"));
    }
    let jobs = config
        .grid
        .marginals
        .iter()
        .flat_map(|&m| {
            config.arms.iter().map(move |arm| Job {
                arm: arm.clone(),
                marginal: m,
                param_name: "b_test_marginal".into(),
                param_value: m,
            })
        })
        .collect();
    run_jobs(config, jobs)
}

/// Sample complexity at the fixed marginal for each value of the swept
/// parameter, for every arm that takes it.
pub fn run_param_sweep(config: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    config.validate()?;
    let param = config
        .experiment
        .param()
        .ok_or_else(|| Error::config(format!("{} is not a parameter sweep", config.experiment.name())))?;
    let jobs = config
        .sweep_values()
        .into_iter()
        .flat_map(|v| {
            config.arms.iter().filter(|a| a.sweeps(param)).map(move |arm| Job {
                arm: arm.with_param(param, v),
                marginal: config.grid.marginal,
                param_name: param.into(),
                param_value: v,
            })
        })
        .collect();
    run_jobs(config, jobs)
}

pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<CsvRow>> {
    match config.experiment {
        ExperimentKind::TvSweep => run_tv_sweep(config),
        ExperimentKind::EpsilonSweep | ExperimentKind::AlphaESweep | ExperimentKind::AlphaTSweep => {
            run_param_sweep(config)
        }
        other => Err(Error::config(format!("{} is not a sweep", other.name()))),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv<W: Write>(rows: &[CsvRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.arm.clone(),
            fmt_f64(r.tv_distance),
            r.param_name.clone(),
            fmt_f64(r.param_value),
            r.minimal_n.map(|n| n.to_string()).unwrap_or_default(),
            r.power.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.level),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[CsvRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<CsvRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = r.records();
    let header = match records.next() {
        None => return Err(parse_err(1, "empty file: missing header")),
        Some(h) => h.map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?,
    };
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(parse_err(1, format!("unexpected header, expected {}", CSV_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != CSV_HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| parse_err(line, format!("{}: not a number: {:?}", CSV_HEADER[i], &rec[i])))
        };
        let opt = |i: usize| -> Result<Option<f64>> { if rec[i].is_empty() { Ok(None) } else { num(i).map(Some) } };
        rows.push(CsvRow {
            experiment: rec[0].to_string(),
            arm: rec[1].to_string(),
            tv_distance: num(2)?,
            param_name: rec[3].to_string(),
            param_value: num(4)?,
            minimal_n: if rec[5].is_empty() {
                None
            } else {
                Some(rec[5].parse().map_err(|_| parse_err(line, format!("minimal_n: not an integer: {:?}", &rec[5])))?)
            },
            power: opt(6)?,
            level: num(7)?,
            seed: rec[8].parse().map_err(|_| parse_err(line, format!("seed: not an integer: {:?}", &rec[8])))?,
            config_hash: rec[9].to_string(),
        });
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    Ok(rows)
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// SVG line chart of minimal campaign size (log scale) against TV distance
/// for the TV sweep, or against the swept parameter otherwise. One polyline
/// per arm.
pub fn render_plot(rows: &[CsvRow]) -> Result<String> {
    let against_tv = rows.iter().all(|r| r.param_name == "b_test_marginal");
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let entry = series.entry(r.arm.as_str()).or_default();
        if let Some(n) = r.minimal_n.filter(|&n| n > 0) {
            entry.push((if against_tv { r.tv_distance } else { r.param_value }, (n as f64).log10()));
        }
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if all.is_empty() {
        return Err(parse_err(1, "no rows with a minimal_n to plot"));
    }
    let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let y0 = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
    let y1 = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().max(y0 + 1.0);
    let (w, h, left, right, top, bottom) = (720.0, 480.0, 80.0, 160.0, 30.0, 60.0);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| top + (y1 - y) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}"/></g>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    let mut e = y0 as i64;
    while e as f64 <= y1 {
        let y = py(e as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">1e{e}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0
        );
        e += 1;
    }
    for k in 0..=4 {
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x:.3}</text>"#,
            px(x),
            h - bottom + 18.0
        );
    }
    let xlabel = if against_tv { "total variation distance" } else { rows[0].param_name.as_str() };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{xlabel}</text>"#,
        left + (w - left - right) / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">minimal campaign size</text>"#,
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0
    );
    for (i, (arm, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-arm="{arm}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 20.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="12">{arm}</text>"#,
            w - right + 15.0,
            w - right + 40.0,
            w - right + 45.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(csv_path: impl AsRef<Path>, out_path: impl AsRef<Path>) -> Result<()> {
    let rows = read_csv(std::fs::File::open(csv_path.as_ref())?)?;
    std::fs::write(out_path.as_ref(), render_plot(&rows)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub arm: String,
    pub b_test_marginal: f64,
    pub tv_distance: f64,
    pub mass_d0: f64,
    pub mass_d1: f64,
    pub bounds: BoundsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub b_test_marginal: f64,
    pub nonprivate_arm: String,
    pub private_arm: String,
    pub n_nonprivate: u64,
    pub expansion: ExpansionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsOutput {
    pub bounds: Vec<BoundsRow>,
    pub expansion: Vec<ExpansionRow>,
}

/// Error rate of a distinguisher with advantage 2/3.
pub const DEFAULT_BETA: f64 = 1.0 / 6.0;

/// Hellinger bounds for every ecosystem arm at every grid marginal, and the
/// expansion factor between the first non-private and first private arm
/// (with the non-private size set to its Hellinger upper bound).
pub fn run_bounds(config: &ExperimentConfig) -> Result<BoundsOutput> {
    config.validate()?;
    let ads = active_ads(&crate::distinguishing::ab_campaigns(config.ell, config.b_test)?);
    let mut bounds = Vec::new();
    let mut expansion = Vec::new();
    let nonprivate = config.arms.iter().find(|a| a.kind == GameKind::Ecosystem && a.epsilon.is_none());
    let private = config.arms.iter().find(|a| a.kind == GameKind::Ecosystem && a.epsilon.is_some());
    for &m in &config.grid.marginals {
        let (d0, d1) = config.distributions(m)?;
        let tv = total_variation(&d0, &d1)?;
        for arm in config.arms.iter().filter(|a| a.kind == GameKind::Ecosystem) {
            let params = arm.behavior()?;
            let r0 = engagement_output_distribution(&d0, &ads, &params)?;
            let r1 = engagement_output_distribution(&d1, &ads, &params)?;
            bounds.push(BoundsRow {
                arm: arm.name.clone(),
                b_test_marginal: m,
                tv_distance: tv,
                mass_d0: r0.total_mass(),
                mass_d1: r1.total_mass(),
                bounds: sc_bounds(&r0, &r1, DEFAULT_BETA, arm.epsilon)?,
            });
        }
        if let (Some(np), Some(p)) = (nonprivate, private) {
            let params = np.behavior()?;
            let r0 = engagement_output_distribution(&d0, &ads, &params)?;
            let r1 = engagement_output_distribution(&d1, &ads, &params)?;
            let n_np = sc_bounds(&r0, &r1, DEFAULT_BETA, None)?.sc_upper.ceil() as u64;
            let eps = p.epsilon.expect("private arm has epsilon");
            expansion.push(ExpansionRow {
                b_test_marginal: m,
                nonprivate_arm: np.name.clone(),
                private_arm: p.name.clone(),
                n_nonprivate: n_np,
                expansion: expansion_factor(&d0, &d1, &ads, np.alpha_t, p.alpha_t, n_np, eps)?,
            });
        }
    }
    Ok(BoundsOutput { bounds, expansion })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmAudit {
    pub arm: String,
    pub n: u64,
    pub n_source: String,
    pub verdict: WitnessVerdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiniatureAudit {
    pub n: usize,
    pub ell: usize,
    pub identity_epsilon: f64,
    pub identity: Verdict,
    pub identity_recheck_ratio: Option<f64>,
    pub constant: Vec<(f64, Verdict)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOutput {
    pub target_tv: f64,
    pub b_test_marginal: f64,
    pub nonprivate_sc: SCResult,
    pub expansion: ExpansionReport,
    pub arms: Vec<ArmAudit>,
    pub miniature: MiniatureAudit,
}

/// At the instance whose TV equals `audit.target_tv`: search the non-private
/// arm's sample complexity, then look for violation evidence there and, for
/// the private arm, at the predicted amplified size. Finishes with exhaustive
/// Pufferfish checks on a small enumerable instance.
pub fn run_audit(config: &ExperimentConfig) -> Result<AuditOutput> {
    config.validate()?;
    let base = config.base_spec()?;
    let m = marginal_for_total_variation(&base, config.b_test, config.audit.target_tv)?;
    let (d0, d1) = config.distributions(m)?;
    let nonprivate = config
        .arms
        .iter()
        .find(|a| a.kind == GameKind::Ecosystem && a.epsilon.is_none())
        .ok_or_else(|| Error::config("audit needs a non-private ecosystem arm"))?;
    let private = config
        .arms
        .iter()
        .find(|a| a.kind == GameKind::Ecosystem && a.epsilon.is_some())
        .ok_or_else(|| Error::config("audit needs a private ecosystem arm"))?;

    let np_game = config.game(nonprivate, &d0, &d1, 1)?;
    let sc = find_sample_complexity(&np_game, &config.search_options())?;
    let ads = active_ads(&np_game.campaigns);
    let eps = private.epsilon.expect("private arm has epsilon");
    let expansion = expansion_factor(&d0, &d1, &ads, nonprivate.alpha_t, private.alpha_t, sc.minimal_n, eps)?;
    if expansion.n_private_predicted > config.ceiling {
        return Err(Error::Ceiling { ceiling: config.ceiling, trace: vec![(expansion.n_private_predicted, f64::NAN)] });
    }

    let trials = config.audit.trials;
    let arms = vec![
        ArmAudit {
            arm: nonprivate.name.clone(),
            n: sc.minimal_n,
            n_source: "searched sample complexity".into(),
            verdict: violation_witness(&np_game.with_n(sc.minimal_n), trials, config.seed)?,
        },
        ArmAudit {
            arm: private.name.clone(),
            n: expansion.n_private_predicted,
            n_source: "predicted amplified size".into(),
            verdict: violation_witness(
                &config.game(private, &d0, &d1, expansion.n_private_predicted)?,
                trials,
                config.seed,
            )?,
        },
    ];

    let (mech, framework) = miniature(&np_game, config.audit.miniature_n, config.audit.miniature_ell)?;
    let identity = pufferfish_verify(&mech, &framework, 1.0, None)?;
    let identity_recheck_ratio = match &identity {
        Verdict::Violated(w) => Some(recheck_witness(&mech, &framework, w)?),
        Verdict::Satisfied => None,
    };
    let constant = config
        .audit
        .epsilons
        .iter()
        .map(|&e| Ok((e, pufferfish_verify(&ConstantMechanism, &framework, e, None)?)))
        .collect::<Result<Vec<_>>>()?;

    Ok(AuditOutput {
        target_tv: config.audit.target_tv,
        b_test_marginal: m,
        nonprivate_sc: sc,
        expansion,
        arms,
        miniature: MiniatureAudit {
            n: config.audit.miniature_n,
            ell: config.audit.miniature_ell,
            identity_epsilon: 1.0,
            identity,
            identity_recheck_ratio,
            constant,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameOutput {
    pub arm: String,
    pub n: u64,
    pub b_test_marginal: f64,
    pub tv_distance: f64,
    pub estimate: AdvantageEstimate,
}

/// One advantage estimate for `arm` at campaign size `n`.
pub fn run_game(config: &ExperimentConfig, arm: &str, marginal: f64, n: u64, trials: u64) -> Result<GameOutput> {
    config.validate()?;
    let arm_cfg = config
        .arms
        .iter()
        .find(|a| a.name == arm)
        .ok_or_else(|| Error::config(format!("no arm named {arm:?}")))?;
    let (d0, d1) = config.distributions(marginal)?;
    let game = config.game(arm_cfg, &d0, &d1, n)?;
    Ok(GameOutput {
        arm: arm.to_string(),
        n,
        b_test_marginal: marginal,
        tv_distance: total_variation(&d0, &d1)?,
        estimate: estimate_advantage(&game, trials, config.seed)?,
    })
}
