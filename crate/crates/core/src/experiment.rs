//! Named experiments, their configuration, and result rows.
//!
//! A config file is TOML:
//!
//! ```toml
//! experiment = "cluster_law"
//! n_list = [400]
//! replicates = 2000
//! master_seed = 7
//!
//! [model.coeffs]
//! kind = "geometric"
//! B = [[1.0]]
//! rho = 0.5
//!
//! [model.noise]
//! alpha = 1.5
//! spectral.atoms = [[[1.0], 1.0]]
//!
//! [gamma]
//! kind = "half_space"
//! w = [1.0]
//! c = 1.2
//! ```
//!
//! Every replicate or trial `r` for window length `n` draws from
//! `Streams::new(master_seed).domain(experiment, n).stream(r)`, and all
//! aggregation happens after results are collected in replicate order, so the
//! output is independent of the worker count.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster_stats::{
    compute_cluster_extent, count_exceedances, extract_dominant_point, ClusterRecord, ExtentConvention,
};
use crate::error::{Error, Result};
use crate::failure_sets::{mu_overlap, FailureSet, FailureSetConfig};
use crate::linalg::norm;
use crate::ma_process::{ModelConfig, ModelSpec};
use crate::rare_event::{
    estimate_equivalents, single_jump_probability, symmetric_difference_ratio, two_jump_ratio, Conditioner,
    IndexSet, Method,
};
use crate::rng::Streams;
use crate::stat_tests::{ks_one_sample, prokhorov_bound};
use crate::tail_noise::{tail_measure, TailSetQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ClusterLaw,
    PointProcess,
    Equivalents,
    SymmetricDifference,
    TwoJump,
    Concentration,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::ClusterLaw => "cluster_law",
            ExperimentKind::PointProcess => "point_process",
            ExperimentKind::Equivalents => "equivalents",
            ExperimentKind::SymmetricDifference => "symmetric_difference",
            ExperimentKind::TwoJump => "two_jump",
            ExperimentKind::Concentration => "concentration",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    #[default]
    Rejection,
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum IndexSetConfig {
    #[default]
    #[serde(with = "full_tag")]
    Full,
    Fraction {
        fraction: f64,
    },
}

mod full_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("full")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "full" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!("expected \"full\", got \"{s}\"")))
        }
    }
}

impl IndexSetConfig {
    fn build(&self) -> IndexSet {
        match self {
            IndexSetConfig::Full => IndexSet::Full,
            IndexSetConfig::Fraction { fraction } => IndexSet::Fraction(*fraction),
        }
    }
}

/// Pass/fail rule for a statistic in summary mode. All present bounds apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pvalue_min: Option<f64>,
}

impl Threshold {
    pub fn check(&self, row: &ResultRow) -> bool {
        let v = row.value;
        self.min.is_none_or(|m| v >= m)
            && self.max.is_none_or(|m| v <= m)
            && self.pvalue_min.is_none_or(|m| row.pvalue.is_some_and(|p| p > m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    /// Bound on each `|Y_i|`.
    #[serde(default = "one")]
    pub c: f64,
    /// Threshold `t` as a multiple of the standard deviation of the sum.
    #[serde(default = "default_t_sd")]
    pub t_sd: f64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            c: 1.0,
            t_sd: default_t_sd(),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_t_sd() -> f64 {
    3.0
}
fn default_n_list() -> Vec<usize> {
    vec![400]
}
fn default_replicates() -> u64 {
    1000
}
fn default_workers() -> usize {
    1
}
fn default_m() -> f64 {
    2.0
}
fn default_cap_factor() -> f64 {
    2.0
}
fn default_max_attempts() -> u64 {
    1_000_000
}
fn default_dominance() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    pub gamma: FailureSetConfig,
    /// Defaults to `gamma`.
    #[serde(default)]
    pub psi: Option<FailureSetConfig>,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub output_path: Option<String>,
    /// Per-replicate cluster records (cluster_law and point_process only).
    #[serde(default)]
    pub records_path: Option<String>,
    #[serde(default = "default_m", rename = "M")]
    pub m: f64,
    /// Defaults to `0.1 * delta0(gamma)`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_cap_factor")]
    pub censor_cap_factor: f64,
    #[serde(default)]
    pub index_set: IndexSetConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
    /// Single-jump dominance threshold as a multiple of `n delta0 / |A|`.
    #[serde(default = "default_dominance")]
    pub dominance_factor: f64,
    /// Set to false to write `runtime_ms = 0`, making output byte-reproducible.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
    #[serde(default)]
    pub concentration: ConcentrationConfig,
    /// Overrides for the built-in summary thresholds, keyed by statistic.
    #[serde(default)]
    pub thresholds: BTreeMap<String, Threshold>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::config("n_list", "must be nonempty with every n >= 1"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if !(self.m > 0.0) {
            return Err(Error::config("M", "must be positive"));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::config("delta", "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::config("theta", "must be in [0, 1)"));
        }
        if !(self.censor_cap_factor > 0.0) {
            return Err(Error::config("censor_cap_factor", "must be positive"));
        }
        if let IndexSetConfig::Fraction { fraction } = self.index_set {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::config("index_set.fraction", "must be in (0, 1]"));
            }
        }
        if !(self.dominance_factor > 0.0) {
            return Err(Error::config("dominance_factor", "must be positive"));
        }
        if !(self.concentration.c > 0.0 && self.concentration.t_sd > 0.0) {
            return Err(Error::config("concentration", "c and t_sd must be positive"));
        }
        let model = self.model.build().map_err(|e| Error::config("model", e.to_string()))?;
        let gamma = self.gamma.build().map_err(|e| Error::config("gamma", e.to_string()))?;
        if gamma.dim() != model.dim() {
            return Err(Error::config("gamma", "dimension differs from the model"));
        }
        if let Some(p) = &self.psi {
            let psi = p.build().map_err(|e| Error::config("psi", e.to_string()))?;
            if psi.dim() != model.dim() {
                return Err(Error::config("psi", "dimension differs from the model"));
            }
        }
        Ok(())
    }

    /// Stable digest of the canonical config, ignoring fields that do not
    /// change results (worker count, output locations, timing).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = 1;
        canon.output_path = None;
        canon.records_path = None;
        canon.record_runtime = true;
        let json = serde_json::to_string(&canon).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn delta_for(&self, gamma: &FailureSet) -> f64 {
        self.delta.unwrap_or(0.1 * gamma.delta0())
    }
}

/// One long-format result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub n: usize,
    pub stat: String,
    pub value: f64,
    pub err: Option<f64>,
    pub pvalue: Option<f64>,
    pub seed: u64,
    pub runtime_ms: u64,
    pub config_hash: String,
}

struct RowSink<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    n: usize,
    runtime_ms: u64,
    rows: Vec<ResultRow>,
}

impl RowSink<'_> {
    fn push(&mut self, stat: &str, value: f64, err: Option<f64>, pvalue: Option<f64>) {
        self.rows.push(ResultRow {
            experiment: self.cfg.experiment.as_str().to_string(),
            n: self.n,
            stat: stat.to_string(),
            value,
            err,
            pvalue,
            seed: self.cfg.master_seed,
            runtime_ms: self.runtime_ms,
            config_hash: self.hash.clone(),
        });
    }
}

/// Built-in pass/fail rules for summary mode.
pub fn default_thresholds(kind: ExperimentKind) -> BTreeMap<String, Threshold> {
    let mut t = BTreeMap::new();
    let p01 = Threshold {
        pvalue_min: Some(0.01),
        ..Default::default()
    };
    let band = |lo: f64, hi: f64| Threshold {
        min: Some(lo),
        max: Some(hi),
        pvalue_min: None,
    };
    let at_most = |hi: f64| Threshold {
        max: Some(hi),
        ..Default::default()
    };
    match kind {
        ExperimentKind::ClusterLaw => {
            t.insert("ks_jplus_uniform".into(), p01);
            t.insert("mean_span".into(), band(0.85, 1.15));
            t.insert("atom_fraction_gap".into(), at_most(0.05));
        }
        ExperimentKind::PointProcess => {
            t.insert("ks_location_uniform".into(), p01);
            t.insert("ks_magnitude".into(), p01);
            t.insert(
                "single_jump_fraction".into(),
                Threshold {
                    min: Some(0.95),
                    ..Default::default()
                },
            );
        }
        ExperimentKind::Equivalents => {
            for k in 2..=5 {
                t.insert(format!("ratio_q{k}"), band(0.7, 1.3));
            }
        }
        ExperimentKind::SymmetricDifference => {
            t.insert("sym_diff_ratio".into(), at_most(0.15));
        }
        ExperimentKind::TwoJump => {}
        ExperimentKind::Concentration => {
            t.insert("violations".into(), at_most(0.0));
        }
    }
    t.insert("failed_replicates".into(), at_most(0.0));
    t
}

pub fn thresholds_for(cfg: &ExperimentConfig) -> BTreeMap<String, Threshold> {
    let mut t = default_thresholds(cfg.experiment);
    t.extend(cfg.thresholds.iter().map(|(k, v)| (k.clone(), *v)));
    t
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub records: Vec<ClusterRecord>,
}

/// Run the configured experiment for every `n` and return rows sorted by
/// `(experiment, n, stat)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Ok(run_experiment_full(cfg)?.rows)
}

pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let spec = cfg.model.build()?;
    let gamma = cfg.gamma.build()?;
    let psi = match &cfg.psi {
        Some(p) => p.build()?,
        None => gamma.clone(),
    };
    let hash = cfg.hash();
    let root = Streams::new(cfg.master_seed);
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &n in &cfg.n_list {
        let started = Instant::now();
        let streams = root.domain(cfg.experiment.as_str(), n as u64);
        let mut sink = RowSink {
            cfg,
            hash: hash.clone(),
            n,
            runtime_ms: 0,
            rows: Vec::new(),
        };
        let ctx = Context {
            cfg,
            spec: &spec,
            gamma: &gamma,
            psi: &psi,
            n,
            streams,
        };
        pool.install(|| -> Result<()> {
            match cfg.experiment {
                ExperimentKind::ClusterLaw | ExperimentKind::PointProcess => {
                    records.extend(ctx.conditioned(&mut sink)?);
                }
                ExperimentKind::Equivalents => ctx.equivalents(&mut sink)?,
                ExperimentKind::SymmetricDifference => ctx.symmetric_difference(&mut sink)?,
                ExperimentKind::TwoJump => ctx.two_jump(&mut sink)?,
                ExperimentKind::Concentration => ctx.concentration(&mut sink)?,
            }
            Ok(())
        })?;
        let runtime = if cfg.record_runtime {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        for mut r in sink.rows {
            r.runtime_ms = runtime;
            rows.push(r);
        }
    }
    sort_rows(&mut rows);
    Ok(ExperimentOutput { rows, records })
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| (&a.experiment, a.n, &a.stat).cmp(&(&b.experiment, b.n, &b.stat)));
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a ModelSpec,
    gamma: &'a FailureSet,
    psi: &'a FailureSet,
    n: usize,
    streams: Streams,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    (mean, (var / m).sqrt(), var)
}

fn proportion(hits: usize, total: usize) -> (f64, f64) {
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

fn uniform_cdf(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

impl Context<'_> {
    fn conditioned(&self, sink: &mut RowSink) -> Result<Vec<ClusterRecord>> {
        let cfg = self.cfg;
        let n = self.n;
        let nf = n as f64;
        let cap = (cfg.censor_cap_factor * nf).ceil() as i64;
        let half = (cfg.m * nf).floor() as i64;
        let conditioner = Conditioner::new(self.spec, self.gamma, n, (-cap, cap))?.with_noise_cover(-half, half)?;
        let method = match cfg.method {
            MethodConfig::Rejection => Method::Rejection,
            MethodConfig::Planted => Method::Planted,
        };
        let aggregate = self.spec.aggregate();
        let a_norm = self.spec.report().aggregate_norm;
        let dominance = cfg.dominance_factor * nf * self.gamma.delta0() / a_norm;
        let convention = ExtentConvention::default();

        let outcomes: Vec<Result<ClusterRecord>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = self.streams.stream(r);
                let sample = match method {
                    Method::Rejection => conditioner.rejection(cfg.max_attempts, &mut rng)?,
                    Method::Planted => conditioner.planted(&mut rng)?,
                };
                let extent = compute_cluster_extent(&sample, self.gamma, self.psi, cap, convention)?;
                let dominant = extract_dominant_point(&sample, aggregate, cfg.m)?;
                let large_points = count_exceedances(&sample, cfg.m, dominance)?;
                Ok(ClusterRecord {
                    replicate: r,
                    n,
                    extent,
                    dominant,
                    attempts: sample.attempts,
                    method: if sample.member { method.as_str() } else { "planted_miss" },
                    large_points,
                })
            })
            .collect();
        let mut records = Vec::with_capacity(outcomes.len());
        let mut failed = 0usize;
        for o in outcomes {
            match o {
                Ok(r) => records.push(r),
                Err(Error::AcceptanceTooRare { .. }) => failed += 1,
                Err(e) => return Err(e),
            }
        }
        sink.push("failed_replicates", failed as f64, None, None);
        sink.push("lag_K", self.spec.lag() as f64, None, None);
        if records.is_empty() {
            return Err(Error::AcceptanceTooRare {
                attempts: cfg.max_attempts * cfg.replicates,
                accepted: 0,
                estimate: conditioner.acceptance_estimate(),
            });
        }
        let total = records.len();
        let attempts: u64 = records.iter().map(|r| r.attempts).sum();
        sink.push("acceptance_estimate", conditioner.acceptance_estimate(), None, None);
        if method == Method::Rejection {
            let p = total as f64 / attempts as f64;
            sink.push("acceptance_rate", p, Some((p * (1.0 - p) / attempts as f64).sqrt()), None);
        } else {
            let misses = records.iter().filter(|r| r.method == "planted_miss").count();
            let (p, se) = proportion(misses, total);
            sink.push("planted_membership_failure", p, Some(se), None);
        }
        let censored = records.iter().filter(|r| r.censored()).count();
        sink.push("censored", censored as f64, None, None);

        match self.cfg.experiment {
            ExperimentKind::ClusterLaw => self.cluster_rows(sink, &records)?,
            _ => self.point_rows(sink, &records)?,
        }
        Ok(records)
    }

    fn cluster_rows(&self, sink: &mut RowSink, records: &[ClusterRecord]) -> Result<()> {
        let nf = self.n as f64;
        let full: Vec<&ClusterRecord> = records.iter().filter(|r| !r.extent.gamma.censored()).collect();
        let jplus: Vec<f64> = full.iter().map(|r| r.extent.gamma.plus.unwrap() as f64 / nf).collect();
        if jplus.len() >= crate::stat_tests::KS_MIN_SAMPLES {
            let ks = ks_one_sample(&jplus, uniform_cdf)?;
            sink.push("ks_jplus_uniform", ks.statistic, None, Some(ks.p_value));
        }
        if !full.is_empty() {
            let spans: Vec<f64> = full
                .iter()
                .map(|r| (r.extent.gamma.plus.unwrap() - r.extent.gamma.minus.unwrap()) as f64 / nf)
                .collect();
            let (mean, se, var) = mean_and_se(&spans);
            sink.push("mean_span", mean, Some(se), None);
            sink.push("var_span", var, None, None);
            let (mj, sej, _) = mean_and_se(&jplus);
            sink.push("mean_jplus", mj, Some(sej), None);
        }
        let mu = mu_overlap(self.spec.noise(), self.spec.aggregate(), self.gamma, self.psi)?.mu;
        sink.push("mu_psi", mu, None, None);
        let psi_known: Vec<&ClusterRecord> = records.iter().filter(|r| r.extent.psi.plus.is_some()).collect();
        if !psi_known.is_empty() {
            let zeros = psi_known.iter().filter(|r| r.extent.psi.plus == Some(0)).count();
            let (frac, se) = proportion(zeros, psi_known.len());
            sink.push("atom_fraction_psi", frac, Some(se), None);
            sink.push("atom_fraction_gap", (frac - (1.0 - mu)).abs(), Some(se), None);
        }
        Ok(())
    }

    fn point_rows(&self, sink: &mut RowSink, records: &[ClusterRecord]) -> Result<()> {
        let total = records.len();
        let locations: Vec<f64> = records.iter().map(|r| r.dominant.location).collect();
        if total >= crate::stat_tests::KS_MIN_SAMPLES {
            let ks = ks_one_sample(&locations, uniform_cdf)?;
            sink.push("ks_location_uniform", ks.statistic, None, Some(ks.p_value));
            let magnitudes: Vec<f64> = records.iter().map(|r| norm(&r.dominant.value)).collect();
            let cdf = magnitude_cdf(self.spec, self.gamma)?;
            let ks = ks_one_sample(&magnitudes, cdf)?;
            sink.push("ks_magnitude", ks.statistic, None, Some(ks.p_value));
        }
        let single = records.iter().filter(|r| r.large_points == 1).count();
        let (p, se) = proportion(single, total);
        sink.push("single_jump_fraction", p, Some(se), None);
        let outside = records.iter().filter(|r| !self.gamma.contains(&r.dominant.value)).count();
        let (p, se) = proportion(outside, total);
        sink.push("argmax_outside_gamma", p, Some(se), None);
        Ok(())
    }

    fn equivalents(&self, sink: &mut RowSink) -> Result<()> {
        let cfg = self.cfg;
        let delta = cfg.delta_for(self.gamma);
        let r = estimate_equivalents(
            self.spec,
            self.gamma,
            self.n,
            cfg.index_set.build(),
            cfg.m,
            delta,
            cfg.replicates,
            &self.streams,
        )?;
        for (k, q) in r.q.iter().enumerate() {
            sink.push(&format!("q{}", k + 1), q.value, Some(q.std_error), None);
        }
        for (k, q) in r.ratios.iter().enumerate() {
            sink.push(&format!("ratio_q{}", k + 2), q.value, Some(q.std_error), None);
        }
        sink.push("q3_mc", r.q3_mc.value, Some(r.q3_mc.std_error), None);
        sink.push("index_len", r.index_len as f64, None, None);
        sink.push("delta", delta, None, None);
        sink.push("M", cfg.m, None, None);
        Ok(())
    }

    fn symmetric_difference(&self, sink: &mut RowSink) -> Result<()> {
        let r = symmetric_difference_ratio(
            self.spec,
            self.gamma,
            self.n,
            self.cfg.theta,
            self.cfg.replicates,
            &self.streams,
        )?;
        sink.push("sym_diff_ratio", r.value, Some(r.std_error), None);
        sink.push("theta", self.cfg.theta, None, None);
        sink.push(
            "single_jump_probability",
            single_jump_probability(self.spec, self.gamma, self.n),
            None,
            None,
        );
        Ok(())
    }

    fn two_jump(&self, sink: &mut RowSink) -> Result<()> {
        let delta = self.cfg.delta_for(self.gamma);
        let r = two_jump_ratio(
            self.spec,
            self.gamma,
            self.n,
            self.cfg.m,
            delta,
            self.cfg.replicates,
            &self.streams,
        )?;
        sink.push("two_jump_ratio", r.ratio.value, Some(r.ratio.std_error), None);
        sink.push("two_jump_numerator", r.numerator, None, None);
        sink.push("window_probability", r.denominator.value, Some(r.denominator.std_error), None);
        sink.push("delta", delta, None, None);
        Ok(())
    }

    /// Sums of `m = n` independent uniforms on `[-c, c]` against the
    /// Prokhorov bound at `t = t_sd * sd(sum)`.
    fn concentration(&self, sink: &mut RowSink) -> Result<()> {
        let c = self.cfg.concentration.c;
        let m = self.n;
        let total_var = m as f64 * c * c / 3.0;
        let t = self.cfg.concentration.t_sd * total_var.sqrt();
        let bound = prokhorov_bound(c, t, total_var)?;
        let hits: u64 = (0..self.cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = self.streams.stream(r);
                let s: f64 = (0..m).map(|_| rng.random_range(-c..=c)).sum();
                (s > t) as u64
            })
            .sum();
        let p = hits as f64 / self.cfg.replicates as f64;
        sink.push(
            "empirical_tail",
            p,
            Some((p * (1.0 - p) / self.cfg.replicates as f64).sqrt()),
            None,
        );
        sink.push("prokhorov_raw", bound.raw, None, None);
        sink.push("prokhorov_clamped", bound.clamped, None, None);
        sink.push("violations", (p > bound.clamped) as u64 as f64, None, None);
        Ok(())
    }
}

/// CDF of `|X|` for the limiting dominant-point magnitude
/// `P(X ∈ ·) = nu(A^{-1}(Γ ∩ ·)) / nu(A^{-1} Γ)`.
pub fn magnitude_cdf(spec: &ModelSpec, gamma: &FailureSet) -> Result<impl Fn(f64) -> f64> {
    let aggregate = spec.aggregate().clone();
    let noise = spec.noise().clone();
    let gamma = gamma.clone();
    let base = TailSetQuery::new(gamma.clone(), aggregate.clone())?;
    let den = tail_measure(&noise, &base)?.estimate;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    let d = spec.dim();
    Ok(move |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let ball = FailureSet::ball_complement(vec![0.0; d], x).expect("positive radius");
        let q = base.clone().intersect(ball).expect("same dimension");
        let num = tail_measure(&noise, &q).map(|t| t.estimate).unwrap_or(0.0);
        (1.0 - num / den).clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const RC1: &str = r#"
experiment = "cluster_law"
n_list = [100]
replicates = 50
master_seed = 3
record_runtime = false

[model.coeffs]
kind = "geometric"
B = [[1.0]]
rho = 0.5

[model.noise]
alpha = 1.5
xm = 1.0
spectral.atoms = [[[1.0], 1.0]]

[gamma]
kind = "half_space"
w = [1.0]
c = 1.2

[psi]
kind = "half_space"
w = [1.0]
c = 2.4
"#;

    #[test]
    fn parses_defaults() {
        let cfg = ExperimentConfig::from_toml(RC1).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::ClusterLaw);
        assert_eq!(cfg.m, 2.0);
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.index_set, IndexSetConfig::Full);
        let gamma = cfg.gamma.build().unwrap();
        assert!((cfg.delta_for(&gamma) - 0.12).abs() < 1e-15);
    }

    #[test]
    fn index_set_forms() {
        let with_frac = format!("index_set = {{ fraction = 0.5 }}\n{RC1}");
        let cfg = ExperimentConfig::from_toml(&with_frac).unwrap();
        assert_eq!(cfg.index_set, IndexSetConfig::Fraction { fraction: 0.5 });
        let with_full = format!("index_set = \"full\"\n{RC1}");
        assert_eq!(ExperimentConfig::from_toml(&with_full).unwrap().index_set, IndexSetConfig::Full);
    }

    #[test]
    fn config_errors_name_fields() {
        let bad = RC1.replace("n_list = [100]", "n_list = []");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n_list"),
            other => panic!("{other:?}"),
        }
        let bad = RC1.replace("rho = 0.5", "rho = 1.5");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config { field, .. }) if field == "model"));
        let missing = RC1.replace("experiment = \"cluster_law\"", "");
        assert!(matches!(ExperimentConfig::from_toml(&missing), Err(Error::Config { .. })));
        let unknown = RC1.replace("experiment = \"cluster_law\"", "experiment = \"nope\"");
        assert!(ExperimentConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_outputs() {
        let a = ExperimentConfig::from_toml(RC1).unwrap();
        let mut b = a.clone();
        b.workers = 8;
        b.output_path = Some("x.csv".into());
        assert_eq!(a.hash(), b.hash());
        b.master_seed = 4;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn cluster_law_rows() {
        let cfg = ExperimentConfig::from_toml(RC1).unwrap();
        let rows = run_experiment(&cfg).unwrap();
        let stats: Vec<&str> = rows.iter().map(|r| r.stat.as_str()).collect();
        for s in ["ks_jplus_uniform", "mean_span", "atom_fraction_psi", "mu_psi", "censored"] {
            assert!(stats.contains(&s), "missing {s}");
        }
        let mu = rows.iter().find(|r| r.stat == "mu_psi").unwrap().value;
        assert!((mu - 2f64.powf(-1.5)).abs() < 1e-12);
        assert!(rows.windows(2).all(|w| (&w[0].experiment, w[0].n, &w[0].stat) <= (&w[1].experiment, w[1].n, &w[1].stat)));
    }

    #[test]
    fn equivalents_rows() {
        let text = RC1.replace("experiment = \"cluster_law\"", "experiment = \"equivalents\"");
        let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
        cfg.n_list = vec![50, 100];
        cfg.replicates = 200;
        let rows = run_experiment(&cfg).unwrap();
        for n in [50, 100] {
            for s in ["q1", "q2", "q3", "q4", "q5", "ratio_q2", "ratio_q3", "ratio_q4", "ratio_q5"] {
                assert!(rows.iter().any(|r| r.n == n && r.stat == s), "missing {s} at {n}");
            }
        }
    }

    #[test]
    fn magnitude_cdf_is_pareto_in_one_dimension() {
        let cfg = ExperimentConfig::from_toml(RC1).unwrap();
        let spec = cfg.model.build().unwrap();
        let gamma = cfg.gamma.build().unwrap();
        let f = magnitude_cdf(&spec, &gamma).unwrap();
        for x in [1.2, 1.5, 3.0, 10.0] {
            assert!((f(x) - (1.0 - (1.2f64 / x).powf(1.5))).abs() < 1e-12);
        }
        assert_eq!(f(1.0), 0.0);
    }

    #[test]
    fn threshold_rules() {
        let row = ResultRow {
            experiment: "point_process".into(),
            n: 400,
            stat: "ks_location_uniform".into(),
            value: 0.05,
            err: None,
            pvalue: Some(0.003),
            seed: 0,
            runtime_ms: 0,
            config_hash: String::new(),
        };
        let t = default_thresholds(ExperimentKind::PointProcess);
        assert!(!t["ks_location_uniform"].check(&row));
        let ok = ResultRow {
            pvalue: Some(0.2),
            ..row
        };
        assert!(t["ks_location_uniform"].check(&ok));
    }
}
