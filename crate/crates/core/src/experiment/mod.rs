//! Batch experiments: configuration, per-trial records, summaries and the
//! on-disk layout `<out>/<experiment>/<variant>/trial-<k>/`.

mod check;
mod runs;

pub use check::{parse_mask_text, read_mask, run_check};
pub use runs::{experiments, Experiment, TrialArtifacts, TrialOutcome};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditions::ConditionReport;
use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::estimation::TrainConfig;
use crate::evaluation::{CorrelationMethod, EvalReport};
use crate::flow::FlowMode;
use crate::linear::RotationSearchConfig;
use crate::stats::mean_std;
use crate::support::Tolerance;

/// JSON Schema for [`ExperimentConfig`] documents.
pub const CONFIG_SCHEMA: &str = include_str!("../../schema/experiment-config.schema.json");

/// Estimator families compared in the ablation and stability studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Structural sparsity: general flow with the L1 Jacobian penalty.
    #[serde(rename = "SS")]
    Ss,
    /// Independent influence: volume-preserving flow with the orthogonality penalty.
    #[serde(rename = "II")]
    Ii,
    /// Volume-preserving flow, no penalty.
    #[serde(rename = "VP")]
    Vp,
    /// General flow, no penalty.
    Base,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ss, Variant::Ii, Variant::Vp, Variant::Base];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ss => "SS",
            Variant::Ii => "II",
            Variant::Vp => "VP",
            Variant::Base => "Base",
        }
    }

    /// Name of the generator whose assumptions the variant encodes.
    pub fn generator(self) -> &'static str {
        match self {
            Variant::Ss => "ss",
            Variant::Ii => "ii",
            Variant::Vp => "vp",
            Variant::Base => "base",
        }
    }

    pub fn flow_mode(self) -> FlowMode {
        match self {
            Variant::Ss | Variant::Base => FlowMode::General,
            Variant::Ii | Variant::Vp => FlowMode::VolumePreserving,
        }
    }

    pub fn regularizer(self) -> &'static str {
        match self {
            Variant::Ss => "l1-jacobian",
            Variant::Ii => "orthogonality",
            Variant::Vp | Variant::Base => "none",
        }
    }

    /// Whether the prior variances are trained. A general flow under the L1
    /// penalty can shrink its Jacobian for free by shrinking the prior, so
    /// SS keeps the prior fixed at unit variance.
    pub fn learns_prior(self) -> bool {
        self != Variant::Ss
    }

    pub fn train_config(self, t: &TrainSettings, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lambda: t.lambda,
            regularizer: self.regularizer().into(),
            seed,
            learn_prior: self.learns_prior(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "variant",
                name: s.to_string(),
                available: "SS, II, VP, Base".into(),
            })
    }
}

/// Optimizer settings shared by all variants; the regularizer and prior
/// handling follow from the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 1000,
            epochs: 60,
            lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    pub layers: usize,
    pub hidden: usize,
    /// Output scale of the freshly initialized subnetworks.
    pub init_scale: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            layers: 8,
            hidden: 32,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Name in [`experiments`].
    pub experiment: String,
    pub variants: Vec<Variant>,
    pub n: Vec<usize>,
    /// Observed dimensions for the linear and audit experiments; empty means `m = n`.
    pub m: Vec<usize>,
    pub trials: usize,
    /// Trial `t` runs with seed `seed + t`.
    pub seed: u64,
    pub train: TrainSettings,
    pub flow: FlowSettings,
    /// Generator settings; `n` and `m` are overridden per group.
    pub data: GeneratorConfig,
    pub correlation: CorrelationMethod,
    pub rotation_search: RotationSearchConfig,
    /// Generator of the structures audited against rotated-Gaussian MPAs.
    pub audit_generator: String,
    /// Jacobian support threshold of the audit.
    pub support_tol: Tolerance,
    /// Points at which audit Jacobians are sampled.
    pub audit_points: usize,
    /// Mask file or dataset directory for `check`.
    pub input: Option<PathBuf>,
    /// Not part of the config hash.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "ablation".into(),
            variants: Variant::ALL.to_vec(),
            n: vec![5],
            m: Vec::new(),
            trials: 10,
            seed: 0,
            train: TrainSettings::default(),
            flow: FlowSettings::default(),
            data: GeneratorConfig::default(),
            correlation: CorrelationMethod::Pearson,
            rotation_search: RotationSearchConfig::default(),
            audit_generator: "linear".into(),
            support_tol: Tolerance::Relative(1e-6),
            audit_points: 64,
            input: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Checks the invariants shared by all experiments, then the
    /// experiment's own.
    pub fn validate(&self) -> Result<()> {
        let experiment = experiments().get(&self.experiment)?;
        if self.trials == 0 {
            return Err(Error::Invalid("trials must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Invalid("variant list is empty".into()));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return Err(Error::Invalid(format!("n list must be nonempty with n >= 2, got {:?}", self.n)));
        }
        if self.data.k == 0 {
            return Err(Error::Invalid("data.k must be positive".into()));
        }
        experiment.validate(self)
    }

    /// SHA-256 of the canonical JSON form: object keys sorted, defaults
    /// filled in and the output directory dropped.
    pub fn hash(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.output = None;
        let value = serde_json::to_value(&copy)?;
        let digest = Sha256::digest(serde_json::to_string(&value)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// `(n, m)` pairs in run order.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.n {
            if self.m.is_empty() {
                out.push((n, n));
            } else {
                out.extend(self.m.iter().map(|&m| (n, m)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Variant label, or the experiment's single series name.
    pub variant: String,
    pub n: usize,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    /// The experiment's headline metric; `None` when the trial failed or diverged.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn new(variant: impl Into<String>, n: usize, m: usize, trial: usize, seed: u64) -> Self {
        Self {
            variant: variant.into(),
            n,
            m,
            trial,
            seed,
            value: None,
            eval: None,
            conditions: Vec::new(),
            metrics: BTreeMap::new(),
            diverged_at: None,
            error: None,
        }
    }
}

/// Mean and population std of the metric over the completed trials of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub variant: String,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub completed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Groups trials by `(variant, n, m)` in first-appearance order.
pub fn summarize(trials: &[TrialRecord]) -> Vec<SummaryEntry> {
    let mut keys: Vec<(String, usize, usize)> = Vec::new();
    for t in trials {
        let key = (t.variant.clone(), t.n, t.m);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(variant, n, m)| {
            let group: Vec<&TrialRecord> = trials.iter().filter(|t| t.variant == variant && t.n == n && t.m == m).collect();
            let values: Vec<f64> = group.iter().filter_map(|t| t.value).collect();
            let (mean, std) = if values.is_empty() {
                (None, None)
            } else {
                let (mu, sd) = mean_std(&values);
                (Some(mu), Some(sd))
            };
            SummaryEntry {
                variant,
                n,
                m,
                trials: group.len(),
                completed: values.len(),
                mean,
                std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// What `TrialRecord::value` measures.
    pub metric: String,
    /// Structure-level reports, such as those of the audited masks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionReport>,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<SummaryEntry>,
}

impl RunRecord {
    /// Confirms the hash, the trial count and that the summary is exactly
    /// what the trials recompute to.
    pub fn verify(&self) -> Result<()> {
        let hash = self.config.hash()?;
        if hash != self.config_hash {
            return Err(Error::Invalid(format!("config hash {} does not match the config ({hash})", self.config_hash)));
        }
        let expected = experiments().get(&self.experiment)?.expected_trials(&self.config);
        if self.trials.len() != expected {
            return Err(Error::Invalid(format!(
                "record holds {} trials, config implies {expected}",
                self.trials.len()
            )));
        }
        if summarize(&self.trials) != self.summary {
            return Err(Error::Invalid("summary differs from recomputation over trials".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let record: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        record.verify()?;
        Ok(record)
    }

    pub fn entry(&self, variant: &str, n: usize) -> Option<&SummaryEntry> {
        self.summary.iter().find(|e| e.variant == variant && e.n == n)
    }

    /// Mean metric of one variant against `n`, skipping groups without completed trials.
    pub fn series(&self, variant: &str) -> Vec<(usize, f64)> {
        self.summary
            .iter()
            .filter(|e| e.variant == variant)
            .filter_map(|e| e.mean.map(|mu| (e.n, mu)))
            .collect()
    }
}

/// Runs the configured experiment, with trials in parallel but reduced in
/// a fixed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(RunRecord, Vec<TrialArtifacts>)> {
    config.validate()?;
    let experiment = experiments().get(&config.experiment)?;
    let outcome = experiment.run(config)?;
    // where the record lands is not part of what it records
    let mut recorded = config.clone();
    recorded.output = None;
    let record = RunRecord {
        experiment: config.experiment.clone(),
        config_hash: config.hash()?,
        config: recorded,
        metric: experiment.metric().into(),
        conditions: outcome.conditions,
        summary: summarize(&outcome.trials),
        trials: outcome.trials,
    };
    Ok((record, outcome.artifacts))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Directory of one trial. Runs over several `(n, m)` groups nest an
/// `n<n>` (or `n<n>-m<m>`) level below the variant.
pub fn trial_dir(root: &Path, config: &ExperimentConfig, t: &TrialRecord) -> PathBuf {
    let mut dir = root.join(&config.experiment).join(&t.variant);
    if config.groups().len() > 1 {
        dir.push(if t.m == t.n { format!("n{}", t.n) } else { format!("n{}-m{}", t.n, t.m) });
    }
    dir.join(format!("trial-{}", t.trial))
}

/// Writes every trial directory and `<root>/<experiment>/summary.json`.
/// Returns the summary path.
pub fn write_outputs(root: &Path, record: &RunRecord, artifacts: &[TrialArtifacts]) -> Result<PathBuf> {
    for (t, art) in record.trials.iter().zip(artifacts) {
        let dir = trial_dir(root, &record.config, t);
        let meta = serde_json::json!({
            "experiment": record.experiment,
            "config_hash": record.config_hash,
            "variant": t.variant,
            "n": t.n,
            "m": t.m,
            "trial": t.trial,
            "seed": t.seed,
            "meta": art.meta,
        });
        write(&dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        write(&dir.join("eval.json"), serde_json::to_string_pretty(t)? + "\n")?;
        if let Some(history) = &art.history_csv {
            write(&dir.join("history.csv"), history)?;
        }
    }
    let path = root.join(&record.experiment).join("summary.json");
    write(&path, record.to_json()?)?;
    Ok(path)
}
