use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{run_check, ExperimentConfig, TrialRecord, Variant};
use crate::conditions::{check_intersection_condition, check_undercomplete_condition, ConditionReport};
use crate::data::{generate_dataset, Dataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::estimation::train;
use crate::evaluation::mcc;
use crate::flow::{rotated_gaussian_mpa, CouplingFlow, Gaussianizer};
use crate::linalg::{derived_seed, gaussian_matrix, random_rotation, seeded_rng};
use crate::linear::{recover_linear_gaussian, signed_perm_distance, RotationSearchConfig};
use crate::mixing::Mixing;
use crate::prior::GaussianPrior;
use crate::registry::{Named, Registry};
use crate::stats::ks_two_sample;
use crate::support::function_support;

// Streams 0 and 1 of a trial seed belong to the data generator.
const FLOW_STREAM: u64 = 2;
const AUDIT_STREAM: u64 = 3;
const FRESH_SOURCE_STREAM: u64 = 4;

/// Rotations closer than this (Frobenius) to the identity are redrawn.
const IDENTITY_GUARD: f64 = 0.1;

/// Files a trial writes besides its record.
#[derive(Debug, Clone, Default)]
pub struct TrialArtifacts {
    pub meta: serde_json::Value,
    pub history_csv: Option<String>,
}

pub struct TrialOutcome {
    pub trials: Vec<TrialRecord>,
    pub conditions: Vec<ConditionReport>,
    pub artifacts: Vec<TrialArtifacts>,
}

impl TrialOutcome {
    fn from_pairs(pairs: Vec<(TrialRecord, TrialArtifacts)>, conditions: Vec<ConditionReport>) -> Self {
        let (trials, artifacts) = pairs.into_iter().unzip();
        Self {
            trials,
            conditions,
            artifacts,
        }
    }
}

pub trait Experiment: Named + Send + Sync {
    /// What the per-trial value measures.
    fn metric(&self) -> &'static str;
    fn validate(&self, config: &ExperimentConfig) -> Result<()>;
    fn expected_trials(&self, config: &ExperimentConfig) -> usize;
    fn run(&self, config: &ExperimentConfig) -> Result<TrialOutcome>;
}

pub fn experiments() -> &'static Registry<dyn Experiment> {
    static REG: OnceLock<Registry<dyn Experiment>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn Experiment> = Registry::new("experiment");
        r.register(Arc::new(Ablation))
            .register(Arc::new(Stability))
            .register(Arc::new(LinearRecoveryStudy))
            .register(Arc::new(MpaAudit))
            .register(Arc::new(Check));
        r
    })
}

/// Runs `f` over trial indices in parallel; results come back in index order.
fn par_trials<T: Send>(count: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..count).into_par_iter().map(f).collect()
}

fn square_only(config: &ExperimentConfig) -> Result<()> {
    if config.m.iter().any(|m| !config.n.contains(m)) || config.data.m.is_some() {
        return Err(Error::Invalid("flow experiments need m = n".into()));
    }
    Ok(())
}

fn check_mask_width(config: &ExperimentConfig) -> Result<()> {
    if let Some(mask) = &config.data.mask {
        if config.n.iter().any(|&n| n != mask.cols()) {
            return Err(Error::Invalid(format!("data.mask has {} columns but n = {:?}", mask.cols(), config.n)));
        }
    }
    Ok(())
}

fn validate_flow_study(config: &ExperimentConfig) -> Result<()> {
    square_only(config)?;
    check_mask_width(config)?;
    let t = &config.train;
    if t.batch_size == 0 || t.batch_size > config.data.k {
        return Err(Error::Invalid(format!("batch size {} must be in 1..={}", t.batch_size, config.data.k)));
    }
    if !(t.lambda >= 0.0) || !(t.learning_rate > 0.0) {
        return Err(Error::Invalid("lambda must be >= 0 and the learning rate > 0".into()));
    }
    if config.flow.layers == 0 || config.flow.hidden == 0 {
        return Err(Error::Invalid("flow needs at least one layer and one hidden unit".into()));
    }
    Ok(())
}

fn run_flow_study(config: &ExperimentConfig) -> TrialOutcome {
    let mut jobs = Vec::new();
    for &variant in &config.variants {
        for &n in &config.n {
            jobs.extend((0..config.trials).map(|t| (variant, n, t)));
        }
    }
    let pairs = par_trials(jobs.len(), |i| {
        let (variant, n, trial) = jobs[i];
        flow_trial(config, variant, n, trial)
    });
    TrialOutcome::from_pairs(pairs, Vec::new())
}

/// One estimator fit; failures are recorded in the returned record.
pub(crate) fn flow_trial(config: &ExperimentConfig, variant: Variant, n: usize, trial: usize) -> (TrialRecord, TrialArtifacts) {
    let seed = config.seed + trial as u64;
    let mut rec = TrialRecord::new(variant.label(), n, n, trial, seed);
    let mut art = TrialArtifacts::default();
    if let Err(e) = fit_and_score(config, variant, n, &mut rec, &mut art) {
        rec.value = None;
        rec.error = Some(e.to_string());
    }
    (rec, art)
}

fn fit_and_score(
    config: &ExperimentConfig,
    variant: Variant,
    n: usize,
    rec: &mut TrialRecord,
    art: &mut TrialArtifacts,
) -> Result<()> {
    let seed = rec.seed;
    let data_config = GeneratorConfig {
        n,
        m: None,
        ..config.data.clone()
    };
    let d = generate_dataset(variant.generator(), &data_config, seed)?;
    if let Some(mask) = &d.mask {
        rec.conditions.push(check_intersection_condition(mask.pattern()));
    }
    art.meta = serde_json::json!({
        "generator": d.generator,
        "variances": d.variances,
        "mask": d.mask,
    });

    let mut rng = seeded_rng(derived_seed(seed, FLOW_STREAM));
    let f = &config.flow;
    let flow = CouplingFlow::random(n, f.layers, f.hidden, variant.flow_mode(), f.init_scale, &mut rng)?;
    let fitted = train(flow, GaussianPrior::standard(n), &d.observations, &variant.train_config(&config.train, seed))?;
    art.history_csv = Some(fitted.history.to_csv()?);
    if let Some(last) = fitted.history.last() {
        rec.metrics.insert("loglik".into(), last.loglik);
        rec.metrics.insert("reg".into(), last.reg);
        rec.metrics.insert("objective".into(), last.objective);
    }
    if let Some(epoch) = fitted.diverged_at {
        rec.diverged_at = Some(epoch);
        return Ok(());
    }
    let estimates = fitted.flow.inverse_rows(&d.observations)?;
    let report = mcc(&d.sources, &estimates, config.correlation)?;
    rec.value = Some(report.mcc);
    rec.eval = Some(report);
    Ok(())
}

struct Ablation;

impl Named for Ablation {
    fn name(&self) -> &'static str {
        "ablation"
    }
}

impl Experiment for Ablation {
    fn metric(&self) -> &'static str {
        "mcc"
    }
    fn validate(&self, config: &ExperimentConfig) -> Result<()> {
        validate_flow_study(config)
    }
    fn expected_trials(&self, config: &ExperimentConfig) -> usize {
        config.variants.len() * config.n.len() * config.trials
    }
    fn run(&self, config: &ExperimentConfig) -> Result<TrialOutcome> {
        Ok(run_flow_study(config))
    }
}

/// The ablation repeated over several `n`, read as MCC-vs-`n` series.
struct Stability;

impl Named for Stability {
    fn name(&self) -> &'static str {
        "stability"
    }
}

impl Experiment for Stability {
    fn metric(&self) -> &'static str {
        "mcc"
    }
    fn validate(&self, config: &ExperimentConfig) -> Result<()> {
        let mut sorted = config.n.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != config.n.len() {
            return Err(Error::Invalid(format!("duplicate values in n list {:?}", config.n)));
        }
        if sorted.len() < 2 {
            return Err(Error::Invalid("stability needs at least two values of n".into()));
        }
        validate_flow_study(config)
    }
    fn expected_trials(&self, config: &ExperimentConfig) -> usize {
        config.variants.len() * config.n.len() * config.trials
    }
    fn run(&self, config: &ExperimentConfig) -> Result<TrialOutcome> {
        Ok(run_flow_study(config))
    }
}

/// The true mixing matrix of a linear dataset.
fn linear_truth(d: &Dataset) -> Result<DMatrix<f64>> {
    let truth = d.truth.as_ref().ok_or_else(|| Error::Invalid("dataset carries no ground truth".into()))?;
    truth.jacobian(&DVector::zeros(d.n()))
}

/// Sparsest-rotation recovery on sparse linear Gaussian data.
struct LinearRecoveryStudy;

impl Named for LinearRecoveryStudy {
    fn name(&self) -> &'static str {
        "linear"
    }
}

impl Experiment for LinearRecoveryStudy {
    fn metric(&self) -> &'static str {
        "signed_perm_distance"
    }
    fn validate(&self, config: &ExperimentConfig) -> Result<()> {
        check_mask_width(config)?;
        if config.groups().iter().any(|&(n, m)| m < n) {
            return Err(Error::Invalid("linear recovery needs m >= n".into()));
        }
        Ok(())
    }
    fn expected_trials(&self, config: &ExperimentConfig) -> usize {
        config.groups().len() * config.trials
    }
    fn run(&self, config: &ExperimentConfig) -> Result<TrialOutcome> {
        let jobs: Vec<(usize, usize, usize)> = config
            .groups()
            .into_iter()
            .flat_map(|(n, m)| (0..config.trials).map(move |t| (n, m, t)))
            .collect();
        let pairs = par_trials(jobs.len(), |i| {
            let (n, m, trial) = jobs[i];
            let seed = config.seed + trial as u64;
            let mut rec = TrialRecord::new("linear", n, m, trial, seed);
            let mut art = TrialArtifacts::default();
            if let Err(e) = linear_trial(config, &mut rec, &mut art) {
                rec.error = Some(e.to_string());
            }
            (rec, art)
        });
        Ok(TrialOutcome::from_pairs(pairs, Vec::new()))
    }
}

fn linear_trial(config: &ExperimentConfig, rec: &mut TrialRecord, art: &mut TrialArtifacts) -> Result<()> {
    let data_config = GeneratorConfig {
        n: rec.n,
        m: Some(rec.m),
        ..config.data.clone()
    };
    let d = generate_dataset("linear", &data_config, rec.seed)?;
    if let Some(mask) = &d.mask {
        rec.conditions.push(check_intersection_condition(mask.pattern()));
        rec.conditions.push(check_undercomplete_condition(mask.pattern())?);
    }
    let truth = linear_truth(&d)?;
    let search = RotationSearchConfig {
        seed: rec.seed,
        ..config.rotation_search.clone()
    };
    let recovered = recover_linear_gaussian(&d.observations, rec.n, &search)?;
    rec.value = Some(signed_perm_distance(&recovered.mixing.matrix, &truth)?);
    rec.metrics.insert("l0".into(), recovered.search.l0 as f64);
    rec.metrics.insert("objective".into(), recovered.search.objective);
    art.meta = serde_json::json!({
        "mask": d.mask,
        "truth": truth.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "estimate": recovered.mixing.matrix.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    Ok(())
}

/// Whether rotated-Gaussian MPAs of a structure are strictly denser than
/// the structure itself, and observationally equivalent to it.
struct MpaAudit;

impl Named for MpaAudit {
    fn name(&self) -> &'static str {
        "mpa-audit"
    }
}

impl Experiment for MpaAudit {
    fn metric(&self) -> &'static str {
        "denser"
    }
    fn validate(&self, config: &ExperimentConfig) -> Result<()> {
        check_mask_width(config)?;
        if config.audit_points == 0 {
            return Err(Error::Invalid("audit_points must be positive".into()));
        }
        if config.groups().iter().any(|&(n, m)| m < n) {
            return Err(Error::Invalid("the audit needs m >= n".into()));
        }
        crate::data::generators().get(&config.audit_generator)?;
        Ok(())
    }
    fn expected_trials(&self, config: &ExperimentConfig) -> usize {
        config.groups().len() * config.trials
    }
    fn run(&self, config: &ExperimentConfig) -> Result<TrialOutcome> {
        let mut pairs = Vec::new();
        let mut conditions = Vec::new();
        for (n, m) in config.groups() {
            let data_config = GeneratorConfig {
                n,
                m: Some(m),
                ..config.data.clone()
            };
            let d = generate_dataset(&config.audit_generator, &data_config, config.seed)?;
            let truth = d.truth.clone().ok_or_else(|| Error::Invalid("dataset carries no ground truth".into()))?;
            let points: Vec<DVector<f64>> = (0..config.audit_points.min(d.k()))
                .map(|r| d.sources.row(r).transpose())
                .collect();
            let support = function_support(|s| truth.jacobian(s), &points, config.support_tol)?;
            let mut report = check_undercomplete_condition(&support)?;
            report.notes.push(format!("support of the {} truth over {} points, {n}x{m}", d.generator, points.len()));
            conditions.push(report);
            let base_l0 = support.len();
            let gaussianizer = Gaussianizer::from_moments(&vec![0.0; n], &d.variances)?;
            pairs.extend(par_trials(config.trials, |trial| {
                let seed = config.seed + trial as u64;
                let mut rec = TrialRecord::new("mpa", n, m, trial, seed);
                rec.metrics.insert("l0_truth".into(), base_l0 as f64);
                if let Err(e) = audit_trial(config, &d, truth.as_ref(), &gaussianizer, &points, &mut rec) {
                    rec.error = Some(e.to_string());
                }
                (rec, TrialArtifacts::default())
            }));
        }
        Ok(TrialOutcome::from_pairs(pairs, conditions))
    }
}

fn audit_trial(
    config: &ExperimentConfig,
    d: &Dataset,
    truth: &dyn Mixing,
    gaussianizer: &Gaussianizer,
    points: &[DVector<f64>],
    rec: &mut TrialRecord,
) -> Result<()> {
    let n = rec.n;
    let mut rng = seeded_rng(derived_seed(rec.seed, AUDIT_STREAM));
    let identity = DMatrix::<f64>::identity(n, n);
    let rotation = loop {
        let u = random_rotation(n, &mut rng);
        if (&u - &identity).norm() >= IDENTITY_GUARD {
            break u;
        }
    };
    let mpa = rotated_gaussian_mpa(truth, rotation, gaussianizer.clone())?;
    let l0 = function_support(|s| mpa.jacobian(s), points, config.support_tol)?.len();
    rec.metrics.insert("l0_mpa".into(), l0 as f64);

    // Equal in distribution: compare observations against the MPA applied to
    // an independent draw of the same sources.
    let mut fresh = gaussian_matrix(d.k(), n, &mut seeded_rng(derived_seed(rec.seed, FRESH_SOURCE_STREAM)));
    for (j, v) in d.variances.iter().enumerate() {
        fresh.column_mut(j).scale_mut(v.sqrt());
    }
    let moved = mpa.eval_rows(&fresh)?;
    let ks = (0..rec.m)
        .map(|i| {
            let a: Vec<f64> = d.observations.column(i).iter().copied().collect();
            let b: Vec<f64> = moved.column(i).iter().copied().collect();
            ks_two_sample(&a, &b)
        })
        .fold(0.0, f64::max);
    rec.metrics.insert("ks_max".into(), ks);
    let truth_l0 = rec.metrics["l0_truth"];
    rec.value = Some(if l0 as f64 > truth_l0 { 1.0 } else { 0.0 });
    Ok(())
}

/// Condition reports for a mask file or dataset directory.
struct Check;

impl Named for Check {
    fn name(&self) -> &'static str {
        "check"
    }
}

impl Experiment for Check {
    fn metric(&self) -> &'static str {
        "none"
    }
    fn validate(&self, config: &ExperimentConfig) -> Result<()> {
        if config.input.is_none() {
            return Err(Error::Invalid("check needs an input path".into()));
        }
        Ok(())
    }
    fn expected_trials(&self, _config: &ExperimentConfig) -> usize {
        0
    }
    fn run(&self, config: &ExperimentConfig) -> Result<TrialOutcome> {
        let path = config.input.as_ref().ok_or_else(|| Error::Invalid("check needs an input path".into()))?;
        Ok(TrialOutcome {
            trials: Vec::new(),
            conditions: run_check(path)?,
            artifacts: Vec::new(),
        })
    }
}
