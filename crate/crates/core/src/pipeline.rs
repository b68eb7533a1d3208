//! End-to-end offline run: synthesize, epoch, balance, train, score.

use thiserror::Error;

use crate::balance::{smote_balance, BalanceError};
use crate::config::RunConfig;
use crate::convnet::{init_model, train, Model, NetError, TrainHistory};
use crate::epoching::{self, EpochError, EpochSet, RejectionReport, WindowSpec};
use crate::metrics::{class_metrics, confusion, ClassMetrics, ConfusionMatrix, MetricsError};
use crate::signal_model::Recording;
use crate::synth::{gen_recording, gen_scenario, Scenario, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Epoch(#[from] EpochError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub fn generate(cfg: &RunConfig) -> Result<(Scenario, Recording), PipelineError> {
    let scenario = gen_scenario(&cfg.scenario)?;
    let rec = gen_recording(&scenario.triggers, scenario.n_samples, &cfg.signal, cfg.signal_seed)?;
    Ok((scenario, rec))
}

#[derive(Debug, Clone)]
pub struct PreparedEpochs {
    /// Outlier-pruned, normalized epochs.
    pub epochs: EpochSet,
    pub extracted: usize,
    pub rejection: RejectionReport,
}

/// extract → reject outliers → normalize.
pub fn prepare_epochs(
    rec: &Recording,
    triggers: &[crate::TriggerEvent],
    cfg: &RunConfig,
) -> Result<PreparedEpochs, PipelineError> {
    let raw = epoching::extract_epochs(rec, triggers, &WindowSpec::default())?;
    let (kept, rejection) = epoching::reject_outliers(&raw, cfg.reject_low, cfg.reject_high)?;
    Ok(PreparedEpochs { epochs: epoching::normalize(&kept), extracted: raw.len(), rejection })
}

#[derive(Debug, Clone)]
pub struct Split {
    /// Balanced training set.
    pub train: EpochSet,
    pub train_unbalanced: EpochSet,
    pub val: EpochSet,
}

/// split → SMOTE on the training part only.
pub fn split_and_balance(epochs: &EpochSet, cfg: &RunConfig) -> Result<Split, PipelineError> {
    let (train_raw, val) = epoching::split_shuffle(epochs, cfg.train_frac, cfg.split_seed, cfg.split_mode)?;
    let train = smote_balance(&train_raw, &cfg.smote)?;
    Ok(Split { train, train_unbalanced: train_raw, val })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
    pub predicted: Vec<usize>,
}

pub fn evaluate(model: &Model, set: &EpochSet) -> Result<Evaluation, PipelineError> {
    let mut predicted = Vec::with_capacity(set.len());
    for e in &set.epochs {
        predicted.push(model.predict(&e.data)?.0.index());
    }
    let actual: Vec<usize> = set.epochs.iter().map(|e| e.label.index()).collect();
    let cm = confusion(&actual, &predicted)?;
    Ok(Evaluation { metrics: class_metrics(&cm)?, confusion: cm, predicted })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub recording: Recording,
    pub prepared: PreparedEpochs,
    pub split: Split,
    pub model: Model,
    pub history: TrainHistory,
    pub evaluation: Evaluation,
}

/// The whole offline pipeline under one configuration.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    let (scenario, recording) = generate(cfg)?;
    let prepared = prepare_epochs(&recording, &scenario.triggers, cfg)?;
    let split = split_and_balance(&prepared.epochs, cfg)?;
    let (model, history) = train_model(&split, cfg)?;
    let evaluation = evaluate(&model, &split.val)?;
    Ok(RunOutput { scenario, recording, prepared, split, model, history, evaluation })
}

pub fn train_model(split: &Split, cfg: &RunConfig) -> Result<(Model, TrainHistory), PipelineError> {
    let model = init_model(cfg.arch, cfg.init_seed)?;
    Ok(train(&model, &split.train, &split.val, &cfg.train)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::Architecture;

    #[test]
    fn short_run_is_wired_through() {
        let mut cfg = RunConfig::default();
        cfg.scenario.n_segments = 20;
        cfg.train.epochs = 1;
        cfg.arch = Architecture { conv1_out: 2, conv2_out: 2, ..Architecture::default() };
        let out = run(&cfg).unwrap();
        assert_eq!(out.prepared.extracted, 40);
        let counts = out.split.train.class_counts();
        assert!(counts[0] == counts[1] && counts[1] == counts[2]);
        assert_eq!(out.evaluation.confusion.total() as usize, out.split.val.len());
        assert_eq!(out.history.rows.len(), 1);
    }
}
