//! Plain `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so typos do not silently fall back to defaults.

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::balance::SmoteConfig;
use crate::convnet::{Activation, Architecture, IterationMode, TrainConfig};
use crate::epoching::SplitMode;
use crate::synth::{ScenarioConfig, SignalConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value {value:?} for {key}")]
    BadValue { line: usize, key: String, value: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
    #[error("cannot read config file")]
    Io(#[from] std::io::Error),
}

/// Every knob of a generate → train → evaluate run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub signal: SignalConfig,
    /// Seed of the recording synthesis.
    pub signal_seed: u64,
    pub reject_low: f64,
    pub reject_high: f64,
    pub train_frac: f64,
    pub split_mode: SplitMode,
    pub split_seed: u64,
    pub smote: SmoteConfig,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub init_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            signal: SignalConfig::default(),
            signal_seed: 11,
            reject_low: 10.0,
            reject_high: 90.0,
            train_frac: 0.7,
            split_mode: SplitMode::Grouped,
            split_seed: 13,
            smote: SmoteConfig { k_neighbors: 5, seed: 17 },
            arch: Architecture::default(),
            train: TrainConfig { seed: 19, ..TrainConfig::default() },
            init_seed: 23,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { line, key: key.to_string(), value: value.to_string() })
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue { line, key: key.to_string(), value: value.to_string() };
        match key {
            "scenario.n_segments" => self.scenario.n_segments = parse(line, key, value)?,
            "scenario.mix_straight" => self.scenario.class_mix[0] = parse(line, key, value)?,
            "scenario.mix_left" => self.scenario.class_mix[1] = parse(line, key, value)?,
            "scenario.mix_right" => self.scenario.class_mix[2] = parse(line, key, value)?,
            "scenario.duration_mean_s" => self.scenario.duration_mean_s = parse(line, key, value)?,
            "scenario.duration_jitter_s" => self.scenario.duration_jitter_s = parse(line, key, value)?,
            "scenario.rounds" => self.scenario.rounds = parse(line, key, value)?,
            "scenario.lead_in_s" => self.scenario.lead_in_s = parse(line, key, value)?,
            "scenario.seed" => self.scenario.seed = parse(line, key, value)?,

            "signal.seed" => self.signal_seed = parse(line, key, value)?,
            "signal.alpha_exponent" => self.signal.alpha_exponent = parse(line, key, value)?,
            "signal.background_uv" => self.signal.background_uv = parse(line, key, value)?,
            "signal.alpha_freq_hz" => self.signal.alpha_freq_hz = parse(line, key, value)?,
            "signal.alpha_uv" => self.signal.alpha_uv = parse(line, key, value)?,
            "signal.drift_freq_hz" => self.signal.drift_freq_hz = parse(line, key, value)?,
            "signal.drift_uv" => self.signal.drift_uv = parse(line, key, value)?,
            "signal.pattern_uv" => self.signal.pattern_uv = parse(line, key, value)?,
            "signal.pattern_onset_s" => self.signal.pattern_onset_s = parse(line, key, value)?,
            "signal.pattern_decay_s" => self.signal.pattern_decay_s = parse(line, key, value)?,
            "signal.straight_ratio" => self.signal.straight_ratio = parse(line, key, value)?,
            "signal.blink_rate_hz" => self.signal.blink_rate_hz = parse(line, key, value)?,
            "signal.blink_uv" => self.signal.blink_uv = parse(line, key, value)?,
            "signal.snr" => self.signal.snr = parse(line, key, value)?,

            "epochs.reject_low" => self.reject_low = parse(line, key, value)?,
            "epochs.reject_high" => self.reject_high = parse(line, key, value)?,
            "split.train_frac" => self.train_frac = parse(line, key, value)?,
            "split.seed" => self.split_seed = parse(line, key, value)?,
            "split.mode" => {
                self.split_mode = match value {
                    "grouped" => SplitMode::Grouped,
                    "naive" => SplitMode::Naive,
                    _ => return Err(bad()),
                }
            }
            "smote.k" => self.smote.k_neighbors = parse(line, key, value)?,
            "smote.seed" => self.smote.seed = parse(line, key, value)?,

            "model.conv1_out" => self.arch.conv1_out = parse(line, key, value)?,
            "model.conv1_kernel" => self.arch.conv1_kernel = parse(line, key, value)?,
            "model.pool1" => self.arch.pool1 = parse(line, key, value)?,
            "model.conv2_out" => self.arch.conv2_out = parse(line, key, value)?,
            "model.conv2_kernel" => self.arch.conv2_kernel = parse(line, key, value)?,
            "model.pool2" => self.arch.pool2 = parse(line, key, value)?,
            "model.dropout" => self.arch.dropout = parse(line, key, value)?,
            "model.activation" => {
                self.arch.activation = match value {
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    _ => return Err(bad()),
                }
            }
            "model.init_seed" => self.init_seed = parse(line, key, value)?,

            "train.learning_rate" => self.train.learning_rate = parse(line, key, value)?,
            "train.beta1" => self.train.beta1 = parse(line, key, value)?,
            "train.beta2" => self.train.beta2 = parse(line, key, value)?,
            "train.epsilon" => self.train.epsilon = parse(line, key, value)?,
            "train.epochs" => self.train.epochs = parse(line, key, value)?,
            "train.batch_size" => self.train.batch_size = parse(line, key, value)?,
            "train.seed" => self.train.seed = parse(line, key, value)?,
            "train.mode" => {
                self.train.mode = match value {
                    "epochs" => IterationMode::Epochs,
                    "steps" => IterationMode::Steps,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Defaults overridden by every `key = value` line in `text`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate { line, key: key.to_string() });
            }
            cfg.set(line, key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_comments() {
        let cfg = RunConfig::parse("# run\n\nsignal.pattern_uv = 0\nscenario.rounds=3\nsplit.mode = naive\n").unwrap();
        assert_eq!(cfg.signal.pattern_uv, 0.0);
        assert_eq!(cfg.scenario.rounds, 3);
        assert_eq!(cfg.split_mode, SplitMode::Naive);
        assert_eq!(cfg.train, RunConfig::default().train);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(RunConfig::parse("a b"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(RunConfig::parse("\nfoo = 1"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(RunConfig::parse("train.epochs = many"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("smote.k=3\nsmote.k=4"), Err(ConfigError::Duplicate { line: 2, .. })));
    }
}
