use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DpnoConfig;
use crate::pde::DatasetSpec;

/// Training objective on scaled targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    RelativeL2,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::RelativeL2 => "relative_l2",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "relative_l2" => Ok(LossKind::RelativeL2),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Seed of the shuffling stream.
    pub seed: u64,
    pub eval_every: usize,
    /// Periodic checkpoint cadence in epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub loss: LossKind,
    /// Step decay of the learning rate every this many epochs; 0 disables it.
    pub lr_decay_every: usize,
    pub lr_decay_gamma: f64,
    /// Samples per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 20,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            eval_every: 1,
            checkpoint_every: 0,
            loss: LossKind::Mse,
            lr_decay_every: 0,
            lr_decay_gamma: 0.5,
            eval_batch: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::Config(format!(
                "batch_size {} must lie in 1..={n_train}",
                self.batch_size
            )));
        }
        if self.eval_every == 0 || self.eval_batch == 0 {
            return Err(Error::Config("eval_every and eval_batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.lr_decay_gamma > 0.0) {
            return Err(Error::Config(format!(
                "lr {} must be positive, weight_decay {} non-negative, lr_decay_gamma {} positive",
                self.lr, self.weight_decay, self.lr_decay_gamma
            )));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.lr;
        }
        let k = (epoch.saturating_sub(1) / self.lr_decay_every) as i32;
        self.lr * self.lr_decay_gamma.powi(k)
    }
}

/// Text configuration of a run: `[model]`, `[train]` and `[data]` sections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: DpnoConfig,
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[train]\nepochs = 3\n").is_ok());
        assert!(matches!(RunConfig::parse("[train]\nepoch = 3\n"), Err(Error::Config(_))));
        assert!(RunConfig::parse("[extra]\nx = 1\n").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.model = cfg.model.resolved().unwrap();
        cfg.train.loss = LossKind::RelativeL2;
        assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn step_decay() {
        let cfg = TrainConfig {
            lr_decay_every: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(10), 1e-3);
        assert_eq!(cfg.lr_at(11), 5e-4);
        assert_eq!(TrainConfig::default().lr_at(400), 1e-3);
    }

    #[test]
    fn batch_must_fit_split() {
        assert!(TrainConfig::default().validate(19).is_err());
        assert!(TrainConfig::default().validate(20).is_ok());
    }
}
