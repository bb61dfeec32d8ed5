use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::checkpoint_save;
use super::config::{LossKind, TrainConfig};
use super::metrics::{evaluate, write_metrics, EvalMetrics, MetricRecord};
use crate::diff::{mse_loss, relative_l2_loss, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{DpnoConfig, DpnoModel};
use crate::pde::{FieldDataset, NormStats};

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: DpnoModel,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Shuffling stream, seeded from `config.seed`.
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricRecord>,
    pub norm: NormStats,
    pub config: TrainConfig,
    /// Grid size of the training data.
    pub resolution: usize,
}

impl TrainState {
    pub fn new(
        model_cfg: &DpnoConfig,
        norm: NormStats,
        config: TrainConfig,
        resolution: usize,
    ) -> Result<Self> {
        let model = DpnoModel::new(model_cfg)?;
        let adam = AdamState::new(adam_config(&config), &model.params());
        Ok(Self {
            model,
            adam,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: Vec::new(),
            norm,
            config,
            resolution,
        })
    }
}

pub(crate) fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Test metrics after the last epoch (or of the untrained model).
    pub final_metrics: EvalMetrics,
    /// Digest of the sample order seen during this call.
    pub order_digest: u64,
}

/// Optional side effects of a training call.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Receives `metrics.csv`, periodic checkpoints and `final/`.
    pub run_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&MetricRecord)>,
}

/// Fresh run of `train_cfg.epochs` epochs on the training split of `data`.
pub fn train_run(
    model_cfg: &DpnoConfig,
    data: &FieldDataset,
    train_cfg: &TrainConfig,
    opts: RunOptions<'_>,
) -> Result<TrainOutcome> {
    let model_cfg = model_cfg.resolved()?;
    let (cin, cout) = (data.in_channels(), data.out_channels());
    if model_cfg.in_channels != cin || model_cfg.out_channels != cout {
        return Err(Error::Config(format!(
            "model maps {} -> {} channels, dataset has {cin} -> {cout}",
            model_cfg.in_channels, model_cfg.out_channels
        )));
    }
    let state = TrainState::new(&model_cfg, data.norm.clone(), train_cfg.clone(), data.resolution())?;
    continue_training(state, data, opts)
}

/// Trains `state` until `state.config.epochs`, continuing its stream.
pub fn continue_training(
    mut state: TrainState,
    data: &FieldDataset,
    mut opts: RunOptions<'_>,
) -> Result<TrainOutcome> {
    let cfg = state.config.clone();
    cfg.validate(data.train.len())?;
    state.model.check_input(&data.normalized_inputs(&data.train[..1], &state.norm)?)?;
    if let Some(dir) = opts.run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let start = Instant::now();
    let mut digest = Fnv::new();
    let mut last = None;
    for epoch in state.epoch + 1..=cfg.epochs {
        state.adam.config.lr = cfg.lr_at(epoch);
        let mut order = data.train.clone();
        order.shuffle(&mut state.rng);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            digest.write(batch);
            let x = data.normalized_inputs(batch, &state.norm)?;
            let y = data.scaled_targets(batch, state.norm.target_scale)?;
            let (pred, cache) = state.model.forward_train(&x)?;
            let (loss, grad) = match cfg.loss {
                LossKind::Mse => mse_loss(&pred, &y)?,
                LossKind::RelativeL2 => relative_l2_loss(&pred, &y)?,
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}; parameter norm {:.6e}",
                    param_norm(&state.model)
                )));
            }
            state.model.zero_grad();
            state.model.backward(&cache, &grad)?;
            state.adam.step(&mut state.model.params_mut())?;
            total += loss * batch.len() as f64;
        }
        let metrics = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let m = evaluate(&state.model, &state.norm, data, &data.test, cfg.eval_batch)?;
            last = Some(m);
            m
        } else {
            EvalMetrics {
                mse: f64::NAN,
                rel_l2: f64::NAN,
            }
        };
        let record = MetricRecord {
            epoch,
            train_loss: total / order.len() as f64,
            test_mse: metrics.mse,
            test_rel_l2: metrics.rel_l2,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        state.epoch = epoch;
        if let Some(f) = opts.on_epoch.as_mut() {
            f(&record);
        }
        state.history.push(record);
        if let Some(dir) = opts.run_dir {
            write_metrics(&dir.join("metrics.csv"), &state.history)?;
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                checkpoint_save(&state, &dir.join("checkpoints").join(format!("epoch-{epoch:05}")))?;
            }
        }
    }
    let final_metrics = match last {
        Some(m) => m,
        None => evaluate(&state.model, &state.norm, data, &data.test, cfg.eval_batch)?,
    };
    if let Some(dir) = opts.run_dir {
        write_metrics(&dir.join("metrics.csv"), &state.history)?;
        checkpoint_save(&state, &dir.join("final"))?;
    }
    Ok(TrainOutcome {
        state,
        final_metrics,
        order_digest: digest.0,
    })
}

fn param_norm(model: &DpnoModel) -> f64 {
    model
        .params()
        .iter()
        .flat_map(|p| p.values().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

// 64-bit FNV-1a over sample indices.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, indices: &[usize]) {
        for &i in indices {
            for b in (i as u64).to_le_bytes() {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
}
