use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{read_metrics, write_metrics};
use super::train::{adam_config, TrainState};
use crate::diff::{AdamConfig, ParamSlot};
use crate::error::{Error, Result};
use crate::model::DpnoConfig;
use crate::pde::NormStats;
use crate::tensor::container::{load, save_complex, save_real, AnyTensor};
use crate::tensor::{ComplexTensor, Tensor};

const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: u32,
    epoch: usize,
    resolution: usize,
    adam_step: u64,
    /// Position of the shuffling stream, in 32-bit words.
    rng_word_pos: String,
    metrics: String,
    model: DpnoConfig,
    train: TrainConfig,
    adam: AdamConfig,
    norm: NormStats,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    complex: bool,
}

fn write_param(path: &Path, p: &dyn ParamSlot, values: &[f64]) -> Result<()> {
    if p.is_complex() {
        let data = values
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        save_complex(path, &ComplexTensor::new(p.shape().to_vec(), data)?)
    } else {
        save_real(path, &Tensor::new(p.shape().to_vec(), values.to_vec())?)
    }
}

fn read_param(path: &Path, entry: &ParamEntry, out: &mut [f64]) -> Result<()> {
    let (shape, flat): (Vec<usize>, Vec<f64>) = match load(path)? {
        AnyTensor::Real(t) if !entry.complex => (t.shape().to_vec(), t.into_data()),
        AnyTensor::Complex(t) if entry.complex => (t.shape().to_vec(), t.as_f64().to_vec()),
        _ => {
            return Err(Error::Data(format!(
                "{}: element kind does not match the manifest",
                path.display()
            )))
        }
    };
    if shape != entry.shape || flat.len() != out.len() {
        return Err(Error::Data(format!(
            "{}: shape {shape:?} does not match {:?}",
            path.display(),
            entry.shape
        )));
    }
    out.copy_from_slice(&flat);
    Ok(())
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the full training state under `dir`: a manifest, one container per
/// parameter and per Adam moment, and the metrics history.
pub fn checkpoint_save(state: &TrainState, dir: &Path) -> Result<()> {
    for sub in ["params", "adam_m", "adam_v"] {
        mkdir(&dir.join(sub))?;
    }
    let params = state.model.params();
    let mut entries = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let file = format!("{}.bin", p.name());
        write_param(&dir.join("params").join(&file), *p, p.values())?;
        write_param(&dir.join("adam_m").join(&file), *p, &state.adam.m[i])?;
        write_param(&dir.join("adam_v").join(&file), *p, &state.adam.v[i])?;
        entries.push(ParamEntry {
            name: p.name().to_string(),
            shape: p.shape().to_vec(),
            complex: p.is_complex(),
        });
    }
    write_metrics(&dir.join("metrics.csv"), &state.history)?;
    let manifest = Manifest {
        format: FORMAT,
        epoch: state.epoch,
        resolution: state.resolution,
        adam_step: state.adam.step,
        rng_word_pos: state.rng.get_word_pos().to_string(),
        metrics: "metrics.csv".into(),
        model: state.model.config().clone(),
        train: state.config.clone(),
        adam: state.adam.config.clone(),
        norm: state.norm.clone(),
        params: entries,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Data(format!("cannot serialize checkpoint manifest: {e}")))?;
    let path = dir.join("manifest.toml");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Restores a state written by [`checkpoint_save`].
///
/// When `expected` is given, its resolved form must equal the stored model
/// configuration; the first differing field is reported otherwise.
pub fn checkpoint_load(dir: &Path, expected: Option<&DpnoConfig>) -> Result<TrainState> {
    let path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(Error::Data(format!("unsupported checkpoint format {}", m.format)));
    }
    if let Some(exp) = expected {
        if let Some(diff) = exp.resolved()?.first_difference(&m.model) {
            return Err(Error::Config(format!("checkpoint configuration mismatch: {diff}")));
        }
    }
    let word_pos: u128 = m
        .rng_word_pos
        .parse()
        .map_err(|_| Error::Data(format!("bad rng position `{}`", m.rng_word_pos)))?;
    let mut state = TrainState::new(&m.model, m.norm, m.train, m.resolution)?;
    state.adam.config = m.adam;
    state.adam.step = m.adam_step;
    state.epoch = m.epoch;
    state.rng = ChaCha8Rng::seed_from_u64(state.config.seed);
    state.rng.set_word_pos(word_pos);
    state.history = read_metrics(&dir.join(&m.metrics))?;
    if state.history.len() != m.epoch {
        return Err(Error::Data(format!(
            "metrics hold {} epochs, manifest says {}",
            state.history.len(),
            m.epoch
        )));
    }

    let TrainState { model, adam, .. } = &mut state;
    let mut params = model.params_mut();
    if params.len() != m.params.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} parameters, model has {}",
            m.params.len(),
            params.len()
        )));
    }
    for (i, (p, entry)) in params.iter_mut().zip(&m.params).enumerate() {
        if p.name() != entry.name {
            return Err(Error::Data(format!(
                "parameter {i} is `{}`, checkpoint has `{}`",
                p.name(),
                entry.name
            )));
        }
        let file = format!("{}.bin", entry.name);
        read_param(&dir.join("params").join(&file), entry, p.values_mut())?;
        read_param(&dir.join("adam_m").join(&file), entry, &mut adam.m[i])?;
        read_param(&dir.join("adam_v").join(&file), entry, &mut adam.v[i])?;
    }
    Ok(state)
}

/// Loads a checkpoint and extends its run to `epochs` total epochs.
pub fn checkpoint_resume(dir: &Path, epochs: usize) -> Result<TrainState> {
    let mut state = checkpoint_load(dir, None)?;
    if epochs < state.epoch {
        return Err(Error::Config(format!(
            "checkpoint is at epoch {}, cannot resume to {epochs}",
            state.epoch
        )));
    }
    state.config.epochs = epochs;
    state.adam.config.lr = adam_config(&state.config).lr;
    Ok(state)
}
