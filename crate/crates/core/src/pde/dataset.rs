use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::darcy::{darcy_solve_fd, DarcySample, DarcySolve, Forcing, Threshold};
use super::grf::{grf_sample, GrfSpec};
use super::ns::{ns_rollout, NsConfig};
use super::{downsample_field, downsample_nodes};
use crate::error::{Error, Result};
use crate::tensor::container::{load_real, save_real};
use crate::tensor::{GridMeta, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Darcy,
    Ns,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Darcy => "darcy",
            Task::Ns => "ns",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "darcy" => Ok(Task::Darcy),
            "ns" => Ok(Task::Ns),
            _ => Err(Error::Config(format!(
                "unknown task `{s}` (expected darcy or ns)"
            ))),
        }
    }
}

/// How NS trajectories become input/target pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsMode {
    /// Snapshots `1..=input_steps` in, the next `target_steps` out.
    Window,
    /// Every consecutive snapshot pair `t -> t + 1`.
    SingleStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarcyParams {
    pub tau: f64,
    pub alpha: f64,
    pub threshold: Threshold,
    pub forcing: f64,
}

impl Default for DarcyParams {
    fn default() -> Self {
        Self {
            tau: 3.0,
            alpha: 2.0,
            threshold: Threshold::default(),
            forcing: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsParams {
    pub tau: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub solver: NsConfig,
    pub input_steps: usize,
    pub target_steps: usize,
    pub mode: NsMode,
}

impl Default for NsParams {
    fn default() -> Self {
        Self {
            tau: 7.0,
            alpha: 2.5,
            sigma: 7f64.powf(1.5),
            solver: NsConfig::default(),
            input_steps: 10,
            target_steps: 10,
            mode: NsMode::Window,
        }
    }
}

/// Everything that determines a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub task: Task,
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Oracle grid refinement; defaults to 2 for Darcy and 1 for NS.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_factor: Option<usize>,
    /// Multiplier applied to targets for training; defaults to 100 for Darcy and 1 for NS.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_scale: Option<f64>,
    pub darcy: DarcyParams,
    pub ns: NsParams,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            task: Task::Darcy,
            n_train: 400,
            n_test: 100,
            resolution: 64,
            seed: 0,
            oracle_factor: None,
            target_scale: None,
            darcy: DarcyParams::default(),
            ns: NsParams::default(),
        }
    }
}

impl DatasetSpec {
    pub fn new(task: Task, n_train: usize, n_test: usize, resolution: usize, seed: u64) -> Self {
        Self {
            task,
            n_train,
            n_test,
            resolution,
            seed,
            ..Self::default()
        }
    }

    pub fn oracle_factor(&self) -> usize {
        self.oracle_factor.unwrap_or(match self.task {
            Task::Darcy => 2,
            Task::Ns => 1,
        })
    }

    pub fn target_scale(&self) -> f64 {
        self.target_scale.unwrap_or(match self.task {
            Task::Darcy => 100.0,
            Task::Ns => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::Config("n_train must be positive".into()));
        }
        if self.resolution < 8 {
            return Err(Error::Config(format!(
                "resolution {} is below 8",
                self.resolution
            )));
        }
        let min_factor = match self.task {
            Task::Darcy => 2,
            Task::Ns => 1,
        };
        if self.oracle_factor() < min_factor {
            return Err(Error::Config(format!(
                "insufficient oracle resolution: factor {} is below {min_factor} for {}",
                self.oracle_factor(),
                self.task
            )));
        }
        if !(self.target_scale() > 0.0) {
            return Err(Error::Config("target_scale must be positive".into()));
        }
        if self.task == Task::Ns {
            let snaps = self.ns.solver.snapshots()?;
            let need = match self.ns.mode {
                NsMode::Window => 1 + self.ns.input_steps + self.ns.target_steps,
                NsMode::SingleStep => 2,
            };
            if self.ns.input_steps == 0 || self.ns.target_steps == 0 || snaps < need {
                return Err(Error::Config(format!(
                    "NS rollout stores {snaps} snapshots but the sample layout needs {need}"
                )));
            }
        }
        Ok(())
    }

    /// Input and target channel counts.
    pub fn channels(&self) -> (usize, usize) {
        match (self.task, self.ns.mode) {
            (Task::Darcy, _) => (1, 1),
            (Task::Ns, NsMode::Window) => (self.ns.input_steps + 2, self.ns.target_steps),
            (Task::Ns, NsMode::SingleStep) => (3, 1),
        }
    }
}

/// Per-channel input standardization and the target scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_scale: f64,
}

impl NormStats {
    /// Population mean and standard deviation of each channel over `indices`.
    pub fn from_inputs(inputs: &Tensor, indices: &[usize], target_scale: f64) -> Result<Self> {
        let (_, c, h, w) = inputs.dims4()?;
        let hw = h * w;
        let count = (indices.len() * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let plane = |s: usize| &inputs.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            let m = indices
                .iter()
                .map(|&s| plane(s).iter().sum::<f64>())
                .sum::<f64>()
                / count;
            let var = indices
                .iter()
                .map(|&s| plane(s).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                .sum::<f64>()
                / count;
            mean[ch] = m;
            std[ch] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(Self {
            input_mean: mean,
            input_std: std,
            target_scale,
        })
    }

    /// Standardizes `[B, C, H, W]` inputs in place.
    pub fn normalize(&self, x: &mut Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.input_mean.len() {
            return Err(Error::Data(format!(
                "normalization has {} channels, inputs have {c}",
                self.input_mean.len()
            )));
        }
        for (k, plane) in x.data_mut().chunks_exact_mut(h * w).enumerate() {
            let (m, s) = (self.input_mean[k % c], self.input_std[k % c]);
            for v in plane {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

/// Solver diagnostics collected while building a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleReport {
    pub solves: usize,
    pub max_iterations: usize,
    pub max_rel_residual: f64,
    /// Largest change of the spatial mean of vorticity over a rollout.
    pub max_mean_drift: f64,
}

/// Raw inputs and targets with their split and normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDataset {
    pub spec: DatasetSpec,
    /// `[N, C_in, H, W]`, unnormalized.
    pub inputs: Tensor,
    /// `[N, C_out, H, W]`, in physical units.
    pub targets: Tensor,
    pub norm: NormStats,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub grid: GridMeta,
    pub oracle: OracleReport,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: u32,
    inputs_shape: Vec<usize>,
    targets_shape: Vec<usize>,
    spec: DatasetSpec,
    norm: NormStats,
    grid: GridMeta,
    oracle: OracleReport,
    train: Vec<usize>,
    test: Vec<usize>,
}

const MANIFEST: &str = "manifest.toml";

impl FieldDataset {
    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn resolution(&self) -> usize {
        self.grid.height
    }

    pub fn in_channels(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.targets.shape()[1]
    }

    /// Inputs at `indices`, standardized with `norm`.
    pub fn normalized_inputs(&self, indices: &[usize], norm: &NormStats) -> Result<Tensor> {
        let mut x = self.inputs.select_outer(indices)?;
        norm.normalize(&mut x)?;
        Ok(x)
    }

    /// Targets at `indices`, multiplied by `scale`.
    pub fn scaled_targets(&self, indices: &[usize], scale: f64) -> Result<Tensor> {
        Ok(self.targets.select_outer(indices)?.scale(scale))
    }

    /// Writes `manifest.toml`, `inputs.bin` and `targets.bin` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format: 1,
            inputs_shape: self.inputs.shape().to_vec(),
            targets_shape: self.targets.shape().to_vec(),
            spec: self.spec.clone(),
            norm: self.norm.clone(),
            grid: self.grid.clone(),
            oracle: self.oracle.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| Error::Data(format!("cannot serialize dataset manifest: {e}")))?;
        let path = dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        save_real(&dir.join("inputs.bin"), &self.inputs)?;
        save_real(&dir.join("targets.bin"), &self.targets)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest =
            toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let inputs = load_real(&dir.join("inputs.bin"))?;
        let targets = load_real(&dir.join("targets.bin"))?;
        if inputs.shape() != m.inputs_shape || targets.shape() != m.targets_shape {
            return Err(Error::Data(format!(
                "{}: tensor shapes {:?} / {:?} disagree with the manifest",
                dir.display(),
                inputs.shape(),
                targets.shape()
            )));
        }
        let n = inputs.shape()[0];
        if m.train.iter().chain(&m.test).any(|&i| i >= n) || m.train.len() + m.test.len() != n {
            return Err(Error::Data(format!(
                "{}: split does not cover {n} samples",
                dir.display()
            )));
        }
        Ok(Self {
            spec: m.spec,
            inputs,
            targets,
            norm: m.norm,
            train: m.train,
            test: m.test,
            grid: m.grid,
            oracle: m.oracle,
        })
    }
}

/// Per-sample seeds drawn from one stream seeded by `seed`.
pub fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// One Darcy pair at `resolution` nodes per axis.
///
/// The coefficient comes from a periodic GRF on `factor * (resolution - 1)`
/// points, read on the closed node grid by wrapping; the oracle solves on
/// that fine grid and both fields are subsampled to the requested nodes.
pub fn darcy_sample(
    params: &DarcyParams,
    resolution: usize,
    factor: usize,
    seed: u64,
) -> Result<(DarcySample, DarcySolve)> {
    let m = factor * (resolution - 1);
    let g = grf_sample(&GrfSpec {
        resolution: m,
        tau: params.tau,
        alpha: params.alpha,
        sigma: 1.0,
        seed,
    })?;
    let closed = Tensor::from_fn2(m + 1, m + 1, |i, j| g.data()[(i % m) * m + j % m]);
    let a_fine = params.threshold.apply(&closed);
    let solve = darcy_solve_fd(&a_fine, Forcing::Constant(params.forcing))?;
    let sample = DarcySample {
        a: downsample_nodes(&a_fine, factor)?,
        u: downsample_nodes(&solve.u, factor)?,
        f: params.forcing,
        grid: GridMeta::new(resolution, resolution, false)?,
    };
    Ok((sample, solve))
}

fn coordinates(n: usize) -> [Tensor; 2] {
    [
        Tensor::from_fn2(n, n, |i, _| i as f64 / n as f64),
        Tensor::from_fn2(n, n, |_, j| j as f64 / n as f64),
    ]
}

fn ns_trajectory(spec: &DatasetSpec, seed: u64, report: &mut OracleReport) -> Result<Tensor> {
    let factor = spec.oracle_factor();
    let p = &spec.ns;
    let w0 = grf_sample(&GrfSpec {
        resolution: factor * spec.resolution,
        tau: p.tau,
        alpha: p.alpha,
        sigma: p.sigma,
        seed,
    })?;
    let mean = w0.sum() / w0.len() as f64;
    let w0 = w0.map(|v| v - mean);
    let tr = ns_rollout(&w0, &p.solver)?;
    let (t, h, w) = (
        tr.omega.shape()[0],
        tr.omega.shape()[1],
        tr.omega.shape()[2],
    );
    for k in 0..t {
        let m = tr.omega.data()[k * h * w..(k + 1) * h * w]
            .iter()
            .sum::<f64>()
            / (h * w) as f64;
        report.max_mean_drift = report.max_mean_drift.max(m.abs());
    }
    report.solves += 1;
    downsample_field(&tr.omega, factor)
}

fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let (h, w) = parts[0].spatial()?;
    Tensor::new(vec![data.len() / (h * w), h, w], data)
}

/// Generates a dataset; samples `0..n_train` form the training split.
pub fn dataset_build(spec: &DatasetSpec) -> Result<FieldDataset> {
    spec.validate()?;
    let n = spec.resolution;
    let total = spec.n_train + spec.n_test;
    let seeds = sample_seeds(spec.seed, total);
    let mut report = OracleReport::default();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut push = |x: Tensor, y: Tensor, is_train: bool, inputs: &mut Vec<Tensor>| {
        (if is_train { &mut train } else { &mut test }).push(inputs.len());
        inputs.push(x);
        targets.push(y);
    };
    match spec.task {
        Task::Darcy => {
            for (k, &s) in seeds.iter().enumerate() {
                let (sample, solve) = darcy_sample(&spec.darcy, n, spec.oracle_factor(), s)?;
                report.solves += 1;
                report.max_iterations = report.max_iterations.max(solve.iterations);
                report.max_rel_residual = report.max_rel_residual.max(solve.rel_residual);
                let x = sample.a.reshape(vec![1, n, n])?;
                let y = sample.u.reshape(vec![1, n, n])?;
                push(x, y, k < spec.n_train, &mut inputs);
            }
        }
        Task::Ns => {
            let [cx, cy] = coordinates(n);
            let (ins, outs) = (spec.ns.input_steps, spec.ns.target_steps);
            for (k, &s) in seeds.iter().enumerate() {
                let omega = ns_trajectory(spec, s, &mut report)?;
                let snap = |t: usize| omega.outer(t);
                match spec.ns.mode {
                    NsMode::Window => {
                        let mut xs: Vec<Tensor> = (1..=ins).map(snap).collect();
                        xs.push(cx.clone());
                        xs.push(cy.clone());
                        let ys: Vec<Tensor> = (ins + 1..=ins + outs).map(snap).collect();
                        push(
                            concat_channels(&xs)?,
                            concat_channels(&ys)?,
                            k < spec.n_train,
                            &mut inputs,
                        );
                    }
                    NsMode::SingleStep => {
                        for t in 0..omega.shape()[0] - 1 {
                            let x = concat_channels(&[snap(t), cx.clone(), cy.clone()])?;
                            push(
                                x,
                                concat_channels(&[snap(t + 1)])?,
                                k < spec.n_train,
                                &mut inputs,
                            );
                        }
                    }
                }
            }
        }
    }
    let inputs = Tensor::stack(&inputs)?;
    let targets = Tensor::stack(&targets)?;
    let norm = NormStats::from_inputs(&inputs, &train, spec.target_scale())?;
    Ok(FieldDataset {
        spec: spec.clone(),
        inputs,
        targets,
        norm,
        train,
        test,
        grid: GridMeta::new(n, n, spec.task == Task::Ns)?,
        oracle: report,
    })
}
