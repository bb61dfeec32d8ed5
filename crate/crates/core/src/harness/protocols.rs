use std::fmt::Write as _;

use super::config::TrainConfig;
use super::metrics::{evaluate, EvalMetrics};
use super::train::{train_run, RunOptions};
use crate::error::{shape_err, Result};
use crate::model::{DpnoConfig, DpnoModel, Variant};
use crate::pde::{FieldDataset, NormStats};
use crate::tensor::{fft2_forward, full_spectrum, spectrum_logmag, Tensor};

/// A trained model entering the cross-resolution table.
pub struct ZeroShotModel<'a> {
    pub train_resolution: usize,
    pub model: &'a DpnoModel,
    pub norm: &'a NormStats,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ZeroShotCell {
    Done(EvalMetrics),
    /// The pair could not be evaluated; the reason is kept for the report.
    Failed(String),
}

/// Rows are trained models, columns test resolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotTable {
    pub train_resolutions: Vec<usize>,
    pub test_resolutions: Vec<usize>,
    pub cells: Vec<Vec<ZeroShotCell>>,
}

/// Evaluates every model on the test split of every dataset without any
/// retraining. A failing pair is recorded in its cell and does not stop the
/// remaining ones.
pub fn zero_shot_eval(
    models: &[ZeroShotModel<'_>],
    datasets: &[&FieldDataset],
    batch: usize,
) -> ZeroShotTable {
    let cells = models
        .iter()
        .map(|m| {
            datasets
                .iter()
                .map(|d| match evaluate(m.model, m.norm, d, &d.test, batch) {
                    Ok(r) => ZeroShotCell::Done(r),
                    Err(e) => ZeroShotCell::Failed(e.to_string()),
                })
                .collect()
        })
        .collect();
    ZeroShotTable {
        train_resolutions: models.iter().map(|m| m.train_resolution).collect(),
        test_resolutions: datasets.iter().map(|d| d.resolution()).collect(),
        cells,
    }
}

impl ZeroShotTable {
    pub fn get(&self, train: usize, test: usize) -> Option<&ZeroShotCell> {
        let r = self.train_resolutions.iter().position(|&x| x == train)?;
        let c = self.test_resolutions.iter().position(|&x| x == test)?;
        Some(&self.cells[r][c])
    }

    /// Aligned text table of test MSE.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:>10}", "train\\test");
        for t in &self.test_resolutions {
            let _ = write!(out, " {:>12}", t);
        }
        out.push('\n');
        for (r, row) in self.train_resolutions.iter().zip(&self.cells) {
            let _ = write!(out, "{r:>10}");
            for cell in row {
                match cell {
                    ZeroShotCell::Done(m) => {
                        let _ = write!(out, " {:>12.4e}", m.mse);
                    }
                    ZeroShotCell::Failed(_) => {
                        let _ = write!(out, " {:>12}", "n/a");
                    }
                }
            }
            out.push('\n');
        }
        for (r, row) in self.train_resolutions.iter().zip(&self.cells) {
            for (t, cell) in self.test_resolutions.iter().zip(row) {
                if let ZeroShotCell::Failed(e) = cell {
                    let _ = writeln!(out, "{r} -> {t}: {e}");
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_resolution,test_resolution,mse,rel_l2,error\n");
        for (r, row) in self.train_resolutions.iter().zip(&self.cells) {
            for (t, cell) in self.test_resolutions.iter().zip(row) {
                let _ = match cell {
                    ZeroShotCell::Done(m) => writeln!(out, "{r},{t},{},{},", m.mse, m.rel_l2),
                    ZeroShotCell::Failed(e) => {
                        writeln!(out, "{r},{t},NaN,NaN,\"{}\"", e.replace('"', "'"))
                    }
                };
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub seed: u64,
    pub parallel: EvalMetrics,
    pub serial: EvalMetrics,
    pub parallel_order: u64,
    pub serial_order: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub mean_parallel_mse: f64,
    pub mean_serial_mse: f64,
    /// Population standard deviations across seeds.
    pub std_parallel_mse: f64,
    pub std_serial_mse: f64,
}

impl AblationReport {
    /// Mean parallel error over mean serial error.
    pub fn ratio(&self) -> f64 {
        self.mean_parallel_mse / self.mean_serial_mse
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:>6} {:>14} {:>14}\n", "seed", "parallel_mse", "serial_mse");
        for r in &self.rows {
            let _ = writeln!(out, "{:>6} {:>14.6e} {:>14.6e}", r.seed, r.parallel.mse, r.serial.mse);
        }
        let _ = writeln!(
            out,
            "{:>6} {:>14.6e} {:>14.6e}\n{:>6} {:>14.6e} {:>14.6e}\nratio parallel/serial = {:.4}",
            "mean",
            self.mean_parallel_mse,
            self.mean_serial_mse,
            "std",
            self.std_parallel_mse,
            self.std_serial_mse,
            self.ratio()
        );
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,parallel_mse,parallel_rel_l2,serial_mse,serial_rel_l2\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.seed, r.parallel.mse, r.parallel.rel_l2, r.serial.mse, r.serial.rel_l2
            );
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains the parallel and the serial wiring for each seed under identical
/// data, budget and initialization seed, and compares final test MSE.
pub fn ablation_run(
    model_cfg: &DpnoConfig,
    data: &FieldDataset,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(crate::error::Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let run = |variant| {
            let mc = DpnoConfig {
                variant,
                seed,
                ..model_cfg.clone()
            };
            train_run(&mc, data, &tc, RunOptions::default())
        };
        let p = run(Variant::Parallel)?;
        let s = run(Variant::Serial)?;
        rows.push(AblationRow {
            seed,
            parallel: p.final_metrics,
            serial: s.final_metrics,
            parallel_order: p.order_digest,
            serial_order: s.order_digest,
        });
    }
    let par: Vec<f64> = rows.iter().map(|r| r.parallel.mse).collect();
    let ser: Vec<f64> = rows.iter().map(|r| r.serial.mse).collect();
    let (mean_parallel_mse, std_parallel_mse) = mean_std(&par);
    let (mean_serial_mse, std_serial_mse) = mean_std(&ser);
    Ok(AblationReport {
        rows,
        mean_parallel_mse,
        mean_serial_mse,
        std_parallel_mse,
        std_serial_mse,
    })
}

/// Fraction of spectral energy of an `[H, W]` field at `|k| <= radius`,
/// with `k` the signed integer wavenumber.
pub fn low_frequency_fraction(field: &Tensor, radius: f64) -> Result<f64> {
    if field.ndim() != 2 {
        return Err(shape_err!("expected an [H, W] field, got {:?}", field.shape()));
    }
    let (h, w) = field.spatial()?;
    let full = full_spectrum(&fft2_forward(field)?, w)?;
    let signed = |k: usize, n: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let (mut inside, mut total) = (0.0, 0.0);
    for k1 in 0..h {
        for k2 in 0..w {
            let e = full.data()[k1 * w + k2].norm_sqr();
            total += e;
            let (a, b) = (signed(k1, h), signed(k2, w));
            if (a * a + b * b).sqrt() <= radius {
                inside += e;
            }
        }
    }
    Ok(if total > 0.0 { inside / total } else { 1.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    /// Centre-shifted `log(1 + |F|)` per field, `[N, H, W]`.
    pub logmag: Tensor,
    pub radius: f64,
    /// Low-frequency energy fraction per field.
    pub fractions: Vec<f64>,
}

impl SpectrumReport {
    pub fn mean_fraction(&self) -> f64 {
        self.fractions.iter().sum::<f64>() / self.fractions.len() as f64
    }
}

/// Spectra of a stack of fields (`[N, H, W]` or `[N, C, H, W]`, every plane
/// treated separately) with the energy fraction inside radius `H / 8`.
pub fn spectrum_report(fields: &Tensor) -> Result<SpectrumReport> {
    if fields.ndim() < 3 {
        return Err(shape_err!("expected a stack of fields, got {:?}", fields.shape()));
    }
    let (h, w) = fields.spatial()?;
    let planes = fields.len() / (h * w);
    let radius = h as f64 / 8.0;
    let mut maps = Vec::with_capacity(planes);
    let mut fractions = Vec::with_capacity(planes);
    for p in 0..planes {
        let plane = Tensor::new(vec![h, w], fields.data()[p * h * w..(p + 1) * h * w].to_vec())?;
        maps.push(spectrum_logmag(&plane)?);
        fractions.push(low_frequency_fraction(&plane, radius)?);
    }
    Ok(SpectrumReport {
        logmag: Tensor::stack(&maps)?,
        radius,
        fractions,
    })
}

/// Retained-mode masks of one block at its grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCoverage {
    pub level: usize,
    pub block: usize,
    pub grid: (usize, usize),
    /// Half-spectrum indicators `[H, W/2+1]`.
    pub a: Tensor,
    pub b: Tensor,
    pub union: Tensor,
}

impl BlockCoverage {
    pub fn counts(&self) -> (usize, usize, usize) {
        let c = |t: &Tensor| t.sum().round() as usize;
        (c(&self.a), c(&self.b), c(&self.union))
    }
}

/// Masks of both branches and their union for every block of `model`
/// applied at `resolution`.
pub fn mode_coverage_report(model: &DpnoModel, resolution: usize) -> Result<Vec<BlockCoverage>> {
    let mut out = Vec::new();
    for (level, blocks) in model.blocks().iter().enumerate() {
        let n = resolution >> level;
        if n << level != resolution {
            return Err(shape_err!("resolution {resolution} does not halve to level {level}"));
        }
        for (block, b) in blocks.iter().enumerate() {
            let a = b.branch_a.retained_mask(n, n)?;
            let bm = b.branch_b.retained_mask(n, n)?;
            let union = Tensor::new(
                a.shape().to_vec(),
                a.data().iter().zip(bm.data()).map(|(x, y)| x.max(*y)).collect(),
            )?;
            out.push(BlockCoverage {
                level,
                block,
                grid: (n, n),
                a,
                b: bm,
                union,
            });
        }
    }
    Ok(out)
}
