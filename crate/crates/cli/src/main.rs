use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpno::harness::{
    ablation_run, checkpoint_load, evaluate, mode_coverage_report, spectrum_report, train_run,
    zero_shot_eval, MetricRecord, RunConfig, RunOptions, TrainState, ZeroShotModel,
};
use dpno::model::{DpnoConfig, Variant};
use dpno::pde::{dataset_build, FieldDataset, Task};
use dpno::tensor::container::save_real;
use dpno::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "dpno", version, about = "Deep parallel spectral neural operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Darcy or Navier-Stokes dataset.
    GenData(GenData),
    /// Train a model on a generated dataset.
    Train(Train),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(Eval),
    /// Cross-resolution table of checkpoints against datasets.
    Superres(Superres),
    /// Parallel against serial wiring over several seeds.
    Ablate(Ablate),
    /// Spectra of targets or predictions, and mode coverage of a checkpoint.
    Spectrum(Spectrum),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run configuration whose `[data]` section supplies the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    variant: Option<Variant>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct Eval {
    /// Checkpoint directory, or a run directory holding `final/`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Superres {
    #[arg(long, num_args = 1.., required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Ablate {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Runs seeds `0..N`.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct Spectrum {
    #[arg(long)]
    data: PathBuf,
    /// Analyse predictions of this checkpoint instead of the targets.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Superres(a) => superres(a),
        Command::Ablate(a) => ablate(a),
        Command::Spectrum(a) => spectrum(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    io(path, std::fs::write(path, text))
}

fn mkdir(dir: &Path) -> Result<()> {
    io(dir, std::fs::create_dir_all(dir))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn load_data(dir: &Path) -> Result<FieldDataset> {
    if !dir.join("manifest.toml").is_file() {
        return Err(Error::Data(format!("no dataset at {}", dir.display())));
    }
    FieldDataset::load(dir)
}

fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let dir = if dir.join("manifest.toml").is_file() {
        dir.to_path_buf()
    } else {
        dir.join("final")
    };
    if !dir.join("manifest.toml").is_file() {
        return Err(Error::Data(format!("no checkpoint at {}", dir.display())));
    }
    checkpoint_load(&dir, None)
}

/// Model section with channel counts taken from the dataset.
fn fit_model(model: &DpnoConfig, data: &FieldDataset) -> Result<DpnoConfig> {
    DpnoConfig {
        in_channels: data.in_channels(),
        out_channels: data.out_channels(),
        ..model.clone()
    }
    .resolved()
}

fn gen_data(a: GenData) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut spec = cfg.data;
    spec.task = a.task.unwrap_or(spec.task);
    spec.n_train = a.n_train.unwrap_or(spec.n_train);
    spec.n_test = a.n_test.unwrap_or(spec.n_test);
    spec.resolution = a.resolution.unwrap_or(spec.resolution);
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.validate()?;
    let f = 1usize << cfg.model.levels;
    if spec.resolution % f != 0 {
        eprintln!(
            "warning: resolution {} is not divisible by {f}; a {}-level model cannot train on it",
            spec.resolution, cfg.model.levels
        );
    }
    let ds = dataset_build(&spec)?;
    ds.save(&a.out)?;
    println!("dataset   {} -> {}", spec.task, a.out.display());
    println!("inputs    {:?}", ds.inputs.shape());
    println!("targets   {:?}", ds.targets.shape());
    println!("split     {} train / {} test", ds.train.len(), ds.test.len());
    println!("in mean   {:?}", ds.norm.input_mean);
    println!("in std    {:?}", ds.norm.input_std);
    println!("scale     {}", ds.norm.target_scale);
    let o = &ds.oracle;
    println!(
        "oracle    {} solves, max {} iterations, max residual {:.3e}, max mean drift {:.3e}",
        o.solves, o.max_iterations, o.max_rel_residual, o.max_mean_drift
    );
    Ok(())
}

fn progress(r: &MetricRecord) {
    if r.test_mse.is_nan() {
        return;
    }
    println!(
        "epoch {:>5}  train {:.4e}  test_mse {:.4e}  test_rel_l2 {:.4e}  {:.1}s",
        r.epoch, r.train_loss, r.test_mse, r.test_rel_l2, r.wall_seconds
    );
}

fn train(a: Train) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let data = load_data(&a.data)?;
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.model = fit_model(&cfg.model, &data)?;
    cfg.model.check_grid(data.resolution(), data.resolution())?;
    cfg.data = data.spec.clone();
    mkdir(&a.out)?;
    cfg.save(&a.out.join("config.toml"))?;
    let mut cb = progress;
    let out = train_run(
        &cfg.model,
        &data,
        &cfg.train,
        RunOptions {
            run_dir: Some(&a.out),
            on_epoch: Some(&mut cb),
        },
    )?;
    println!(
        "final     test_mse {:.6e}  test_rel_l2 {:.6e}",
        out.final_metrics.mse, out.final_metrics.rel_l2
    );
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let data = load_data(&a.data)?;
    let m = evaluate(&state.model, &state.norm, &data, &data.test, state.config.eval_batch)?;
    println!("checkpoint  {} (epoch {})", a.checkpoint.display(), state.epoch);
    println!("dataset     {} ({}x{})", a.data.display(), data.resolution(), data.resolution());
    println!("test_mse    {:.6e}", m.mse);
    println!("test_rel_l2 {:.6e}", m.rel_l2);
    mkdir(&a.out)?;
    write(
        &a.out.join("eval.csv"),
        &format!(
            "train_resolution,test_resolution,mse,rel_l2\n{},{},{},{}\n",
            state.resolution,
            data.resolution(),
            m.mse,
            m.rel_l2
        ),
    )
}

fn superres(a: Superres) -> Result<()> {
    let states = a
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<Vec<_>>>()?;
    let data = a
        .datasets
        .iter()
        .map(|p| load_data(p))
        .collect::<Result<Vec<_>>>()?;
    let models: Vec<ZeroShotModel> = states
        .iter()
        .map(|s| ZeroShotModel {
            train_resolution: s.resolution,
            model: &s.model,
            norm: &s.norm,
        })
        .collect();
    let batch = states.iter().map(|s| s.config.eval_batch).min().unwrap_or(1);
    let refs: Vec<&FieldDataset> = data.iter().collect();
    let table = zero_shot_eval(&models, &refs, batch);
    let text = table.to_text();
    print!("test MSE (rows: training resolution, columns: test resolution)\n{text}");
    mkdir(&a.out)?;
    write(&a.out.join("superres.txt"), &text)?;
    write(&a.out.join("superres.csv"), &table.to_csv())
}

fn ablate(a: Ablate) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let data = load_data(&a.data)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.model = fit_model(&cfg.model, &data)?;
    cfg.data = data.spec.clone();
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rep = ablation_run(&cfg.model, &data, &cfg.train, &seeds)?;
    let text = rep.to_text();
    print!("{text}");
    mkdir(&a.out)?;
    cfg.save(&a.out.join("config.toml"))?;
    write(&a.out.join("ablation.txt"), &text)?;
    write(&a.out.join("ablation.csv"), &rep.to_csv())
}

fn spectrum(a: Spectrum) -> Result<()> {
    let data = load_data(&a.data)?;
    let state = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let fields = match &state {
        None => data.targets.select_outer(&data.test)?,
        Some(s) => {
            let mut parts = Vec::new();
            for chunk in data.test.chunks(s.config.eval_batch) {
                let x = data.normalized_inputs(chunk, &s.norm)?;
                let y = s.model.forward(&x)?.scale(1.0 / s.norm.target_scale);
                parts.extend((0..chunk.len()).map(|i| y.outer(i)));
            }
            Tensor::stack(&parts)?
        }
    };
    let rep = spectrum_report(&fields)?;
    mkdir(&a.out)?;
    save_real(&a.out.join("spectrum_logmag.bin"), &rep.logmag)?;
    let mut csv = String::from("plane,low_frequency_fraction\n");
    for (i, f) in rep.fractions.iter().enumerate() {
        let _ = writeln!(csv, "{i},{f}");
    }
    write(&a.out.join("spectrum.csv"), &csv)?;
    let source = if state.is_some() { "predictions" } else { "targets" };
    let min = rep.fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "{source}: {} planes, energy fraction within radius {}: mean {:.4}, min {:.4}",
        rep.fractions.len(),
        rep.radius,
        rep.mean_fraction(),
        min
    );

    if let Some(s) = &state {
        let cov = mode_coverage_report(&s.model, data.resolution())?;
        let dir = a.out.join("coverage");
        mkdir(&dir)?;
        let mut csv = String::from("level,block,height,width,count_a,count_b,count_union\n");
        println!("{:>5} {:>5} {:>9} {:>7} {:>7} {:>7}", "level", "block", "grid", "A", "B", "A|B");
        for c in &cov {
            let (na, nb, nu) = c.counts();
            let stem = format!("level{}-block{}", c.level, c.block);
            save_real(&dir.join(format!("{stem}-a.bin")), &c.a)?;
            save_real(&dir.join(format!("{stem}-b.bin")), &c.b)?;
            save_real(&dir.join(format!("{stem}-union.bin")), &c.union)?;
            let _ = writeln!(csv, "{},{},{},{},{na},{nb},{nu}", c.level, c.block, c.grid.0, c.grid.1);
            println!(
                "{:>5} {:>5} {:>9} {na:>7} {nb:>7} {nu:>7}",
                c.level,
                c.block,
                format!("{}x{}", c.grid.0, c.grid.1)
            );
        }
        write(&a.out.join("coverage.csv"), &csv)?;
    }
    Ok(())
}
