//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The tests take a shared lock so that runtime measurements are not
//! disturbed by one another.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dpno::diff::*;
use dpno::harness::*;
use dpno::model::{conjugate_closure, Branch, DpnoConfig, DpnoModel, OperatorBlock, Variant};
use dpno::pde::*;
use dpno::tensor::{
    dft2_reference, fft2_forward, fft2_inverse, full_spectrum, half_width, spectral_upsample,
};
use dpno::{ComplexTensor, Tensor};

static SERIAL: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {verdict} {title}: {detail}");
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, w: &[f64]) -> f64 {
    a.data().iter().zip(w).map(|(x, y)| x * y).sum()
}

fn with_data(t: &Tensor, x: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap()
}

// Gradient checks

trait Layer: Clone {
    fn run(&self, x: &Tensor) -> Tensor;
    fn back(&mut self, x: &Tensor, g: &Tensor) -> Tensor;
    fn slots(&self) -> Vec<&dyn ParamSlot>;
    fn slots_mut(&mut self) -> Vec<&mut dyn ParamSlot>;
}

macro_rules! simple_layer {
    ($t:ty) => {
        impl Layer for $t {
            fn run(&self, x: &Tensor) -> Tensor {
                self.forward(x).unwrap()
            }
            fn back(&mut self, x: &Tensor, g: &Tensor) -> Tensor {
                self.backward(x, g).unwrap()
            }
            fn slots(&self) -> Vec<&dyn ParamSlot> {
                let mut v = Vec::new();
                self.visit_params(&mut v);
                v
            }
            fn slots_mut(&mut self) -> Vec<&mut dyn ParamSlot> {
                let mut v = Vec::new();
                self.visit_params_mut(&mut v);
                v
            }
        }
    };
}

simple_layer!(Conv3x3);
simple_layer!(PointwiseLinear);
simple_layer!(SpectralConvLayer);

impl Layer for OperatorBlock {
    fn run(&self, x: &Tensor) -> Tensor {
        self.forward(x).unwrap()
    }
    fn back(&mut self, x: &Tensor, g: &Tensor) -> Tensor {
        let (_, cache) = self.forward_cached(x).unwrap();
        self.backward(&cache, g).unwrap()
    }
    fn slots(&self) -> Vec<&dyn ParamSlot> {
        let mut v = Vec::new();
        self.visit_params(&mut v);
        v
    }
    fn slots_mut(&mut self) -> Vec<&mut dyn ParamSlot> {
        let mut v = Vec::new();
        self.visit_params_mut(&mut v);
        v
    }
}

impl Layer for DpnoModel {
    fn run(&self, x: &Tensor) -> Tensor {
        self.forward(x).unwrap()
    }
    fn back(&mut self, x: &Tensor, g: &Tensor) -> Tensor {
        let (_, cache) = self.forward_train(x).unwrap();
        self.zero_grad();
        self.backward(&cache, g).unwrap()
    }
    fn slots(&self) -> Vec<&dyn ParamSlot> {
        self.params()
    }
    fn slots_mut(&mut self) -> Vec<&mut dyn ParamSlot> {
        self.params_mut()
    }
}

fn flat<L: Layer>(l: &L, grads: bool) -> Vec<f64> {
    l.slots()
        .iter()
        .flat_map(|p| if grads { p.grads() } else { p.values() }.to_vec())
        .collect()
}

fn set_flat<L: Layer>(l: &mut L, x: &[f64]) {
    let mut off = 0;
    for p in l.slots_mut() {
        let n = p.numel();
        p.values_mut().copy_from_slice(&x[off..off + n]);
        off += n;
    }
}

/// Worst relative error of input and parameter gradients of `<proj, layer(x)>`.
fn check_layer<L: Layer>(layer: &L, x: &Tensor, seed: u64, coords: Option<usize>) -> f64 {
    let mut l = layer.clone();
    let y = l.run(x);
    let proj = projection(y.len(), seed);
    for p in l.slots_mut() {
        p.zero_grad();
    }
    let gx = l.back(x, &with_data(&y, &proj));
    let check = GradCheck {
        coords,
        seed,
        ..GradCheck::default()
    };
    let ex = check.max_rel_error(|v| dot(&l.run(&with_data(x, v)), &proj), x.data(), gx.data());
    let point = flat(&l, false);
    if point.is_empty() {
        return ex;
    }
    let analytic = flat(&l, true);
    let ep = check.max_rel_error(
        |v| {
            let mut m = l.clone();
            set_flat(&mut m, v);
            dot(&m.run(x), &proj)
        },
        &point,
        &analytic,
    );
    ex.max(ep)
}

fn check_fn(
    f: impl Fn(&Tensor) -> Tensor,
    grad: impl Fn(&Tensor, &Tensor) -> Tensor,
    x: &Tensor,
    seed: u64,
) -> f64 {
    let y = f(x);
    let proj = projection(y.len(), seed);
    let gx = grad(x, &with_data(&y, &proj));
    GradCheck::default().max_rel_error(|v| dot(&f(&with_data(x, v)), &proj), x.data(), gx.data())
}

fn check_loss(
    loss: impl Fn(&Tensor, &Tensor) -> dpno::Result<(f64, Tensor)>,
    pred: &Tensor,
    target: &Tensor,
) -> f64 {
    let (_, g) = loss(pred, target).unwrap();
    GradCheck::default().max_rel_error(
        |v| loss(&with_data(pred, v), target).unwrap().0,
        pred.data(),
        g.data(),
    )
}

fn small_dpno(variant: Variant, seed: u64) -> DpnoConfig {
    DpnoConfig {
        in_channels: 2,
        out_channels: 1,
        width: 6,
        levels: 2,
        blocks_per_level: 2,
        modes_a: vec![[4, 4], [3, 3], [2, 2]],
        modes_b: vec![[2, 2], [1, 2], [1, 1]],
        variant,
        seed,
        ..DpnoConfig::default()
    }
}

#[test]
fn criterion_01_gradient_suite() {
    let _g = exclusive();
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    let mut e2e: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[2, 3, 8, 8], &mut rng);
        note("conv3x3", check_layer(&Conv3x3::new("c", 3, 4, &mut rng), &x, seed, None));
        note("pointwise", check_layer(&PointwiseLinear::new("p", 3, 4, &mut rng), &x, seed, None));
        let sc = SpectralConvLayer::new("s", 3, 4, (3, 2), &mut rng).unwrap();
        note("spectral", check_layer(&sc, &x, seed, None));
        note("gelu", check_fn(gelu, |x, g| gelu_backward(x, g).unwrap(), &x, seed));
        note(
            "avgpool2",
            check_fn(|x| avgpool2(x).unwrap(), |_, g| avgpool2_backward(g).unwrap(), &x, seed),
        );
        note(
            "upsample2",
            check_fn(
                |x| upsample_nearest2(x).unwrap(),
                |_, g| upsample_nearest2_backward(g).unwrap(),
                &x,
                seed,
            ),
        );
        let t = random(&[2, 3, 8, 8], &mut rng);
        note("mse", check_loss(mse_loss, &x, &t));
        note("relative_l2", check_loss(relative_l2_loss, &x, &t));
        let v = random(&[2, 3, 8, 8], &mut rng);
        for variant in [Variant::Parallel, Variant::Serial] {
            let mut extra = ChaCha8Rng::seed_from_u64(seed + 100);
            let b =
                OperatorBlock::new("b", 3, (3, 3), (2, 1), variant, true, &mut rng, &mut extra).unwrap();
            note(
                if variant == Variant::Parallel { "block" } else { "serial block" },
                check_layer(&b, &v, seed, None),
            );
            let model = DpnoModel::new(&small_dpno(variant, seed)).unwrap();
            let a = random(&[2, 2, 16, 16], &mut rng);
            e2e = e2e.max(check_layer(&model, &a, seed, Some(12)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let layer_max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = layer_max < 1e-5 && e2e < 1e-4 && secs < 120.0;
    let detail = format!(
        "20 seeds; layers max {layer_max:.2e} (< 1e-5) {:?}; end-to-end {e2e:.2e} (< 1e-4); {secs:.1}s (< 120s)",
        worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>()
    );
    report(1, "gradient suite", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_02_fft() {
    let _g = exclusive();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut dft, mut parseval, mut round): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for h in 1..=8 {
        for w in 1..=8 {
            let x = random(&[h, w], &mut rng);
            let half = fft2_forward(&x).unwrap();
            let full = full_spectrum(&half, w).unwrap();
            dft = dft.max(full.max_abs_diff(&dft2_reference(&x).unwrap()));
            let energy: f64 = full.data().iter().map(|c| c.norm_sqr()).sum::<f64>() / (h * w) as f64;
            parseval = parseval.max((energy - x.norm_sq()).abs() / x.norm_sq());
            round = round.max(fft2_inverse(&half, w).unwrap().max_abs_diff(&x));
        }
    }
    let x = random(&[2, 3, 8, 6], &mut rng);
    round = round.max(fft2_inverse(&fft2_forward(&x).unwrap(), 6).unwrap().max_abs_diff(&x));
    let pass = dft < 1e-10 && parseval < 1e-9 && round < 1e-10;
    let detail = format!(
        "all HxW <= 8x8: DFT {dft:.1e} (< 1e-10), Parseval {parseval:.1e} (< 1e-9), round trip {round:.1e} (< 1e-10)"
    );
    report(2, "FFT correctness", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_03_darcy_oracle() {
    let _g = exclusive();
    let start = Instant::now();
    let sizes = [32usize, 64, 128];
    let errs: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let h = 1.0 / (n - 1) as f64;
            let exact = |i: usize, j: usize| (PI * i as f64 * h).sin() * (PI * j as f64 * h).sin();
            let f = Tensor::from_fn2(n, n, |i, j| 2.0 * PI * PI * exact(i, j));
            let u = darcy_solve_fd(&Tensor::full(&[n, n], 1.0), Forcing::Field(&f)).unwrap().u;
            let mut e: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    e = e.max((u.get(&[i, j]) - exact(i, j)).abs());
                }
            }
            e
        })
        .collect();
    let orders: Vec<f64> = (0..2)
        .map(|k| {
            let r = (sizes[k + 1] - 1) as f64 / (sizes[k] - 1) as f64;
            (errs[k] / errs[k + 1]).ln() / r.ln()
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = orders.iter().all(|o| (o - 2.0).abs() <= 0.2) && secs < 60.0;
    let detail = format!("orders {orders:.3?} (2.0 +/- 0.2); errors {errs}; {secs:.1}s (< 60s)", errs = errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", "));
    report(3, "Darcy oracle", pass, &detail);
    assert!(pass, "{detail}");
}

fn ns_grf(n: usize, seed: u64) -> Tensor {
    let p = NsParams::default();
    let g = grf_sample(&GrfSpec {
        resolution: n,
        tau: p.tau,
        alpha: p.alpha,
        sigma: p.sigma,
        seed,
    })
    .unwrap();
    let m = g.sum() / g.len() as f64;
    g.map(|v| v - m)
}

#[test]
fn criterion_04_ns_oracle() {
    let _g = exclusive();
    let cfg = |t_final: f64, dt: f64, forcing: f64, nu: f64| NsConfig {
        nu,
        dt,
        t_final,
        record_stride: (1.0 / dt).round() as usize / 10,
        forcing_amplitude: forcing,
    };

    let w0 = ns_grf(32, 3).map(|v| v + 0.25);
    let tr = ns_rollout(&w0, &cfg(1.0, 1e-3, 0.1, 1e-3)).unwrap();
    let m0 = w0.sum() / w0.len() as f64;
    let drift = (0..tr.omega.shape()[0])
        .map(|t| {
            let s = tr.omega.outer(t);
            (s.sum() / s.len() as f64 - m0).abs()
        })
        .fold(0.0, f64::max);

    let nu = 1e-3;
    let single = Tensor::from_fn2(32, 32, |i, _| (2.0 * PI * i as f64 / 32.0).cos());
    let tr = ns_rollout(&single, &cfg(1.0, 1e-3, 0.0, nu)).unwrap();
    let last = tr.omega.outer(tr.omega.shape()[0] - 1);
    let decay = last.max_abs_diff(&single.scale((-4.0 * PI * PI * nu).exp()));

    let w0 = ns_grf(32, 8);
    let at_one = |dt: f64| {
        let c = NsConfig {
            record_stride: (1.0 / dt).round() as usize,
            ..cfg(1.0, dt, 0.1, 1e-3)
        };
        ns_rollout(&w0, &c).unwrap().omega.outer(1)
    };
    let halving = at_one(1e-3).max_abs_diff(&at_one(5e-4));

    let pass = drift < 1e-10 && decay < 1e-4 && halving < 1e-5;
    let detail = format!(
        "mean drift {drift:.1e} (< 1e-10); decay of cos(2 pi x) vs exp(-4 pi^2 nu t) {decay:.1e} (< 1e-4); dt halving {halving:.1e} (< 1e-5)"
    );
    report(4, "NS oracle", pass, &detail);
    assert!(pass, "{detail}");
}

/// Real field whose spectrum vanishes on `mask` (a half-spectrum indicator).
fn outside(mask: &Tensor, channels: usize, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let x = random(&[1, channels, n, n], rng);
    let mut spec = fft2_forward(&x).unwrap();
    let plane = n * half_width(n);
    for (k, c) in spec.data_mut().iter_mut().enumerate() {
        if mask.data()[k % plane] != 0.0 {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    fft2_inverse(&spec, n).unwrap()
}

#[test]
fn criterion_05_band_limit_and_coverage() {
    let _g = exclusive();
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut extra = ChaCha8Rng::seed_from_u64(6);
    let block =
        OperatorBlock::new("b", 2, (6, 2), (2, 6), Variant::Parallel, true, &mut rng, &mut extra).unwrap();

    let mut leak: f64 = 0.0;
    for (layer, branch) in [(&block.branch_a, Branch::A), (&block.branch_b, Branch::B)] {
        let closed = conjugate_closure(&layer.retained_mask(n, n).unwrap(), n).unwrap();
        let x = outside(&closed, 2, n, &mut rng);
        let y = block.branch_response(branch, &x).unwrap();
        leak = leak.max(y.max_abs() / x.max_abs());
    }

    let ma = block.branch_a.retained_mask(n, n).unwrap();
    let mb = block.branch_b.retained_mask(n, n).unwrap();
    let union = Tensor::new(ma.shape().to_vec(), ma.data().iter().zip(mb.data()).map(|(a, b)| a.max(*b)).collect()).unwrap();
    let expect_union = conjugate_closure(&union, n).unwrap();
    let expect_a = conjugate_closure(&ma, n).unwrap();
    let both = block.probe_modes(Branch::Both, n, n).unwrap();
    let only_a = block.probe_modes(Branch::A, n, n).unwrap();
    let count = |t: &Tensor| t.sum() as usize;
    let contains = both.data().iter().zip(only_a.data()).all(|(u, a)| u >= a);
    let pass = leak < 1e-12
        && both == expect_union
        && only_a == expect_a
        && contains
        && count(&both) > count(&only_a);
    let detail = format!(
        "out-of-band response {leak:.1e} (exact zero up to 1e-12); responsive cells: A {} / A|B {} (closure of retained union {}), strict superset {}",
        count(&only_a),
        count(&both),
        count(&expect_union),
        contains && count(&both) > count(&only_a)
    );
    report(5, "band limit and coverage", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_06_resolution_transfer() {
    let _g = exclusive();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut extra = ChaCha8Rng::seed_from_u64(7);
    let mut block =
        OperatorBlock::new("b", 3, (8, 8), (4, 4), Variant::Parallel, false, &mut rng, &mut extra).unwrap();
    block.activate = false;

    let n = 32;
    let w2 = half_width(n);
    let mut spec = ComplexTensor::zeros(&[2, 3, n, w2]);
    for b in 0..2 {
        for c in 0..3 {
            for k1 in 0..n {
                for k2 in 0..w2 {
                    let kx = if k1 <= n / 2 { k1 as f64 } else { k1 as f64 - n as f64 };
                    if kx.abs() < 10.0 && k2 < 10 && (k2 > 0 || kx >= 0.0) {
                        let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                        spec.set(&[b, c, k1, k2], v * (n * n) as f64);
                    }
                }
            }
        }
    }
    let x32 = fft2_inverse(&spec, n).unwrap();
    let x64 = spectral_upsample(&x32, 64, 64).unwrap();
    let y32 = block.forward(&x32).unwrap();
    let y64 = block.forward(&x64).unwrap();
    let diff = spectral_upsample(&y32, 64, 64).unwrap().max_abs_diff(&y64);
    let pass = diff < 1e-8;
    let detail = format!("max |upsample(block(x32)) - block(x64)| = {diff:.1e} (< 1e-8), output scale {:.2}", y64.max_abs());
    report(6, "resolution transfer", pass, &detail);
    assert!(pass, "{detail}");
}

// End-to-end training shared by criteria 7 and 9.

const CRITERION_7_THRESHOLD: f64 = 0.08;
const CRITERION_7_MINUTES: f64 = 45.0;

struct Trained {
    data: FieldDataset,
    state: TrainState,
    metrics: EvalMetrics,
    minutes: f64,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let data = dataset_build(&DatasetSpec::new(Task::Darcy, 400, 100, 64, 7)).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            eval_every: 10,
            ..TrainConfig::default()
        };
        let mut log = |r: &MetricRecord| {
            if !r.test_mse.is_nan() {
                let _ = writeln!(
                    std::io::stderr(),
                    "    [criterion 7] epoch {:>3} train {:.3e} test rel L2 {:.4} ({:.0}s)",
                    r.epoch,
                    r.train_loss,
                    r.test_rel_l2,
                    r.wall_seconds
                );
            }
        };
        let out = train_run(
            &DpnoConfig::new(1, 1),
            &data,
            &cfg,
            RunOptions {
                run_dir: None,
                on_epoch: Some(&mut log),
            },
        )
        .unwrap();
        Trained {
            data,
            state: out.state,
            metrics: out.final_metrics,
            minutes: start.elapsed().as_secs_f64() / 60.0,
        }
    })
}

#[test]
fn criterion_07_end_to_end_learning() {
    let _g = exclusive();
    let t = trained();
    let accurate = t.metrics.rel_l2 < CRITERION_7_THRESHOLD;
    let fast = t.minutes < CRITERION_7_MINUTES;
    let pass = accurate && fast;
    let detail = format!(
        "Darcy 400/100 at 64x64, width 32, levels 2, 2 blocks/level, modes 16/8, 200 epochs: test rel L2 {:.4} (< {CRITERION_7_THRESHOLD}), test MSE {:.3e}; data + training {:.1} min (< {CRITERION_7_MINUTES} min)",
        t.metrics.rel_l2, t.metrics.mse, t.minutes
    );
    report(7, "end-to-end learning", pass, &detail);
    assert!(accurate, "{detail}");
    assert!(fast, "{detail}");
}

#[test]
fn criterion_08_ablation_direction() {
    let _g = exclusive();
    let data = dataset_build(&DatasetSpec::new(Task::Darcy, 100, 50, 32, 8)).unwrap();
    let model = DpnoConfig {
        width: 16,
        levels: 1,
        base_modes: [8, 8],
        ..DpnoConfig::new(1, 1)
    };
    let cfg = TrainConfig {
        epochs: 30,
        eval_every: 30,
        ..TrainConfig::default()
    };
    let rep = ablation_run(&model, &data, &cfg, &[0, 1, 2]).unwrap();
    let same_order = rep.rows.iter().all(|r| r.parallel_order == r.serial_order);
    let pass = rep.mean_parallel_mse <= 1.05 * rep.mean_serial_mse && same_order;
    let detail = format!(
        "3 seeds, Darcy 100/50 at 32x32, width 16, 1 level, 30 epochs: mean MSE parallel {:.3e} vs serial {:.3e}, ratio {:.3} (<= 1.05); per seed {:?}",
        rep.mean_parallel_mse,
        rep.mean_serial_mse,
        rep.ratio(),
        rep.rows
            .iter()
            .map(|r| format!("{:.2e}/{:.2e}", r.parallel.mse, r.serial.mse))
            .collect::<Vec<_>>()
    );
    report(8, "ablation direction", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_09_zero_shot_shape() {
    let _g = exclusive();
    let t = trained();
    let d32 = dataset_build(&DatasetSpec::new(Task::Darcy, 1, 100, 32, 9)).unwrap();
    let d128 = dataset_build(&DatasetSpec::new(Task::Darcy, 1, 100, 128, 9)).unwrap();
    let model = ZeroShotModel {
        train_resolution: 64,
        model: &t.state.model,
        norm: &t.state.norm,
    };
    let table = zero_shot_eval(&[model], &[&d32, &t.data, &d128], 20);
    let native = evaluate(&t.state.model, &t.state.norm, &t.data, &t.data.test, 7).unwrap();
    let cell = |r| match table.get(64, r) {
        Some(ZeroShotCell::Done(m)) => Some(*m),
        _ => None,
    };
    let diag = cell(64);
    let off = [cell(32), cell(128)];
    let pass = diag == Some(native)
        && off.iter().all(|c| matches!((c, diag), (Some(o), Some(d)) if o.mse > d.mse));
    let detail = format!(
        "trained at 64, test MSE at 32/64/128: {}; diagonal equals native evaluation: {}",
        [cell(32), diag, cell(128)]
            .iter()
            .map(|c| c.map_or("n/a".to_string(), |m| format!("{:.3e}", m.mse)))
            .collect::<Vec<_>>()
            .join(" / "),
        diag == Some(native)
    );
    report(9, "zero-shot protocol shape", pass, &detail);
    assert!(pass, "{detail}\n{}", table.to_text());
}

#[test]
fn criterion_10_spectrum_dominance() {
    let _g = exclusive();
    let data = dataset_build(&DatasetSpec::new(Task::Darcy, 40, 10, 64, 10)).unwrap();
    let rep = spectrum_report(&data.targets).unwrap();
    let min = rep.fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    let pass = min > 0.9;
    let detail = format!(
        "{} Darcy solutions at 64x64: energy within radius {}: mean {:.5}, min {:.5} (> 0.9)",
        rep.fractions.len(),
        rep.radius,
        rep.mean_fraction(),
        min
    );
    report(10, "spectrum dominance", pass, &detail);
    assert!(pass, "{detail}");
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_11_reproducibility() {
    let _g = exclusive();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let spec = DatasetSpec::new(Task::Darcy, 8, 4, 32, 11);
    for name in ["data_a", "data_b"] {
        dataset_build(&spec).unwrap().save(&root.join(name)).unwrap();
    }
    let ns = DatasetSpec {
        ns: NsParams {
            solver: NsConfig {
                t_final: 2.0,
                record_stride: 100,
                ..NsConfig::default()
            },
            ..NsParams::default()
        },
        ..DatasetSpec::new(Task::Ns, 2, 1, 16, 11)
    };
    for name in ["ns_a", "ns_b"] {
        dataset_build(&ns).unwrap().save(&root.join(name)).unwrap();
    }
    let data_same = files(&root.join("data_a")) == files(&root.join("data_b"))
        && files(&root.join("ns_a")) == files(&root.join("ns_b"));

    let data = FieldDataset::load(&root.join("data_a")).unwrap();
    let model = DpnoConfig {
        width: 8,
        levels: 1,
        base_modes: [6, 6],
        ..DpnoConfig::new(1, 1)
    };
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 4,
        checkpoint_every: 3,
        ..TrainConfig::default()
    };
    let run = |name: &str| {
        let dir = root.join(name);
        let out = train_run(&model, &data, &cfg, RunOptions { run_dir: Some(&dir), on_epoch: None }).unwrap();
        (files(&dir), out.final_metrics)
    };
    let (run_a, metrics_a) = run("run_a");
    let (run_b, _) = run("run_b");
    let runs_same = run_a == run_b && run_a.iter().any(|(f, _)| f.ends_with("metrics.csv"));

    let resumed_dir = root.join("run_c");
    let state = checkpoint_resume(&root.join("run_a/checkpoints/epoch-00003"), 6).unwrap();
    let resumed = continue_training(state, &data, RunOptions { run_dir: Some(&resumed_dir), on_epoch: None }).unwrap();
    let final_files = |f: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        f.iter().filter(|(n, _)| n.starts_with("final") || n == "metrics.csv").cloned().collect()
    };
    let resume_same = resumed.final_metrics == metrics_a && final_files(&files(&resumed_dir)) == final_files(&run_a);

    let pass = data_same && runs_same && resume_same;
    let detail = format!(
        "datasets byte-identical {data_same}; {} run files byte-identical {runs_same}; resume from epoch 3 matches final metrics and files {resume_same}",
        run_a.len()
    );
    report(11, "reproducibility", pass, &detail);
    assert!(pass, "{detail}");
}
