use dpno::diff::{projection, GradCheck};
use dpno::model::{DpnoConfig, DpnoModel, Variant};
use dpno::Tensor;

fn tiny_config(variant: Variant) -> DpnoConfig {
    DpnoConfig {
        in_channels: 2,
        out_channels: 1,
        width: 8,
        levels: 2,
        blocks_per_level: 2,
        modes_a: vec![[4, 4], [3, 3], [2, 2]],
        modes_b: vec![[2, 2], [1, 1], [1, 1]],
        variant,
        seed: 5,
        ..DpnoConfig::default()
    }
}

fn input(shape: &[usize], seed: u64) -> Tensor {
    Tensor::new(shape.to_vec(), projection(shape.iter().product(), seed)).unwrap()
}

#[test]
fn output_shape_follows_input_grid() {
    let model = DpnoModel::new(&DpnoConfig::new(3, 1)).unwrap();
    let y = model.forward(&input(&[2, 3, 64, 64], 1)).unwrap();
    assert_eq!(y.shape(), &[2, 1, 64, 64]);
    assert!(model.forward(&input(&[1, 3, 63, 63], 1)).is_err());
    assert!(model.forward(&input(&[1, 2, 64, 64], 1)).is_err());
}

#[test]
fn param_count_matches_closed_form() {
    for variant in [Variant::Parallel, Variant::Serial] {
        let cfg = DpnoConfig {
            variant,
            ..DpnoConfig::new(3, 1)
        };
        let model = DpnoModel::new(&cfg).unwrap();
        assert_eq!(model.param_count(), model.config().param_count());
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    let cfg = tiny_config(Variant::Parallel);
    assert_eq!(DpnoModel::new(&cfg).unwrap(), DpnoModel::new(&cfg).unwrap());
    let other = DpnoModel::new(&DpnoConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(
        DpnoModel::new(&tiny_config(Variant::Parallel)).unwrap(),
        other
    );
}

#[test]
fn serial_variant_shares_parallel_parameters() {
    let par = DpnoModel::new(&tiny_config(Variant::Parallel)).unwrap();
    let ser = DpnoModel::new(&tiny_config(Variant::Serial)).unwrap();
    let ser_params = ser.params();
    for p in par.params() {
        let q = ser_params.iter().find(|q| q.name() == p.name()).unwrap();
        assert_eq!(p.values(), q.values(), "{}", p.name());
    }
    assert!(ser.params().len() > par.params().len());
}

#[test]
fn training_forward_matches_evaluation_forward() {
    let model = DpnoModel::new(&tiny_config(Variant::Serial)).unwrap();
    let a = input(&[2, 2, 16, 16], 3);
    let (y, _) = model.forward_train(&a).unwrap();
    assert_eq!(y, model.forward(&a).unwrap());
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for variant in [Variant::Parallel, Variant::Serial] {
        let mut model = DpnoModel::new(&tiny_config(variant)).unwrap();
        let a = input(&[2, 2, 16, 16], 8);
        let (y, cache) = model.forward_train(&a).unwrap();
        let proj = projection(y.len(), 9);
        let g = Tensor::new(y.shape().to_vec(), proj.clone()).unwrap();
        model.zero_grad();
        let ga = model.backward(&cache, &g).unwrap();
        let loss = |m: &DpnoModel, a: &Tensor| -> f64 {
            let y = m.forward(a).unwrap();
            y.data().iter().zip(&proj).map(|(p, q)| p * q).sum()
        };

        let check = GradCheck::sampled(10, 21);
        let err = check.max_rel_error(
            |x| {
                loss(
                    &model,
                    &Tensor::new(a.shape().to_vec(), x.to_vec()).unwrap(),
                )
            },
            a.data(),
            ga.data(),
        );
        assert!(err < 1e-4, "{variant}: input gradient error {err}");

        let flat = |m: &DpnoModel, grads: bool| -> Vec<f64> {
            m.params()
                .iter()
                .flat_map(|p| if grads { p.grads() } else { p.values() }.to_vec())
                .collect()
        };
        let point = flat(&model, false);
        let analytic = flat(&model, true);
        let set = |m: &mut DpnoModel, x: &[f64]| {
            let mut off = 0;
            for p in m.params_mut() {
                let n = p.numel();
                p.values_mut().copy_from_slice(&x[off..off + n]);
                off += n;
            }
        };
        for seed in 0..4 {
            let err = GradCheck::sampled(10, seed).max_rel_error(
                |x| {
                    let mut m = model.clone();
                    set(&mut m, x);
                    loss(&m, &a)
                },
                &point,
                &analytic,
            );
            assert!(
                err < 1e-4,
                "{variant} seed {seed}: parameter gradient error {err}"
            );
        }
    }
}
