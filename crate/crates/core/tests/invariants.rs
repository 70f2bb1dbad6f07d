mod common;

use l0sparse::features::LibrarySpec;
use l0sparse::gates::{
    deterministic_gates, gate_cdf, penalty_and_grad, prob_active, GateConfig, GateVector,
};
use l0sparse::layers::{mse_loss, DenseLayer, GateGranularity, L0DenseLayer, Matrix, Parameters};
use l0sparse::models::{
    evaluate_equation, extract_equation_exact, parse_equation, read_checkpoint, write_checkpoint,
    Model, ModelSpec, Target,
};
use l0sparse::pendulum::{collect_dataset, load_dataset, save_dataset};
use l0sparse::training::{fit, Dataset, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(seed: u64, rows: usize, cols: usize, scale: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn sindy_with_gates(seed: u64, la: &[f64]) -> Model {
    let spec = ModelSpec::l0_sindy(3, 2, LibrarySpec::poly_fourier(2, 1))
        .with_granularity(GateGranularity::PerElement);
    let mut m = Model::build(spec, seed).unwrap();
    let mut layers = m.gated_layers_mut();
    for (i, v) in layers[0].gates.log_alpha_mut().iter_mut().enumerate() {
        *v = la[i % la.len()];
    }
    m
}

#[test]
fn quadrature_oracle_integrates_to_one() {
    let total = common::concrete_cdf_quadrature(1.0 - 1e-15, 0.7, 2.0 / 3.0);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prob_active_is_strictly_increasing(a in -20.0f64..20.0, step in 1e-3f64..5.0) {
        let cfg = GateConfig::default();
        let p = prob_active(&GateVector::new(vec![a, a + step]), &cfg);
        prop_assert!(p[0] < p[1]);
    }

    #[test]
    fn penalty_is_additive_and_monotone(
        la in prop::collection::vec(-8.0f64..8.0, 1..20),
        j in any::<prop::sample::Index>(),
    ) {
        let cfg = GateConfig::default();
        let (total, grad) = penalty_and_grad(&GateVector::new(la.clone()), &cfg);
        let parts: f64 = la
            .iter()
            .map(|&v| penalty_and_grad(&GateVector::new(vec![v]), &cfg).0)
            .sum();
        prop_assert!((total - parts).abs() < 1e-12);
        prop_assert!(grad.iter().all(|&g| g > 0.0));
        let mut bumped = la.clone();
        bumped[j.index(la.len())] += 0.5;
        prop_assert!(penalty_and_grad(&GateVector::new(bumped), &cfg).0 > total);
    }

    #[test]
    fn penalty_equals_one_minus_cdf_at_stretched_zero(la in -30.0f64..30.0) {
        let cfg = GateConfig::default();
        let p = prob_active(&GateVector::new(vec![la]), &cfg)[0];
        prop_assert!((p - (1.0 - gate_cdf(0.0, la, &cfg, true).unwrap())).abs() <= 1e-12);
    }

    #[test]
    fn deterministic_gate_is_clamped_and_monotone(a in -10.0f64..10.0, step in 0.0f64..3.0) {
        let cfg = GateConfig::default();
        let z = deterministic_gates(&GateVector::new(vec![a, a + step]), &cfg);
        prop_assert!(z.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(z[0] <= z[1]);
    }

    #[test]
    fn closing_a_gate_never_adds_active_parameters(
        la in prop::collection::vec(-4.0f64..4.0, 1..40),
        j in any::<prop::sample::Index>(),
        seed in 0u64..1000,
    ) {
        let mut m = sindy_with_gates(seed, &la);
        let before = m.sparsity_counts().unwrap();
        let mut layers = m.gated_layers_mut();
        let gates = layers[0].gates.log_alpha_mut();
        let k = j.index(gates.len());
        gates[k] = -50.0;
        drop(layers);
        let after = m.sparsity_counts().unwrap();
        prop_assert!(after.active_parameters <= before.active_parameters);
        prop_assert!(after.active_gates <= before.active_gates);
        prop_assert!(after.active_parameters <= after.total_parameters);
    }

    #[test]
    fn open_l0_layer_reproduces_dense_bit_for_bit(
        seed in 0u64..1000,
        rows in 1usize..12,
        per_element in any::<bool>(),
    ) {
        let w = random_matrix(seed, 5, 4, 1.0);
        let b: Vec<f64> = random_matrix(seed + 1, 1, 5, 1.0).data().to_vec();
        let x = random_matrix(seed + 2, rows, 4, 2.0);
        let gran = if per_element { GateGranularity::PerElement } else { GateGranularity::PerInput };
        let n = if per_element { 20 } else { 4 };
        let l0 = L0DenseLayer::new(
            w.clone(),
            Some(b.clone()),
            GateVector::filled(n, 10.0),
            gran,
            GateConfig::default(),
        )
        .unwrap();
        let dense = DenseLayer::new(w, Some(b)).unwrap();
        prop_assert_eq!(l0.apply(&x).unwrap(), dense.apply(&x).unwrap());
    }

    #[test]
    fn masking_is_linear(seed in 0u64..1000, col in 0usize..4, c in -3.0f64..3.0) {
        let w = random_matrix(seed, 3, 4, 1.0);
        let x = random_matrix(seed + 1, 6, 4, 2.0);
        let mut scaled = w.clone();
        for r in 0..3 {
            scaled[(r, col)] *= c;
        }
        let layer = |w: Matrix| {
            L0DenseLayer::new(
                w,
                None,
                GateVector::new(vec![0.3, -0.2, 1.0, 0.1]),
                GateGranularity::PerInput,
                GateConfig::default(),
            )
            .unwrap()
        };
        let mut only = Matrix::zeros(3, 4);
        for r in 0..3 {
            only[(r, col)] = w[(r, col)];
        }
        let y0 = layer(w).apply(&x).unwrap();
        let y1 = layer(scaled).apply(&x).unwrap();
        let contrib = layer(only).apply(&x).unwrap();
        for i in 0..y0.data().len() {
            let expected = y0.data()[i] + (c - 1.0) * contrib.data()[i];
            prop_assert!((y1.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_is_nonnegative_and_zero_only_on_match(seed in 0u64..1000, same in any::<bool>()) {
        let a = random_matrix(seed, 4, 3, 1.0);
        let b = if same { a.clone() } else { random_matrix(seed + 1, 4, 3, 1.0) };
        let (l, _) = mse_loss(&a, &b).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, a == b);
    }

    #[test]
    fn equations_reproduce_the_model(
        la in prop::collection::vec(-4.0f64..4.0, 1..30),
        seed in 0u64..1000,
    ) {
        let m = sindy_with_gates(seed, &la);
        let x = random_matrix(seed + 7, 20, 3, 3.0);
        let y = m.predict_input(&x).unwrap();
        for (o, eq) in extract_equation_exact(&m).unwrap().iter().enumerate() {
            let terms = parse_equation(eq, 3).unwrap();
            for r in 0..x.rows() {
                prop_assert!((evaluate_equation(&terms, x.row(r)) - y[(r, o)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, la in -5.0f64..5.0) {
        let mut m = Model::build(ModelSpec::sparse_fcnn(4, 1).with_h_dim(5), seed).unwrap();
        m.gated_layers_mut()[1].gates.log_alpha_mut()[0] = la;
        let bytes = write_checkpoint(&m, Some(Target::Reward)).unwrap();
        let (back, meta) = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(meta.target, Some(Target::Reward));
        prop_assert_eq!(back.param_values(), m.param_values());
        prop_assert_eq!(write_checkpoint(&back, Some(Target::Reward)).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn datasets_round_trip(episodes in 1usize..4, steps in 1usize..30, seed in any::<u64>()) {
        let buf = collect_dataset(episodes, steps, seed).unwrap();
        prop_assert_eq!(buf.len(), episodes * (steps + 1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_dataset(&buf, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert!(buf.records().eq(back.records()));
    }

    #[test]
    fn training_is_deterministic(seed in 0u64..100, lambda in 0.0f64..2.0) {
        let x = random_matrix(seed, 40, 2, 1.0);
        let y = random_matrix(seed + 1, 40, 1, 1.0);
        let data = Dataset::new(x, y).unwrap();
        let spec = ModelSpec::l0_sindy(2, 1, LibrarySpec::polynomial(2));
        let cfg = TrainConfig { epochs: 3, batch_size: 16, lambda: Some(lambda), seed, ..Default::default() };
        let run = || fit(Model::build(spec.clone(), seed).unwrap(), &data, &data, &cfg).unwrap();
        let (ma, a) = run();
        let (mb, b) = run();
        prop_assert_eq!(a.to_csv(false), b.to_csv(false));
        prop_assert_eq!(ma.param_values(), mb.param_values());
    }
}
