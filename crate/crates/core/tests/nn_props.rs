mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{numeric_grad, random_case, rel_err};
use fedagg::nn::{opt_step, Layout, LossKind, OptState, OptimizerConfig, ParamVector};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn analytic_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (spec, w, batch) = random_case(&mut r);
        let (_, g) = spec.loss_and_grad(&w, &batch).unwrap();
        let err = rel_err(g.values(), &numeric_grad(&spec, &w, &batch));
        prop_assert!(err < 1e-5, "rel err {err:e}");
    }

    #[test]
    fn losses_are_non_negative_and_dice_bounded(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (spec, w, batch) = random_case(&mut r);
        let l = spec.loss(&w, &batch).unwrap();
        prop_assert!(l >= 0.0);
        if spec.loss_kind() == LossKind::SoftDice {
            prop_assert!(l <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn evaluation_is_bit_deterministic(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (spec, w, batch) = random_case(&mut r);
        let a = spec.loss_and_grad(&w, &batch).unwrap();
        let b = spec.loss_and_grad(&w, &batch).unwrap();
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(spec.forward(&w, &batch.inputs).unwrap(), spec.forward(&w, &batch.inputs).unwrap());
    }

    #[test]
    fn param_vector_bytes_round_trip(
        lens in prop::collection::vec(1usize..6, 1..4),
        seed in any::<u64>(),
    ) {
        let layout = Layout::from_lengths(lens.iter().enumerate().map(|(i, &n)| (format!("layer{i}"), n)));
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..layout.total_len()).map(|_| rand::Rng::gen_range(&mut r, -1e3..1e3)).collect();
        let w = ParamVector::new(values, layout).unwrap();
        let bytes = w.to_bytes();
        prop_assert_eq!(bytes.len(), w.serialized_len());
        prop_assert_eq!(ParamVector::from_bytes(&bytes).unwrap(), w);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_for_adam(seed in any::<u64>(), lr in 1e-4f64..1.0) {
        let layout = Layout::from_lengths([("w", 4usize)]);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w = ParamVector::new((0..4).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect(), layout.clone()).unwrap();
        let state = OptState::new(OptimizerConfig::adam(lr), 4);
        let (next, state) = opt_step(state, &w, &ParamVector::zeros(&layout)).unwrap();
        prop_assert_eq!(next, w);
        prop_assert_eq!(state.steps(), 1);
    }
}

#[test]
fn sgd_descends_on_a_quadratic_through_opt_step() {
    let layout = Layout::from_lengths([("w", 3usize)]);
    let target = [1.0, -2.0, 0.5];
    let loss = |w: &ParamVector| {
        w.values()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    };
    let mut w = ParamVector::zeros(&layout);
    let mut state = OptState::new(OptimizerConfig::sgd(0.05), 3);
    let mut prev = loss(&w);
    for _ in 0..100 {
        let g = ParamVector::new(
            w.values()
                .iter()
                .zip(&target)
                .map(|(a, b)| 2.0 * (a - b))
                .collect(),
            layout.clone(),
        )
        .unwrap();
        let (next, s) = opt_step(state, &w, &g).unwrap();
        w = next;
        state = s;
        let l = loss(&w);
        assert!(l < prev);
        prev = l;
    }
}
