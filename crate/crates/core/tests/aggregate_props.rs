mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma as ln_gamma_oracle;

use common::{central_diff, rel_err};
use fedagg::aggregate::special::{gamma_p, gamma_pdf, ln_gamma};
use fedagg::aggregate::{
    alpha_grad, dirichlet_backward, dirichlet_logpdf, dirichlet_mode, dirichlet_sample,
    dirichlet_sample_grad, mix_models, mode_weights, sample_weights, softmax_backward, softmax_map,
    AggWeights, Concentration, Granularity, KpMatrix, Parameterization, DIRICHLET_MARGIN,
    SIMPLEX_TOL,
};
use fedagg::nn::{Layout, ParamVector};

fn softmax_column(beta: &[f64]) -> AggWeights {
    let c = Concentration::new(
        KpMatrix::from_columns(&[beta.to_vec()]).unwrap(),
        Parameterization::Softmax,
    )
    .unwrap();
    softmax_map(&c).unwrap()
}

fn column_sums_ok(a: &AggWeights) -> bool {
    a.values()
        .columns()
        .all(|c| (c.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL && c.iter().all(|&v| v > 0.0))
}

fn concentration() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0 + DIRICHLET_MARGIN..20.0, 2..6)
}

proptest! {
    #[test]
    fn softmax_output_is_on_the_simplex(beta in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        prop_assert!(column_sums_ok(&softmax_column(&beta)));
    }

    #[test]
    fn softmax_is_shift_invariant(beta in prop::collection::vec(-5.0f64..5.0, 2..6), shift in -50.0f64..50.0) {
        let moved: Vec<f64> = beta.iter().map(|b| b + shift).collect();
        let (a, b) = (softmax_column(&beta), softmax_column(&moved));
        for (x, y) in a.column(0).iter().zip(b.column(0)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_rows_sum_to_zero_and_match_differences(
        beta in prop::collection::vec(-3.0f64..3.0, 2..6),
        seed in any::<u64>(),
    ) {
        let k = beta.len();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let up: Vec<f64> = (0..k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let a = softmax_column(&beta);
        let d = softmax_backward(&KpMatrix::from_columns(std::slice::from_ref(&up)).unwrap(), &a).unwrap();
        prop_assert!(d.column(0).iter().sum::<f64>().abs() < 1e-12);
        let lin = |b: &[f64]| softmax_column(b).column(0).iter().zip(&up).map(|(x, u)| x * u).sum::<f64>();
        let fd: Vec<f64> = (0..k)
            .map(|j| central_diff(|t| { let mut b = beta.clone(); b[j] += t; lin(&b) }, 1e-3))
            .collect();
        prop_assert!(rel_err(d.column(0), &fd) < 1e-6);
    }

    #[test]
    fn dirichlet_mode_and_samples_are_on_the_simplex(beta in concentration(), seed in any::<u64>()) {
        let c = Concentration::new(KpMatrix::from_columns(std::slice::from_ref(&beta)).unwrap(), Parameterization::Dirichlet).unwrap();
        prop_assert!(column_sums_ok(&mode_weights(&c).unwrap()));
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (a, gammas) = sample_weights(&c, &mut r).unwrap();
        prop_assert!(column_sums_ok(&a));
        prop_assert!(gammas[0].iter().all(|&z| z > 0.0));
    }

    #[test]
    fn sample_jacobian_preserves_the_simplex(beta in concentration(), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let draw = dirichlet_sample(&beta, &mut r);
        let jac = dirichlet_sample_grad(&beta, &draw.gammas).unwrap();
        for j in 0..beta.len() {
            prop_assert!(jac.iter().map(|row| row[j]).sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn mixing_stays_within_the_model_envelope(seed in any::<u64>(), k in 2usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::from_lengths([("a", 3usize), ("b", 2)]);
        let models: Vec<ParamVector> = (0..k)
            .map(|_| ParamVector::new((0..5).map(|_| r.gen_range(-10.0..10.0)).collect(), layout.clone()).unwrap())
            .collect();
        let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..k).map(|_| r.gen_range(0.01..1.0)).collect()).collect();
        let a = AggWeights::new(KpMatrix::from_columns(&cols).unwrap(), Granularity::Layer).unwrap();
        let mixed = mix_models(&models, &a).unwrap();
        for i in 0..5 {
            let lo = models.iter().map(|m| m.values()[i]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m.values()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mixed.values()[i] >= lo - 1e-12 && mixed.values()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn network_alpha_gradient_is_the_sum_of_layer_gradients(seed in any::<u64>(), k in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::from_lengths([("a", 4usize), ("b", 3), ("c", 2)]);
        let mut vec = || ParamVector::new((0..9).map(|_| r.gen_range(-1.0..1.0)).collect(), layout.clone()).unwrap();
        let dw = vec();
        let models: Vec<ParamVector> = (0..k).map(|_| vec()).collect();
        let net = alpha_grad(&dw, &models, Granularity::Network).unwrap();
        let layer = alpha_grad(&dw, &models, Granularity::Layer).unwrap();
        prop_assert_eq!(net, layer.sum_columns());
    }

    #[test]
    fn ln_gamma_matches_an_independent_implementation(x in 0.01f64..170.0) {
        let (got, want) = (ln_gamma(x), ln_gamma_oracle(x));
        prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn gamma_cdf_and_pdf_match_an_independent_implementation(a in 0.2f64..30.0, q in 0.001f64..0.999) {
        let oracle = Gamma::new(a, 1.0).unwrap();
        let x = oracle.inverse_cdf(q);
        prop_assert!((gamma_p(a, x) - oracle.cdf(x)).abs() < 1e-10);
        prop_assert!((gamma_pdf(a, x) - oracle.pdf(x)).abs() < 1e-10 * oracle.pdf(x).max(1.0));
    }
}

#[test]
fn softmax_round_trip_matches_dense_jacobian() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let beta: Vec<f64> = (0..5).map(|_| r.gen_range(-3.0..3.0)).collect();
        let a = softmax_column(&beta);
        for i in 0..5 {
            let mut e = KpMatrix::zeros(5, 1);
            e.set(i, 0, 1.0);
            let row = softmax_backward(&e, &a).unwrap();
            for j in 0..5 {
                let fd = central_diff(
                    |t| {
                        let mut b = beta.clone();
                        b[j] += t;
                        softmax_column(&b).column(0)[i]
                    },
                    1e-3,
                );
                assert!((row.get(j, 0) - fd).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn dirichlet_density_integrates_to_one() {
    // Midpoint rule on the 2-simplex, parameterized by (a1, a2).
    let n = 400;
    let h = 1.0 / n as f64;
    for beta in [
        [1.0, 1.0, 1.0],
        [2.0, 3.0, 4.0],
        [6.0, 6.0, 6.0],
        [1.5, 2.5, 1.2],
    ] {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n - i {
                let (a1, a2) = ((i as f64 + 1.0 / 3.0) * h, (j as f64 + 1.0 / 3.0) * h);
                let a3 = 1.0 - a1 - a2;
                if a3 > 0.0 {
                    total += dirichlet_logpdf(&[a1, a2, a3], &beta).unwrap().exp() * h * h / 2.0;
                }
                if j + 1 < n - i {
                    let (b1, b2) = ((i as f64 + 2.0 / 3.0) * h, (j as f64 + 2.0 / 3.0) * h);
                    let b3 = 1.0 - b1 - b2;
                    if b3 > 0.0 {
                        total +=
                            dirichlet_logpdf(&[b1, b2, b3], &beta).unwrap().exp() * h * h / 2.0;
                    }
                }
            }
        }
        assert!(
            (total - 1.0).abs() < 1e-2,
            "beta {beta:?}: integral {total}"
        );
    }
}

#[test]
fn mode_is_the_grid_argmax_of_the_density() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let n = 200usize;
    for _ in 0..5 {
        let beta: Vec<f64> = (0..3).map(|_| r.gen_range(1.1..8.0)).collect();
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        for i in 1..n {
            for j in 1..n - i {
                let a = [
                    i as f64 / n as f64,
                    j as f64 / n as f64,
                    (n - i - j) as f64 / n as f64,
                ];
                let lp = dirichlet_logpdf(&a, &beta).unwrap();
                if lp > best.0 {
                    best = (lp, a);
                }
            }
        }
        let mode = dirichlet_mode(&beta).unwrap();
        for (m, g) in mode.iter().zip(best.1) {
            assert!((m - g).abs() <= 1.0 / n as f64 + 1e-12);
        }
    }
}

#[test]
fn symmetric_concentration_gives_symmetric_gradient() {
    let c = Concentration::symmetric(3, 1, 4.0, Parameterization::Dirichlet).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let mut grads: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(n)).collect();
    for _ in 0..n {
        let (a, gammas) = sample_weights(&c, &mut r).unwrap();
        // L = sum_k alpha_k^2, symmetric in k.
        let up = KpMatrix::from_columns(&[a.column(0).iter().map(|x| 2.0 * x).collect()]).unwrap();
        let g = dirichlet_backward(&up, &c, &gammas).unwrap();
        for (k, s) in grads.iter_mut().enumerate() {
            s.push(g.get(k, 0));
        }
    }
    let stats: Vec<(f64, f64)> = grads
        .iter()
        .map(|s| {
            let m = s.iter().sum::<f64>() / n as f64;
            let var = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            (m, (var / n as f64).sqrt())
        })
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let se = (stats[i].1.powi(2) + stats[j].1.powi(2)).sqrt();
            assert!((stats[i].0 - stats[j].0).abs() < 4.0 * se, "{stats:?}");
        }
    }
}

#[test]
fn monte_carlo_gradient_uses_the_sampler_consistently() {
    // Pathwise gradient estimated with the library's own sampler against a
    // finite difference of E[L] computed with inverse-CDF draws.
    let beta = [2.0, 3.0, 4.0];
    let c = [1.0, -1.0, 2.0];
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let n = 200_000;
    let mut est = [0.0; 3];
    for _ in 0..n {
        let d = dirichlet_sample(&beta, &mut r);
        let jac = dirichlet_sample_grad(&beta, &d.gammas).unwrap();
        for (j, e) in est.iter_mut().enumerate() {
            *e += (0..3)
                .map(|i| 2.0 * c[i] * d.alpha[i] * jac[i][j])
                .sum::<f64>()
                / n as f64;
        }
    }
    let m = 4000;
    let mut ur = ChaCha8Rng::seed_from_u64(5);
    let us: Vec<[f64; 3]> = (0..m).map(|_| [ur.gen(), ur.gen(), ur.gen()]).collect();
    let expect = |b: &[f64]| {
        us.iter()
            .map(|u| {
                let z: Vec<f64> = (0..3)
                    .map(|k| Gamma::new(b[k], 1.0).unwrap().inverse_cdf(u[k]))
                    .collect();
                let s: f64 = z.iter().sum();
                (0..3).map(|k| c[k] * (z[k] / s).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / m as f64
    };
    let fd: Vec<f64> = (0..3)
        .map(|j| {
            central_diff(
                |t| {
                    let mut b = beta.to_vec();
                    b[j] += t;
                    expect(&b)
                },
                1e-3,
            )
        })
        .collect();
    assert!(rel_err(&est, &fd) < 0.1, "{est:?} vs {fd:?}");
}
