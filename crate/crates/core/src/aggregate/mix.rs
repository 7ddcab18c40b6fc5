use super::weights::{AggWeights, Granularity, KpMatrix};
use crate::error::{Error, Result};
use crate::nn::ParamVector;

fn check_models(models: &[ParamVector]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::config("no models to aggregate"))?;
    for m in &models[1..] {
        first.check_same_layout(m)?;
    }
    Ok(())
}

/// Column of `a` that applies to layer `p`.
fn column_for_layer(a: &AggWeights, layers: usize, p: usize) -> Result<&[f64]> {
    match a.groups() {
        1 => Ok(a.column(0)),
        g if g == layers => Ok(a.column(p)),
        g => Err(Error::config(format!(
            "{g} weight columns for a model with {layers} parameter layers"
        ))),
    }
}

/// Per-layer convex combination of client models.
///
/// Each layer is computed as `w_a + sum_{k != a} alpha_k (w_k - w_a)`, anchored
/// on the client with the largest weight in that column, which equals
/// `sum_k alpha_k w_k` on the simplex and reproduces a model exactly when the
/// weights sit on a vertex or all models coincide.
pub fn mix_models(models: &[ParamVector], a: &AggWeights) -> Result<ParamVector> {
    check_models(models)?;
    if a.clients() != models.len() {
        return Err(Error::config(format!(
            "{} weights for {} models",
            a.clients(),
            models.len()
        )));
    }
    let layers = models[0].num_layers();
    let mut out = ParamVector::zeros(models[0].layout());
    for p in 0..layers {
        let alpha = column_for_layer(a, layers, p)?;
        let anchor =
            (0..alpha.len()).fold(0, |best, k| if alpha[k] > alpha[best] { k } else { best });
        let base = models[anchor].layer(p);
        let dst = out.layer_mut(p);
        dst.copy_from_slice(base);
        for (k, model) in models.iter().enumerate() {
            if k == anchor {
                continue;
            }
            let wk = alpha[k];
            for ((d, x), b) in dst.iter_mut().zip(model.layer(p)).zip(base) {
                *d += wk * (x - b);
            }
        }
    }
    Ok(out)
}

/// Gradient of the loss with respect to the aggregation weights, given the
/// gradient at the mixed model: `dL/dalpha_{k,p} = <dL/dw restricted to p, w_k>`.
/// Network granularity sums over all layers.
pub fn alpha_grad(
    d_w: &ParamVector,
    models: &[ParamVector],
    granularity: Granularity,
) -> Result<KpMatrix> {
    check_models(models)?;
    d_w.check_same_layout(&models[0])?;
    let layers = d_w.num_layers();
    let mut per_layer = KpMatrix::zeros(models.len(), layers);
    for (k, model) in models.iter().enumerate() {
        for p in 0..layers {
            let v: f64 = d_w
                .layer(p)
                .iter()
                .zip(model.layer(p))
                .map(|(g, w)| g * w)
                .sum();
            per_layer.set(k, p, v);
        }
    }
    Ok(match granularity {
        Granularity::Layer => per_layer,
        Granularity::Network => per_layer.sum_columns(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layout;
    use proptest::prelude::*;

    fn layout() -> Layout {
        Layout::from_lengths([("a", 2), ("b", 2)])
    }

    fn pv(v: [f64; 4]) -> ParamVector {
        ParamVector::new(v.to_vec(), layout()).unwrap()
    }

    fn network(col: Vec<f64>) -> AggWeights {
        AggWeights::new(
            KpMatrix::from_columns(&[col]).unwrap(),
            Granularity::Network,
        )
        .unwrap()
    }

    fn vertex(k: usize, at: usize) -> AggWeights {
        AggWeights::vertex(k, 1, at, Granularity::Network).unwrap()
    }

    #[test]
    fn vertex_weights_return_that_model() {
        let models = [
            pv([1., 2., 3., 4.]),
            pv([-5., 6., 0.5, 9.]),
            pv([7., -8., 1., 0.]),
        ];
        for at in 0..3 {
            let out = mix_models(&models, &vertex(3, at)).unwrap();
            assert_eq!(out, models[at]);
        }
    }

    #[test]
    fn identical_models_are_a_fixed_point() {
        let m = pv([0.1, -0.7, 3.3, 1e-3]);
        let models = [m.clone(), m.clone(), m.clone()];
        let out = mix_models(&models, &network(vec![0.2, 0.3, 0.5])).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn layer_wise_hand_arithmetic() {
        let models = [pv([1., 2., 3., 4.]), pv([5., 6., 7., 8.])];
        let a = AggWeights::new(
            KpMatrix::from_columns(&[vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap(),
            Granularity::Layer,
        )
        .unwrap();
        let out = mix_models(&models, &a).unwrap();
        // layer a: 0.25*[1,2] + 0.75*[5,6] = [4, 5]; layer b: mean of [3,4],[7,8]
        assert_eq!(out.values(), &[4.0, 5.0, 5.0, 6.0]);
    }

    #[test]
    fn layout_or_count_mismatch_rejected() {
        let other = ParamVector::zeros(&Layout::from_lengths([("a", 4)]));
        assert!(mix_models(&[pv([0.; 4]), other], &network(vec![0.5, 0.5])).is_err());
        assert!(mix_models(&[pv([0.; 4])], &network(vec![0.5, 0.5])).is_err());
        let three_cols = AggWeights::new(KpMatrix::filled(2, 3, 0.5), Granularity::Layer).unwrap();
        assert!(mix_models(&[pv([0.; 4]), pv([0.; 4])], &three_cols).is_err());
    }

    #[test]
    fn zero_models_have_zero_alpha_gradient() {
        let g = pv([1., -2., 3., 4.]);
        let zeros = [pv([0.; 4]), pv([0.; 4])];
        let d = alpha_grad(&g, &zeros, Granularity::Layer).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn network_gradient_is_sum_of_layer_gradients(
            vals in proptest::collection::vec(-3.0f64..3.0, 12),
            g in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let models: Vec<ParamVector> =
                vals.chunks(4).map(|c| pv([c[0], c[1], c[2], c[3]])).collect();
            let g = pv([g[0], g[1], g[2], g[3]]);
            let net = alpha_grad(&g, &models, Granularity::Network).unwrap();
            let lay = alpha_grad(&g, &models, Granularity::Layer).unwrap();
            for k in 0..3 {
                prop_assert!((net.get(k, 0) - (lay.get(k, 0) + lay.get(k, 1))).abs() < 1e-12);
            }
        }

        #[test]
        fn mix_stays_in_envelope(
            vals in proptest::collection::vec(-10.0f64..10.0, 12),
            raw in proptest::collection::vec(0.01f64..1.0, 3),
        ) {
            let models: Vec<ParamVector> =
                vals.chunks(4).map(|c| pv([c[0], c[1], c[2], c[3]])).collect();
            let out = mix_models(&models, &network(raw)).unwrap();
            for j in 0..4 {
                let lo = models.iter().map(|m| m.values()[j]).fold(f64::INFINITY, f64::min);
                let hi = models.iter().map(|m| m.values()[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.values()[j] >= lo - 1e-12 && out.values()[j] <= hi + 1e-12);
            }
        }
    }
}
