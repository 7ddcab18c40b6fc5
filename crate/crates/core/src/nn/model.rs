use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::{Batch, Matrix, Targets};
use super::loss::{self, LossKind};
use super::param::{Layout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `y = x W^T + b`, `W` stored row-major as `fan_out x fan_in`, then `b`.
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Activation(Activation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
}

/// Feed-forward network description. Only dense layers carry parameters, so
/// the parameter layout has one segment per dense layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layers: Vec<LayerDescriptor>,
    loss: LossKind,
    input_dim: usize,
    output_dim: usize,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerDescriptor>, loss: LossKind) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut input_dim = None;
        for layer in &layers {
            if let LayerKind::Dense { fan_in, fan_out } = layer.kind {
                if fan_in == 0 || fan_out == 0 {
                    return Err(Error::config(format!(
                        "layer {:?} has a zero dimension",
                        layer.name
                    )));
                }
                if let Some(w) = width {
                    if w != fan_in {
                        return Err(Error::config(format!(
                            "layer {:?} expects {fan_in} inputs but receives {w}",
                            layer.name
                        )));
                    }
                }
                input_dim.get_or_insert(fan_in);
                width = Some(fan_out);
            }
        }
        let (Some(input_dim), Some(output_dim)) = (input_dim, width) else {
            return Err(Error::config("model needs at least one dense layer"));
        };
        if !matches!(
            layers.first().map(|l| l.kind),
            Some(LayerKind::Dense { .. })
        ) {
            return Err(Error::config("first layer must be dense"));
        }
        let last = layers.last().map(|l| l.kind);
        match loss {
            LossKind::SoftDice if last != Some(LayerKind::Activation(Activation::Sigmoid)) => {
                return Err(Error::config("soft_dice needs a final sigmoid layer"));
            }
            LossKind::CrossEntropy if !matches!(last, Some(LayerKind::Dense { .. })) => {
                return Err(Error::config(
                    "cross_entropy needs raw logits from a final dense layer",
                ));
            }
            LossKind::CrossEntropy if output_dim < 2 => {
                return Err(Error::config("cross_entropy needs at least two classes"));
            }
            _ => {}
        }
        Ok(ModelSpec {
            layers,
            loss,
            input_dim,
            output_dim,
        })
    }

    /// Multi-layer perceptron with tanh hidden layers. A sigmoid head is added
    /// for `soft_dice`.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        loss: LossKind,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(LayerDescriptor {
                name: format!("dense{i}"),
                kind: LayerKind::Dense { fan_in, fan_out: h },
            });
            layers.push(LayerDescriptor {
                name: format!("tanh{i}"),
                kind: LayerKind::Activation(Activation::Tanh),
            });
            fan_in = h;
        }
        layers.push(LayerDescriptor {
            name: format!("dense{}", hidden.len()),
            kind: LayerKind::Dense {
                fan_in,
                fan_out: output_dim,
            },
        });
        if loss == LossKind::SoftDice {
            layers.push(LayerDescriptor {
                name: "sigmoid".into(),
                kind: LayerKind::Activation(Activation::Sigmoid),
            });
        }
        ModelSpec::new(layers, loss)
    }

    pub fn layers(&self) -> &[LayerDescriptor] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Number of parameter-bearing layers.
    pub fn num_param_layers(&self) -> usize {
        self.dense_layers().count()
    }

    fn dense_layers(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.layers.iter().filter_map(|l| match l.kind {
            LayerKind::Dense { fan_in, fan_out } => Some((l.name.as_str(), fan_in, fan_out)),
            LayerKind::Activation(_) => None,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::from_lengths(
            self.dense_layers()
                .map(|(name, fan_in, fan_out)| (name.to_string(), fan_out * fan_in + fan_out)),
        )
    }

    pub fn num_params(&self) -> usize {
        self.layout().total_len()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut w = ParamVector::zeros(&self.layout());
        for (p, (_, fan_in, fan_out)) in self.dense_layers().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let layer = w.layer_mut(p);
            for v in &mut layer[..fan_in * fan_out] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        w
    }

    fn check(&self, w: &ParamVector, inputs: &Matrix) -> Result<()> {
        if *w.layout() != self.layout() {
            return Err(Error::config("parameter layout does not match the model"));
        }
        if inputs.cols() != self.input_dim {
            return Err(Error::config(format!(
                "batch has {} features, model expects {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::config("empty batch"));
        }
        Ok(())
    }

    /// Activations after every layer; element 0 is the input.
    fn trace(&self, w: &ParamVector, inputs: &Matrix) -> Result<Vec<Matrix>> {
        self.check(w, inputs)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.clone());
        let mut p = 0;
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let y = match layer.kind {
                LayerKind::Dense { fan_in, fan_out } => {
                    let params = w.layer(p);
                    p += 1;
                    let (weights, bias) = params.split_at(fan_in * fan_out);
                    let mut y = Matrix::zeros(x.rows(), fan_out);
                    for i in 0..x.rows() {
                        let xi = x.row(i);
                        for (o, yo) in y.row_mut(i).iter_mut().enumerate() {
                            let wo = &weights[o * fan_in..(o + 1) * fan_in];
                            *yo = bias[o] + wo.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    y
                }
                LayerKind::Activation(act) => {
                    let mut y = x.clone();
                    y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                    y
                }
            };
            acts.push(y);
        }
        Ok(acts)
    }

    pub fn forward(&self, w: &ParamVector, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.trace(w, inputs)?.pop().unwrap())
    }

    pub fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        let out = self.forward(w, &batch.inputs)?;
        loss::loss(self.loss, &out, &batch.targets)
    }

    /// Mean loss and its exact gradient with respect to `w`.
    pub fn loss_and_grad(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let acts = self.trace(w, &batch.inputs)?;
        let (value, mut delta) =
            loss::loss_and_grad(self.loss, acts.last().unwrap(), &batch.targets)?;
        let mut grad = ParamVector::zeros(w.layout());
        let mut p = self.num_param_layers();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[l];
            match layer.kind {
                LayerKind::Activation(act) => {
                    let y = &acts[l + 1];
                    for (d, yv) in delta.data_mut().iter_mut().zip(y.data()) {
                        *d *= act.derivative_from_output(*yv);
                    }
                }
                LayerKind::Dense { fan_in, fan_out } => {
                    p -= 1;
                    let weights = &w.layer(p)[..fan_in * fan_out];
                    let g = grad.layer_mut(p);
                    let (gw, gb) = g.split_at_mut(fan_in * fan_out);
                    let mut dx = Matrix::zeros(x.rows(), fan_in);
                    for i in 0..x.rows() {
                        let xi = x.row(i);
                        let di = delta.row(i);
                        let dxi = dx.row_mut(i);
                        for o in 0..fan_out {
                            let d = di[o];
                            gb[o] += d;
                            let row = o * fan_in;
                            for j in 0..fan_in {
                                gw[row + j] += d * xi[j];
                                dxi[j] += d * weights[row + j];
                            }
                        }
                    }
                    delta = dx;
                }
            }
        }
        if !grad.is_finite() {
            return Err(Error::numerical("non-finite gradient"));
        }
        Ok((value, grad))
    }

    pub fn grad(&self, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        Ok(self.loss_and_grad(w, batch)?.1)
    }

    /// Evaluation score in `[0, 1]`: accuracy for classification, mean hard
    /// Dice (threshold 0.5) for masks. Empty prediction and empty mask score 1.
    pub fn score(&self, w: &ParamVector, batch: &Batch) -> Result<f64> {
        let out = self.forward(w, &batch.inputs)?;
        let n = out.rows() as f64;
        let total: f64 = match &batch.targets {
            Targets::Classes(c) => (0..out.rows())
                .filter(|&i| argmax(out.row(i)) == c[i])
                .count() as f64,
            Targets::Masks(m) => (0..out.rows())
                .map(|i| {
                    let (mut inter, mut total) = (0.0, 0.0);
                    for (p, t) in out.row(i).iter().zip(m.row(i)) {
                        let p = if *p >= 0.5 { 1.0 } else { 0.0 };
                        inter += p * t;
                        total += p + t;
                    }
                    if total == 0.0 {
                        1.0
                    } else {
                        2.0 * inter / total
                    }
                })
                .sum(),
        };
        Ok(total / n)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Free-function form of [`ModelSpec::forward`].
pub fn forward(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<Matrix> {
    spec.forward(w, &batch.inputs)
}

/// Free-function form of [`ModelSpec::grad`].
pub fn grad(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    spec.grad(w, batch)
}
