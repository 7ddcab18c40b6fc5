//! Aggregation weights: simplex parameterizations (softmax, Dirichlet), their
//! gradients, and model mixing.

mod dirichlet;
mod mix;
mod softmax;
pub mod special;
mod weights;

pub use dirichlet::{
    dirichlet_backward, dirichlet_logpdf, dirichlet_mode, dirichlet_sample, dirichlet_sample_grad,
    gamma_sample_grad, mode_weights, sample_gamma, sample_weights, DirichletDraw,
};
pub use mix::{alpha_grad, mix_models};
pub use softmax::{softmax_backward, softmax_map};
pub use weights::{
    clamp_dirichlet, AggWeights, Concentration, Granularity, KpMatrix, Parameterization,
    DIRICHLET_MARGIN, SIMPLEX_TOL,
};
