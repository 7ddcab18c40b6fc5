//! Federated learning simulator with learnable aggregation weights.
//!
//! Clients train local copies of a small model; the server averages them
//! either with fixed weights (FedAvg, FedProx) or with weights learned by
//! gradient descent on the clients' own data through a softmax or Dirichlet
//! parameterization of the probability simplex.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod fedsim;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
