//! Multi-view subspace clustering with per-view autoencoders, cross-view
//! attention fusion and an aligned self-representation layer.
//!
//! The pipeline is:
//!
//! 1. [`data`] loads (or synthesizes) a multi-view dataset, one `F x N`
//!    matrix per view.
//! 2. [`model`] encodes every view into a common dimension, fuses views
//!    with attention, recombines samples through a zero-diagonal
//!    self-representation matrix `C` per view and decodes back.
//! 3. [`training`] minimizes the reconstruction plus self-representation
//!    loss with Adam, differentiating through [`autodiff`].
//! 4. [`spectral`] turns the chosen view's `C` into an affinity
//!    `|C| + |C|^T` and clusters it.
//! 5. [`metrics`] scores the result (ACC, NMI, ARI, precision, recall,
//!    F-score).

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
