//! GAC-UNET: a U-Net whose bottleneck runs graph attention, Chebyshev graph
//! convolution and a center-of-mass layer over the encoded feature grid, together
//! with the losses, metrics, data pipeline and reprogramming harness needed to
//! train and evaluate it on binary flood masks.
//!
//! Everything runs on the small reverse-mode engine in [`tensor`].

pub mod cli;
pub mod dataio;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod real;
pub mod reprogram;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::{FloatWidth, Real};
pub use tensor::{grad_check, Gradients, Tape, Tensor, Var};
