//! Complex query answering over incomplete knowledge graphs with a calibrated
//! neural link predictor.
//!
//! The pipeline: [`kg`] stores the graph, [`linkpred`] trains a ComplEx scorer,
//! [`adapter`] learns an affine recalibration of its scores on multi-atom
//! queries, [`inference`] answers first-order [`queries`] by beam search under
//! the [`fuzzy`] connectives, and [`evalx`] reports filtered MRR.

pub mod adapter;
pub mod container;
pub mod error;
pub mod evalx;
pub mod fuzzy;
pub mod inference;
pub mod kg;
pub mod linkpred;
pub mod optim;
pub mod queries;
pub mod rng;

pub use error::{Error, Result};
