//! Neural reranking of biomedical documents and snippets.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`] is a small dense-tensor substrate (layers, poolings, losses,
//!   optimizers and a finite-difference gradient checker).
//! * [`text`], [`index`] and [`embed`] provide tokenization, BM25
//!   pre-retrieval and word-embedding lookups.
//! * [`pacrr`], [`drmm`] and [`bcnn`] are the neural scorers.
//! * [`pipeline`] wires everything together: training on query/document
//!   pairs, reranking, ensemble voting and evaluation.

pub mod bcnn;
pub mod checks;
pub mod drmm;
pub mod embed;
mod error;
pub mod features;
pub mod index;
pub mod model;
pub mod nn;
pub mod pacrr;
pub mod pipeline;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
