//! Permutation language modeling with two-stream self-attention, built on a
//! small reverse-mode autodiff tape, plus everything needed to take a
//! code-mixed sentiment corpus from raw TSV to a trained 5-class classifier:
//! tokenization, pretraining, fine-tuning with class rebalancing, and a
//! confusion-matrix evaluation suite with Krippendorff's alpha for
//! annotation files.
//!
//! The crate is `no_std` + `alloc`; everything that touches the OS (files,
//! command line, wall clock) lives in the companion `plmx-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
