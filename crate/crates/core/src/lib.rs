//! Graph-aware prompt construction and low-rank fine-tuning of a micro
//! language model for candidate/job matching.
//!
//! Numeric code is generic over [`scalar::Scalar`]; the aliases below fix
//! `f64`, which every training path uses.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod inference;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod records;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

pub type Matrix = tensor::Matrix<f64>;
pub type MicroLm = model::MicroLm<f64>;
pub type BaseWeights = model::BaseWeights<f64>;
pub type LoraSet = model::LoraSet<f64>;
pub type SelectorParams = augment::SelectorParams<f64>;
pub type Trainable = trainer::Trainable<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
