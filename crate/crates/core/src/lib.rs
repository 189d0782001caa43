//! Spectral-spatial selective state-space classifier for hyperspectral images.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tensor`]), the state-space kernels and Mamba block ([`ssm`]), spectral
//! and spatial tokenization ([`tokens`]), the dual-branch model ([`model`]),
//! training and evaluation ([`train`]) and the scene container, file format
//! and metrics ([`data`]).

pub mod ablation;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod features;
pub mod model;
pub mod selfcheck;
pub mod ssm;
pub mod tensor;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
