//! Permutation-equivariant linear layers on the weight spaces of MLPs.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod symmetry;
pub mod tensor;
pub mod verifier;
pub mod weight_space;
pub mod zoo;

pub use error::{Error, Result};
