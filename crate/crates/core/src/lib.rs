//! Learning-by-teaching architecture search.
//!
//! A teacher supernet with searchable architecture trains its weights,
//! teaches a fixed student through soft pseudo-labels and updates its
//! architecture from both models' validation losses, using one-step
//! virtual updates and finite-difference Hessian-vector products for the
//! hypergradient.

pub mod autodiff;
pub mod data;
pub mod engine;
pub mod model;
pub mod oracle;
