//! Deterministic tensors, reverse-mode differentiation, seeded randomness and
//! Adam.

pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod store;
pub mod tensor;

pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, Tracking, Var};
pub use optim::{Adam, AdamConfig};
pub use rng::Rng;
pub use store::ParamStore;
pub use tensor::Tensor;
