//! Dense matrices, a small reverse-mode differentiation graph, the RMSProp
//! optimizer and seeded randomness.

mod graph;
mod matrix;
mod optim;
mod rng;

pub use graph::{Graph, Node, NodeId, Op};
pub use matrix::Matrix;
pub use optim::{clip_global_norm, RmsProp};
pub use rng::Rng;
