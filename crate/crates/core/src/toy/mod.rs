//! A toy differentiable next-token model and the synthetic world around it:
//! corpora, training, a judge, and one-step update probes.

pub mod corpus;
pub mod judge;
pub mod linalg;
pub mod model;
pub mod probe;
pub mod train;
pub mod world;
