//! Parameter-space drift analysis and per-sample fine-tuning risk scores.
//!
//! A direction `V = θ_target − θ₀` captures what one fine-tune taught a
//! model. Checkpoint drift is projected onto danger and safety directions,
//! and each training sample is scored by how far its one-step update leans
//! toward danger rather than safety (SQSD). A small differentiable toy
//! model under [`toy`] supplies exact gradients and a synthetic judge.
//!
//! ## Examples
//!
//! - **`safetensors_io`** - write, read and merge a LoRA adapter
//! - **`directions_and_steering`** - direction norms and a judge sweep along `θ₀ + αV`
//! - **`trajectory_trace`** - drift projections over a LoRA fine-tune
//! - **`sensitivity_init`** - directional sensitivity and scorer initialization
//! - **`sqsd_scoring`** - every SQSD variant against plant intensity
//! - **`baselines_compare`** - SQSD next to the baseline scorers
//! - **`rank_eval`** - fine-tune on each score quintile and judge
//! - **`transfer`** - score narrow, evaluate on wider and full fine-tunes
//! - **`taylor_check`** - first-order loss prediction per sample
//!
//! ```bash
//! cargo run --release -p driftrisk --example rank_eval
//! ```

pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod direction;
pub mod error;
pub mod eval;
pub mod harness;
pub mod judge;
pub mod safetensors;
pub mod sensitivity;
pub mod sqsd;
pub mod stats;
pub mod tensor;
pub mod toy;
pub mod trajectory;

pub use error::{Error, Result};
