//! Differentiable kernel and controller network for the tape machine.
//!
//! A small reverse-mode autodiff engine over a recorded op tape, the
//! context encoders that turn machine states into network inputs, and the
//! length-invariant policy network. Generic over f32/f64; f64 is the
//! default for determinism.

pub mod checkpoint;
pub mod context;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod policy;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use context::{encode_sigma, encode_xi, AblationFlags, ContextSpec};
pub use error::NnError;
pub use graph::{Graph, NodeId};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{fan_in_uniform, ParamSpec, ParamStore};
pub use policy::{EncoderKind, PolicyDims, PolicyHeads, PolicyNet, PolicyNodes, PolicyOutput};
pub use tensor::{entropy_f64, log_prob_f64, s, softmax_f64, Scalar, Tensor};
