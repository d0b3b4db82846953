//! Encoder body, HYDRA heads, task model and checkpoints.

pub mod body;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod heads;
pub mod layers;

pub use body::{body_forward, TokenBatch, TransformerBody};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind};
pub use config::ModelConfig;
pub use encoder::{attach_hydra, Encoder, TaskInfo};
pub use heads::{hydra_logits, HydraHeads, QkVars, HYDRA_PREFIX};
