//! HYDRA heads: dependency-supervised attention heads for a transformer encoder.
//!
//! The pipeline has two phases. First, the query/key projections of an extra
//! encoder layer are trained to regress the dependency relation matrix of each
//! sentence while the underlying body stays frozen; the result is a small
//! heads-only checkpoint. Second, those heads are attached as the last layer
//! of the encoder and the whole stack is fine-tuned on a labeled task.
//!
//! ```text
//! CoNLL-U ─► ParsedSentence ─► SdoiMatrix (target)
//!                                   │
//! tokens ─► TransformerBody ─► H_l ─┴► HydraHeads (q·kᵀ/√d_k) ─► masked MSE
//!
//! TransformerBody + HydraHeads ─► Encoder (l + 1 layers) ─► CLS ─► task head
//! ```
//!
//! All arithmetic runs in `f64` on the [`autodiff::Tape`]; checkpoints store
//! `f32`.

pub mod autodiff;
pub mod error;
pub mod finetune;
pub mod gradcheck;
pub mod ingest;
pub mod model;
pub mod optim;
pub mod param;
pub mod pretrain;
pub mod synth;
pub mod tensor;
pub(crate) mod util;

pub use error::{CheckpointError, HydraError, Result};
pub use param::{ParamSet, Parameter};
pub use tensor::Tensor;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/dependency-targets.md")]
    mod dependency_targets {}
    #[doc = include_str!("../../../book/src/hydra-heads.md")]
    mod hydra_heads {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    mod pretraining {}
    #[doc = include_str!("../../../book/src/fine-tuning.md")]
    mod fine_tuning {}
    #[doc = include_str!("../../../book/src/checkpoints.md")]
    mod checkpoints {}
}
