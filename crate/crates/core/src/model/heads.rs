//! The HYDRA query/key projections and their raw attention logits.
//!
//! For head `h` with `d_k = d_model / n_heads`:
//!
//! ```text
//! q = H_l·W_qᵀ + b_q        (columns h·d_k .. (h+1)·d_k)
//! k = H_l·W_kᵀ + b_k
//! M^h = q·kᵀ / √d_k         (no softmax)
//! ```

use super::config::ModelConfig;
use super::layers::{add_qk, qk_names, Linear};
use crate::autodiff::{Tape, Var};
use crate::error::{HydraError, Result};
use crate::param::ParamSet;
use crate::tensor::Tensor;

pub const HYDRA_PREFIX: &str = "hydra";

/// Fused `[d_model×d_model]` query and key projections of the appended layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HydraHeads {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub(crate) wq: Linear,
    pub(crate) wk: Linear,
}

impl HydraHeads {
    /// Small-uniform query/key weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let (wq, wk) = add_qk(&mut params, HYDRA_PREFIX, config.d_model, seed)?;
        Ok(HydraHeads { config, params, wq, wk })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let names = qk_names(HYDRA_PREFIX);
        if params.len() != names.len() || names.iter().any(|n| params.id(n).is_none()) {
            return Err(HydraError::Compatibility(format!(
                "heads checkpoint must hold exactly {names:?}"
            )));
        }
        let wq = Linear::resolve(&params, &format!("{HYDRA_PREFIX}.attn.wq"), d, d)?;
        let wk = Linear::resolve(&params, &format!("{HYDRA_PREFIX}.attn.wk"), d, d)?;
        Ok(HydraHeads { config, params, wq, wk })
    }

    pub fn n_heads(&self) -> usize {
        self.config.n_heads
    }

    /// Eager `M^h: [b×s×s]` for one head.
    pub fn logits(&self, h_l: &Tensor, head: usize) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let x = tape.constant(h_l.clone());
        let m = self.logits_var(&mut tape, x, head)?;
        Ok(tape.value(m).clone())
    }

    /// Records the four projection tensors as tape leaves.
    pub fn bind(&self, tape: &mut Tape) -> QkVars {
        QkVars {
            wq_weight: tape.param(self.params.get(self.wq.weight)),
            wq_bias: tape.param(self.params.get(self.wq.bias)),
            wk_weight: tape.param(self.params.get(self.wk.weight)),
            wk_bias: tape.param(self.params.get(self.wk.bias)),
        }
    }

    /// Records `M^h` for one head on `tape`.
    pub fn logits_var(&self, tape: &mut Tape, h_l: Var, head: usize) -> Result<Var> {
        if head >= self.n_heads() {
            return Err(HydraError::Index {
                what: "hydra head",
                index: head,
                size: self.n_heads(),
            });
        }
        let qk = self.bind(tape);
        let (q, k) = qk.project(tape, &self.config, h_l)?;
        head_logits(tape, &self.config, q, k, head)
    }

    /// Records `M^h` for every head, sharing the two projections.
    pub fn all_logits_var(&self, tape: &mut Tape, h_l: Var) -> Result<Vec<Var>> {
        let qk = self.bind(tape);
        qk.all_logits(tape, &self.config, h_l)
    }
}

/// Query/key projection leaves on a tape.
#[derive(Clone, Copy, Debug)]
pub struct QkVars {
    pub wq_weight: Var,
    pub wq_bias: Var,
    pub wk_weight: Var,
    pub wk_bias: Var,
}

impl QkVars {
    fn project(&self, tape: &mut Tape, cfg: &ModelConfig, h_l: Var) -> Result<(Var, Var)> {
        let shape = tape.value(h_l).shape();
        if *shape.last().unwrap() != cfg.d_model {
            return Err(HydraError::dim("hydra_logits", shape, &[cfg.d_model]));
        }
        let q = tape.linear(h_l, self.wq_weight, self.wq_bias)?;
        let k = tape.linear(h_l, self.wk_weight, self.wk_bias)?;
        Ok((q, k))
    }

    pub fn all_logits(&self, tape: &mut Tape, cfg: &ModelConfig, h_l: Var) -> Result<Vec<Var>> {
        let (q, k) = self.project(tape, cfg, h_l)?;
        (0..cfg.n_heads).map(|h| head_logits(tape, cfg, q, k, h)).collect()
    }
}

fn head_logits(tape: &mut Tape, cfg: &ModelConfig, q: Var, k: Var, head: usize) -> Result<Var> {
    let dk = cfg.d_k();
    let qh = tape.slice_last(q, head * dk, dk)?;
    let kh = tape.slice_last(k, head * dk, dk)?;
    let m = tape.matmul_nt(qh, kh)?;
    Ok(tape.scale(m, 1.0 / (dk as f64).sqrt()))
}

/// Free-function form of [`HydraHeads::logits`].
pub fn hydra_logits(heads: &HydraHeads, h_l: &Tensor, head: usize) -> Result<Tensor> {
    heads.logits(h_l, head)
}
