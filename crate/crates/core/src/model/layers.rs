//! Parameter layout and forward pass of one post-norm encoder layer.

use rand::Rng;

use super::config::ModelConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{HydraError, Result};
use crate::param::{ParamId, ParamSet, Parameter};
use crate::tensor::Tensor;
use crate::util::rng_for;

/// Logit added for padded keys.
pub const MASKED_LOGIT: f64 = -1e9;

/// Bound of the uniform init used for HYDRA query/key weights.
pub const QK_INIT_BOUND: f64 = 0.02;

pub(crate) fn uniform(name: &str, shape: &[usize], bound: f64, seed: u64) -> Parameter {
    let mut rng = rng_for(seed, name);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Parameter::new(name, Tensor::new(shape.to_vec(), data).expect("shape"))
}

pub(crate) fn constant(name: &str, shape: &[usize], value: f64) -> Parameter {
    Parameter::new(name, Tensor::full(shape, value))
}

/// `[out×in]` weight with bound `1/√in`, plus zero bias.
pub(crate) fn add_linear(
    set: &mut ParamSet,
    prefix: &str,
    out_dim: usize,
    in_dim: usize,
    seed: u64,
) -> Result<(ParamId, ParamId)> {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let w = set.insert(uniform(&format!("{prefix}.weight"), &[out_dim, in_dim], bound, seed))?;
    let b = set.insert(constant(&format!("{prefix}.bias"), &[out_dim], 0.0))?;
    Ok((w, b))
}

fn lookup(set: &ParamSet, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = set
        .id(name)
        .ok_or_else(|| HydraError::Compatibility(format!("missing parameter {name}")))?;
    let got = set.get(id).value.shape();
    if got != shape {
        return Err(HydraError::Compatibility(format!(
            "{name} has shape {got:?}, expected {shape:?}"
        )));
    }
    Ok(id)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn resolve(set: &ParamSet, prefix: &str, out_dim: usize, in_dim: usize) -> Result<Self> {
        Ok(Linear {
            weight: lookup(set, &format!("{prefix}.weight"), &[out_dim, in_dim])?,
            bias: lookup(set, &format!("{prefix}.bias"), &[out_dim])?,
        })
    }

    pub(crate) fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(set.get(self.weight));
        let b = tape.param(set.get(self.bias));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    fn create(set: &mut ParamSet, prefix: &str, d: usize) -> Result<Self> {
        Ok(Norm {
            gain: set.insert(constant(&format!("{prefix}.gain"), &[d], 1.0))?,
            bias: set.insert(constant(&format!("{prefix}.bias"), &[d], 0.0))?,
        })
    }

    fn resolve(set: &ParamSet, prefix: &str, d: usize) -> Result<Self> {
        Ok(Norm {
            gain: lookup(set, &format!("{prefix}.gain"), &[d])?,
            bias: lookup(set, &format!("{prefix}.bias"), &[d])?,
        })
    }

    fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let g = tape.param(set.get(self.gain));
        let b = tape.param(set.get(self.bias));
        tape.layer_norm(x, g, b)
    }
}

/// Names of the fused query/key projections under `prefix`.
pub fn qk_names(prefix: &str) -> [String; 4] {
    [
        format!("{prefix}.attn.wq.weight"),
        format!("{prefix}.attn.wq.bias"),
        format!("{prefix}.attn.wk.weight"),
        format!("{prefix}.attn.wk.bias"),
    ]
}

/// Adds fused query/key projections with the small HYDRA init.
pub(crate) fn add_qk(set: &mut ParamSet, prefix: &str, d: usize, seed: u64) -> Result<(Linear, Linear)> {
    let [wq, bq, wk, bk] = qk_names(prefix);
    let q = Linear {
        weight: set.insert(uniform(&wq, &[d, d], QK_INIT_BOUND, seed))?,
        bias: set.insert(constant(&bq, &[d], 0.0))?,
    };
    let k = Linear {
        weight: set.insert(uniform(&wk, &[d, d], QK_INIT_BOUND, seed))?,
        bias: set.insert(constant(&bk, &[d], 0.0))?,
    };
    Ok((q, k))
}

/// One encoder layer: multi-head self-attention and a GELU feed-forward,
/// each wrapped as `LayerNorm(x + sublayer(x))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderLayer {
    pub prefix: String,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln1: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub ln2: Norm,
}

impl EncoderLayer {
    /// Creates every parameter of the layer; query/key use the standard
    /// `1/√fan_in` bound.
    pub(crate) fn create(set: &mut ParamSet, prefix: &str, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let d = cfg.d_model;
        let lin = |set: &mut ParamSet, name: &str, o: usize, i: usize| {
            add_linear(set, &format!("{prefix}.{name}"), o, i, seed).map(|(weight, bias)| Linear { weight, bias })
        };
        let wq = lin(set, "attn.wq", d, d)?;
        let wk = lin(set, "attn.wk", d, d)?;
        Self::create_rest(set, prefix, cfg, seed, wq, wk)
    }

    /// Creates everything except query/key, which already exist in `set`.
    pub(crate) fn create_around_qk(set: &mut ParamSet, prefix: &str, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let d = cfg.d_model;
        let wq = Linear::resolve(set, &format!("{prefix}.attn.wq"), d, d)?;
        let wk = Linear::resolve(set, &format!("{prefix}.attn.wk"), d, d)?;
        Self::create_rest(set, prefix, cfg, seed, wq, wk)
    }

    fn create_rest(
        set: &mut ParamSet,
        prefix: &str,
        cfg: &ModelConfig,
        seed: u64,
        wq: Linear,
        wk: Linear,
    ) -> Result<Self> {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let lin = |set: &mut ParamSet, name: &str, o: usize, i: usize| {
            add_linear(set, &format!("{prefix}.{name}"), o, i, seed).map(|(weight, bias)| Linear { weight, bias })
        };
        let wv = lin(set, "attn.wv", d, d)?;
        let wo = lin(set, "attn.wo", d, d)?;
        let ln1 = Norm::create(set, &format!("{prefix}.ln1"), d)?;
        let fc1 = lin(set, "ffn.fc1", f, d)?;
        let fc2 = lin(set, "ffn.fc2", d, f)?;
        let ln2 = Norm::create(set, &format!("{prefix}.ln2"), d)?;
        Ok(EncoderLayer {
            prefix: prefix.to_string(),
            wq,
            wk,
            wv,
            wo,
            ln1,
            fc1,
            fc2,
            ln2,
        })
    }

    pub(crate) fn resolve(set: &ParamSet, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let lin = |name: &str, o, i| Linear::resolve(set, &format!("{prefix}.{name}"), o, i);
        Ok(EncoderLayer {
            prefix: prefix.to_string(),
            wq: lin("attn.wq", d, d)?,
            wk: lin("attn.wk", d, d)?,
            wv: lin("attn.wv", d, d)?,
            wo: lin("attn.wo", d, d)?,
            ln1: Norm::resolve(set, &format!("{prefix}.ln1"), d)?,
            fc1: lin("ffn.fc1", f, d)?,
            fc2: lin("ffn.fc2", d, f)?,
            ln2: Norm::resolve(set, &format!("{prefix}.ln2"), d)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in [self.wq, self.wk, self.wv, self.wo] {
            out.extend([l.weight, l.bias]);
        }
        out.extend([self.ln1.gain, self.ln1.bias]);
        for l in [self.fc1, self.fc2] {
            out.extend([l.weight, l.bias]);
        }
        out.extend([self.ln2.gain, self.ln2.bias]);
        out
    }

    /// `x: [b×s×d]`, `key_bias: [b×s×s]` with 0 for real keys and
    /// [`MASKED_LOGIT`] for padded keys.
    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        set: &ParamSet,
        cfg: &ModelConfig,
        x: Var,
        key_bias: &Tensor,
    ) -> Result<Var> {
        let dk = cfg.d_k();
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.wq.forward(tape, set, x)?;
        let k = self.wk.forward(tape, set, x)?;
        let v = self.wv.forward(tape, set, x)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = tape.slice_last(q, h * dk, dk)?;
            let kh = tape.slice_last(k, h * dk, dk)?;
            let vh = tape.slice_last(v, h * dk, dk)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.add_const(scores, key_bias)?;
            let probs = tape.softmax_rows(scores);
            heads.push(tape.matmul(probs, vh)?);
        }
        let ctx = tape.concat_last(&heads)?;
        let attn = self.wo.forward(tape, set, ctx)?;
        let res1 = tape.add(x, attn)?;
        let h1 = self.ln1.forward(tape, set, res1)?;
        let ff = self.fc1.forward(tape, set, h1)?;
        let ff = tape.gelu(ff);
        let ff = self.fc2.forward(tape, set, ff)?;
        let res2 = tape.add(h1, ff)?;
        self.ln2.forward(tape, set, res2)
    }
}

/// Token and learned position embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embeddings {
    pub token: ParamId,
    pub position: ParamId,
}

pub const TOKEN_EMBEDDING: &str = "embed.token";
pub const POSITION_EMBEDDING: &str = "embed.position";

impl Embeddings {
    pub(crate) fn create(set: &mut ParamSet, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let bound = 1.0 / (cfg.d_model as f64).sqrt();
        Ok(Embeddings {
            token: set.insert(uniform(TOKEN_EMBEDDING, &[cfg.vocab_size, cfg.d_model], bound, seed))?,
            position: set.insert(uniform(POSITION_EMBEDDING, &[cfg.max_len, cfg.d_model], bound, seed))?,
        })
    }

    pub(crate) fn resolve(set: &ParamSet, cfg: &ModelConfig) -> Result<Self> {
        Ok(Embeddings {
            token: lookup(set, TOKEN_EMBEDDING, &[cfg.vocab_size, cfg.d_model])?,
            position: lookup(set, POSITION_EMBEDDING, &[cfg.max_len, cfg.d_model])?,
        })
    }

    pub(crate) fn forward(&self, tape: &mut Tape, set: &ParamSet, ids: &[usize], b: usize, s: usize) -> Result<Var> {
        let tok = tape.param(set.get(self.token));
        let pos = tape.param(set.get(self.position));
        let x = tape.gather(tok, ids, &[b, s])?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
        let p = tape.gather(pos, &positions, &[b, s])?;
        tape.add(x, p)
    }
}
