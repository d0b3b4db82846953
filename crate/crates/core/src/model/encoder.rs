//! The fine-tunable model: body layers, an optional HYDRA layer, and a
//! CLS-pooled task head.

use serde::{Deserialize, Serialize};

use super::body::{body_layer_prefix, encode_body, TokenBatch, TransformerBody};
use super::config::ModelConfig;
use super::heads::{HydraHeads, HYDRA_PREFIX};
use super::layers::{add_linear, Embeddings, EncoderLayer, Linear};
use crate::autodiff::{Tape, Var};
use crate::error::{HydraError, Result};
use crate::ingest::TaskKind;
use crate::param::ParamSet;
use crate::tensor::Tensor;

pub const TASK_PREFIX: &str = "task";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInfo {
    pub kind: TaskKind,
    /// Number of classes, or 1 for regression.
    pub num_outputs: usize,
    #[serde(default)]
    pub label_names: Vec<String>,
}

impl TaskInfo {
    pub fn classification(label_names: Vec<String>) -> Self {
        TaskInfo {
            kind: TaskKind::Classification,
            num_outputs: label_names.len(),
            label_names,
        }
    }

    pub fn classes(n: usize) -> Self {
        Self::classification((0..n).map(|i| i.to_string()).collect())
    }

    pub fn regression() -> Self {
        TaskInfo {
            kind: TaskKind::Regression,
            num_outputs: 1,
            label_names: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TaskKind::Classification if self.num_outputs < 2 => {
                Err(HydraError::Config("classification needs at least 2 classes".into()))
            }
            TaskKind::Regression if self.num_outputs != 1 => {
                Err(HydraError::Config("regression has exactly one output".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: ModelConfig,
    pub task: TaskInfo,
    pub params: ParamSet,
    embed: Embeddings,
    body_layers: Vec<EncoderLayer>,
    hydra: Option<EncoderLayer>,
    head: Linear,
}

fn check_compatible(body: &ModelConfig, heads: &ModelConfig) -> Result<()> {
    if body != heads {
        return Err(HydraError::Compatibility(format!(
            "heads were built for {heads:?} but the body is {body:?}"
        )));
    }
    Ok(())
}

impl Encoder {
    /// The body alone with a task head: `l` layers.
    pub fn baseline(body: &TransformerBody, task: TaskInfo, seed: u64) -> Result<Self> {
        Self::assemble(body, None, task, seed)
    }

    /// Appends the HYDRA layer as layer `l + 1`. Only query/key come from
    /// `heads`; values, output projection, feed-forward and norms are drawn
    /// fresh from `seed`. `body` itself is not modified.
    pub fn attach(body: &TransformerBody, heads: &HydraHeads, task: TaskInfo, seed: u64) -> Result<Self> {
        check_compatible(&body.config, &heads.config)?;
        Self::assemble(body, Some(heads), task, seed)
    }

    fn assemble(body: &TransformerBody, heads: Option<&HydraHeads>, task: TaskInfo, seed: u64) -> Result<Self> {
        task.validate()?;
        let config = body.config.clone();
        let mut params = body.params.clone();
        let hydra = match heads {
            Some(h) => {
                for p in h.params.iter() {
                    params.insert(p.clone())?;
                }
                Some(EncoderLayer::create_around_qk(
                    &mut params,
                    HYDRA_PREFIX,
                    &config,
                    seed,
                )?)
            }
            None => None,
        };
        let (weight, bias) = add_linear(&mut params, TASK_PREFIX, task.num_outputs, config.d_model, seed)?;
        params.set_trainable(true);
        params.zero_grad();
        Ok(Encoder {
            embed: body.embed,
            body_layers: body.layers.clone(),
            config,
            task,
            params,
            hydra,
            head: Linear { weight, bias },
        })
    }

    pub fn from_params(config: ModelConfig, task: TaskInfo, params: ParamSet, has_hydra: bool) -> Result<Self> {
        config.validate()?;
        task.validate()?;
        let embed = Embeddings::resolve(&params, &config)?;
        let body_layers: Vec<EncoderLayer> = (0..config.n_body_layers)
            .map(|i| EncoderLayer::resolve(&params, &body_layer_prefix(i), &config))
            .collect::<Result<_>>()?;
        let hydra = if has_hydra {
            Some(EncoderLayer::resolve(&params, HYDRA_PREFIX, &config)?)
        } else {
            None
        };
        let head = Linear::resolve(&params, TASK_PREFIX, task.num_outputs, config.d_model)?;
        let expected = 4
            + body_layers.iter().map(|l| l.param_ids().len()).sum::<usize>()
            + hydra.as_ref().map_or(0, |l| l.param_ids().len());
        if params.len() != expected {
            return Err(HydraError::Compatibility(format!(
                "model expects {expected} parameters, found {}",
                params.len()
            )));
        }
        Ok(Encoder {
            config,
            task,
            params,
            embed,
            body_layers,
            hydra,
            head,
        })
    }

    pub fn has_hydra(&self) -> bool {
        self.hydra.is_some()
    }

    /// Encoder layers, counting the HYDRA layer when present.
    pub fn layer_count(&self) -> usize {
        self.body_layers.len() + usize::from(self.hydra.is_some())
    }

    /// Parameter-name prefixes, one per layer, in forward order.
    pub fn layer_prefixes(&self) -> Vec<String> {
        self.body_layers
            .iter()
            .chain(self.hydra.iter())
            .map(|l| l.prefix.clone())
            .collect()
    }

    /// The current HYDRA query/key projections, if this model has them.
    pub fn hydra_heads(&self) -> Option<HydraHeads> {
        self.hydra.as_ref()?;
        let mut params = ParamSet::new();
        for name in super::layers::qk_names(HYDRA_PREFIX) {
            let mut p = self.params.by_name(&name)?.clone();
            p.zero_grad();
            params.insert(p).ok()?;
        }
        HydraHeads::from_params(self.config.clone(), params).ok()
    }

    /// Records the full forward pass; returns `(H_last, logits)`.
    pub fn forward_var(&self, tape: &mut Tape, batch: &TokenBatch) -> Result<(Var, Var)> {
        let mut h = encode_body(tape, &self.params, &self.config, self.embed, &self.body_layers, batch)?;
        if let Some(layer) = &self.hydra {
            h = layer.forward(tape, &self.params, &self.config, h, &batch.key_bias())?;
        }
        let logits = self.project_var(tape, h)?;
        Ok((h, logits))
    }

    pub(crate) fn project_var(&self, tape: &mut Tape, h_last: Var) -> Result<Var> {
        let pooled = tape.select_first(h_last)?;
        self.head.forward(tape, &self.params, pooled)
    }

    /// Hidden states after the last layer, `[b×s×d_model]`.
    pub fn hidden(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let (h, _) = self.forward_var(&mut tape, batch)?;
        Ok(tape.value(h).clone())
    }

    /// Hidden states after the last body layer, the input of the HYDRA layer.
    pub fn body_hidden(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let h = encode_body(
            &mut tape,
            &self.params,
            &self.config,
            self.embed,
            &self.body_layers,
            batch,
        )?;
        Ok(tape.value(h).clone())
    }

    /// Task logits `[b×c]`.
    pub fn predict(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let (_, logits) = self.forward_var(&mut tape, batch)?;
        Ok(tape.value(logits).clone())
    }

    /// Pools position 0 of `h_last` and applies the task head.
    pub fn pool_and_project(&self, h_last: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let h = tape.constant(h_last.clone());
        let logits = self.project_var(&mut tape, h)?;
        Ok(tape.value(logits).clone())
    }
}

/// Free-function form of [`Encoder::attach`].
pub fn attach_hydra(body: &TransformerBody, heads: &HydraHeads, task: TaskInfo, seed: u64) -> Result<Encoder> {
    Encoder::attach(body, heads, task, seed)
}
