use super::config::ModelConfig;
use super::layers::{Embeddings, EncoderLayer, MASKED_LOGIT};
use crate::autodiff::{Tape, Var};
use crate::error::{HydraError, Result};
use crate::ingest::vocab::PAD;
use crate::param::ParamSet;
use crate::tensor::Tensor;

/// A padded batch of token-id sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    /// 1 for real tokens, 0 for padding.
    pub mask: Vec<f64>,
    pub batch: usize,
    pub seq: usize,
}

impl TokenBatch {
    /// Right-pads every sequence with PAD to the longest one.
    pub fn from_sequences(seqs: &[Vec<usize>]) -> Result<Self> {
        let seq = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seqs.is_empty() || seq == 0 {
            return Err(HydraError::Contract("empty token batch".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * seq);
        let mut mask = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            ids.extend(s.iter().copied().chain(std::iter::repeat_n(PAD, seq - s.len())));
            mask.extend((0..seq).map(|i| if i < s.len() { 1.0 } else { 0.0 }));
        }
        Ok(TokenBatch {
            ids,
            mask,
            batch: seqs.len(),
            seq,
        })
    }

    /// Builds a batch from `[b×s]` id and mask tensors.
    pub fn from_tensors(ids: &Tensor, pad_mask: &Tensor) -> Result<Self> {
        let [b, s] = *ids.shape() else {
            return Err(HydraError::Rank {
                op: "body_forward",
                expected: 2,
                shape: ids.shape().to_vec(),
            });
        };
        if pad_mask.shape() != ids.shape() {
            return Err(HydraError::dim("body_forward", ids.shape(), pad_mask.shape()));
        }
        if pad_mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(HydraError::Contract("pad mask entries must be 0 or 1".into()));
        }
        let ids = ids
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(HydraError::Contract(format!(
                        "token id {x} is not a non-negative integer"
                    )))
                }
            })
            .collect::<Result<_>>()?;
        Ok(TokenBatch {
            ids,
            mask: pad_mask.data().to_vec(),
            batch: b,
            seq: s,
        })
    }

    /// `[b×s×s]` additive attention bias that hides padded keys.
    pub fn key_bias(&self) -> Tensor {
        let (b, s) = (self.batch, self.seq);
        let mut data = Vec::with_capacity(b * s * s);
        for i in 0..b {
            let row: Vec<f64> = self.mask[i * s..(i + 1) * s]
                .iter()
                .map(|&m| if m > 0.0 { 0.0 } else { MASKED_LOGIT })
                .collect();
            for _ in 0..s {
                data.extend_from_slice(&row);
            }
        }
        Tensor::new(vec![b, s, s], data).expect("shape")
    }
}

/// Embeddings plus `l` encoder layers.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBody {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub(crate) embed: Embeddings,
    pub(crate) layers: Vec<EncoderLayer>,
}

pub fn body_layer_prefix(i: usize) -> String {
    format!("body.layers.{i}")
}

impl TransformerBody {
    /// Deterministic initialization: every parameter draws from its own
    /// stream keyed by `(seed, name)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embed = Embeddings::create(&mut params, &config, seed)?;
        let layers = (0..config.n_body_layers)
            .map(|i| EncoderLayer::create(&mut params, &body_layer_prefix(i), &config, seed))
            .collect::<Result<_>>()?;
        Ok(TransformerBody {
            config,
            params,
            embed,
            layers,
        })
    }

    /// Rebuilds the layout from an existing parameter set.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let embed = Embeddings::resolve(&params, &config)?;
        let layers: Vec<EncoderLayer> = (0..config.n_body_layers)
            .map(|i| EncoderLayer::resolve(&params, &body_layer_prefix(i), &config))
            .collect::<Result<_>>()?;
        let expected = 2 + layers.iter().map(|l| l.param_ids().len()).sum::<usize>();
        if params.len() != expected {
            return Err(HydraError::Compatibility(format!(
                "body expects {expected} parameters, found {}",
                params.len()
            )));
        }
        Ok(TransformerBody {
            config,
            params,
            embed,
            layers,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Final hidden states `H_l: [b×s×d_model]`.
    pub fn forward(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let h = encode_body(&mut tape, &self.params, &self.config, self.embed, &self.layers, batch)?;
        Ok(tape.value(h).clone())
    }
}

/// Free-function form of [`TransformerBody::forward`].
pub fn body_forward(body: &TransformerBody, ids: &Tensor, pad_mask: &Tensor) -> Result<Tensor> {
    body.forward(&TokenBatch::from_tensors(ids, pad_mask)?)
}

pub(crate) fn encode_body(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &ModelConfig,
    embed: Embeddings,
    layers: &[EncoderLayer],
    batch: &TokenBatch,
) -> Result<Var> {
    if batch.seq > cfg.max_len {
        return Err(HydraError::Length {
            len: batch.seq,
            max: cfg.max_len,
        });
    }
    let key_bias = batch.key_bias();
    let mut x = embed.forward(tape, params, &batch.ids, batch.batch, batch.seq)?;
    for layer in layers {
        x = layer.forward(tape, params, cfg, x, &key_bias)?;
    }
    Ok(x)
}
