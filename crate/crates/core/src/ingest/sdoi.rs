//! Binary word-to-word relation targets derived from a dependency parse.

use serde::{Deserialize, Serialize};

use super::conllu::ParsedSentence;
use crate::error::{HydraError, Result};
use crate::tensor::Tensor;

/// How a parse is turned into a relation matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdoiRule {
    /// Cell `(i, j)` is 1 when `i == j` or one word directly governs the other.
    #[default]
    Adjacency,
    /// Cell `(i, j)` is 1 when one word is an ancestor of the other (or `i == j`).
    AncestorClosure,
}

/// Symmetric `n×n` 0/1 matrix over the words of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SdoiMatrix {
    n: usize,
    cells: Vec<u8>,
}

impl SdoiMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.n + j]
    }

    pub fn ones(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    /// Fraction of cells equal to 1.
    pub fn density(&self) -> f64 {
        self.ones() as f64 / (self.n * self.n) as f64
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.n).map(<[u8]>::to_vec).collect()
    }
}

pub fn build_sdoi(s: &ParsedSentence) -> SdoiMatrix {
    build_sdoi_with(s, SdoiRule::Adjacency)
}

pub fn build_sdoi_with(s: &ParsedSentence, rule: SdoiRule) -> SdoiMatrix {
    let n = s.len();
    let mut cells = vec![0u8; n * n];
    match rule {
        SdoiRule::Adjacency => {
            for i in 0..n {
                cells[i * n + i] = 1;
                let h = s.heads[i];
                if h > 0 {
                    let j = h - 1;
                    cells[i * n + j] = 1;
                    cells[j * n + i] = 1;
                }
            }
        }
        SdoiRule::AncestorClosure => {
            for i in 0..n {
                cells[i * n + i] = 1;
                // walk up the governor chain; the step bound guards against cycles
                let mut cur = s.heads[i];
                let mut steps = 0;
                while cur > 0 && steps < n {
                    let j = cur - 1;
                    cells[i * n + j] = 1;
                    cells[j * n + i] = 1;
                    cur = s.heads[j];
                    steps += 1;
                }
            }
        }
    }
    SdoiMatrix { n, cells }
}

/// Target and loss mask on the model's token axis, where position 0 is CLS
/// and word `i` sits at position `i + 1`. Only the word block is unmasked.
pub fn align_sdoi_to_tokens(m: &SdoiMatrix, seq_len: usize) -> Result<(Tensor, Tensor)> {
    if m.n + 1 > seq_len {
        return Err(HydraError::Length {
            len: m.n + 1,
            max: seq_len,
        });
    }
    let mut target = Tensor::zeros(&[seq_len, seq_len]);
    let mut mask = Tensor::zeros(&[seq_len, seq_len]);
    for i in 0..m.n {
        for j in 0..m.n {
            let at = (i + 1) * seq_len + (j + 1);
            target.data_mut()[at] = m.get(i, j) as f64;
            mask.data_mut()[at] = 1.0;
        }
    }
    Ok((target, mask))
}
