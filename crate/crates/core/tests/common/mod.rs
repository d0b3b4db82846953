//! Helpers and brute-force oracles shared by the integration tests. Oracles
//! deliberately use plain nested loops over `Vec<Vec<f64>>` and share no code
//! with the library kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use hydra::ingest::ParsedSentence;
use hydra::model::{HydraHeads, ModelConfig};
use hydra::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 8,
        n_heads: 2,
        n_body_layers: 2,
        d_ff: 16,
        max_len: 16,
    }
}

/// A random projective tree over `n` words: word `i > 0` attaches to an
/// earlier word or the root word.
pub fn random_parse(rng: &mut impl Rng, n: usize) -> ParsedSentence {
    let root = rng.gen_range(0..n);
    let heads = (0..n)
        .map(|i| {
            if i == root {
                0
            } else {
                let mut h = rng.gen_range(0..n);
                while h == i {
                    h = rng.gen_range(0..n);
                }
                h + 1
            }
        })
        .collect();
    let tokens = (0..n).map(|i| format!("w{i}")).collect();
    ParsedSentence::new(tokens, heads).unwrap()
}

pub fn sdoi_oracle(heads: &[usize]) -> Vec<Vec<u8>> {
    let n = heads.len();
    let mut m = vec![vec![0u8; n]; n];
    for i in 0..n {
        for j in 0..n {
            let linked = i == j || heads[i] == j + 1 || heads[j] == i + 1;
            m[i][j] = u8::from(linked);
        }
    }
    m
}

pub fn matmul_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.data().chunks(t.last_dim()).map(<[f64]>::to_vec).collect()
}

fn param(heads: &HydraHeads, name: &str) -> Vec<f64> {
    heads.params.by_name(name).unwrap().value.data().to_vec()
}

/// `M^h[b][i][j]` by explicit loops over tokens, model width and `d_k`.
pub fn hydra_logits_oracle(heads: &HydraHeads, h_l: &Tensor, head: usize) -> Vec<Vec<Vec<f64>>> {
    let d = heads.config.d_model;
    let dk = heads.config.d_k();
    let (wq, bq) = (param(heads, "hydra.attn.wq.weight"), param(heads, "hydra.attn.wq.bias"));
    let (wk, bk) = (param(heads, "hydra.attn.wk.weight"), param(heads, "hydra.attn.wk.bias"));
    let shape = h_l.shape();
    let (b, s) = (shape[0], shape[1]);
    let x = |bi: usize, t: usize, e: usize| h_l.data()[(bi * s + t) * d + e];
    let mut out = vec![vec![vec![0.0; s]; s]; b];
    for bi in 0..b {
        let mut q = vec![vec![0.0; dk]; s];
        let mut k = vec![vec![0.0; dk]; s];
        for t in 0..s {
            for c in 0..dk {
                let row = head * dk + c;
                let (mut sq, mut sk) = (bq[row], bk[row]);
                for e in 0..d {
                    sq += x(bi, t, e) * wq[row * d + e];
                    sk += x(bi, t, e) * wk[row * d + e];
                }
                q[t][c] = sq;
                k[t][c] = sk;
            }
        }
        for i in 0..s {
            for j in 0..s {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += q[i][c] * k[j][c];
                }
                out[bi][i][j] = dot / (dk as f64).sqrt();
            }
        }
    }
    out
}

/// Replaces the query/key weights with values in [-1, 1] so oracle checks
/// are not dominated by the small initialization scale.
pub fn randomize_heads(heads: &mut HydraHeads, seed: u64) {
    let mut r = rng(seed);
    for p in heads.params.iter_mut() {
        let shape = p.value.shape().to_vec();
        p.value = uniform(&mut r, &shape);
    }
}
