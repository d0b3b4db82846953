//! Reverse-mode differentiation over a per-pass recording tape.
//!
//! Every forward operation appends a node holding its output value and
//! whatever it needs for the backward sweep. [`Tape::backward`] consumes the
//! tape and returns the gradients of every node that depends on a
//! gradient-requiring leaf.

use std::collections::HashMap;

use crate::error::{HydraError, Result};
use crate::param::{ParamSet, Parameter};
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNt {
        a: Var,
        b: Var,
    },
    Transpose {
        a: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddConst {
        a: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        a: Var,
    },
    SliceLast {
        a: Var,
        start: usize,
        width: usize,
    },
    ConcatLast {
        parts: Vec<Var>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SelectFirst {
        a: Var,
    },
    MaskedMse {
        pred: Var,
        diff: Vec<f64>,
        mask: Vec<f64>,
        count: f64,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Mean {
        parts: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Var)>,
    param_vars: HashMap<String, Var>,
    no_grad: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose parameter leaves never require gradients.
    pub fn inference() -> Self {
        Tape {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf whose gradient is wanted (used by gradient checks).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter as a leaf. Repeated calls for the same name return
    /// the same node, so a parameter used twice accumulates both gradients.
    pub fn param(&mut self, p: &Parameter) -> Var {
        if let Some(&v) = self.param_vars.get(&p.name) {
            return v;
        }
        let requires = p.trainable && !self.no_grad;
        let v = self.push(p.value.clone(), Op::Leaf, requires);
        self.param_vars.insert(p.name.clone(), v);
        if requires {
            self.bindings.push((p.name.clone(), v));
        }
        v
    }

    /// `a·b` for rank-2 operands, or batched over a shared leading axis for rank 3.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, k2, n) = {
            let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
            match (sa, sb) {
                ([m, k], [k2, n]) => (1, *m, *k, *k2, *n),
                ([ba, m, k], [bb, k2, n]) if ba == bb => (*ba, *m, *k, *k2, *n),
                _ => return Err(HydraError::dim("matmul", sa, sb)),
            }
        };
        if k != k2 {
            return Err(HydraError::dim("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for t in 0..batch {
                tensor::matmul_acc(
                    &ad[t * m * k..(t + 1) * m * k],
                    &bd[t * k * n..(t + 1) * k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let shape = if self.value(a).rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, rg))
    }

    /// `a·bᵀ` over the last two axes, batched for rank 3.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = {
            let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
            match (sa, sb) {
                ([m, k], [n, k2]) if k == k2 => (1, *m, *k, *n),
                ([ba, m, k], [bb, n, k2]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
                _ => return Err(HydraError::dim("matmul_nt", sa, sb)),
            }
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for t in 0..batch {
                tensor::matmul_nt_acc(
                    &ad[t * m * k..(t + 1) * m * k],
                    &bd[t * n * k..(t + 1) * n * k],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let shape = if self.value(a).rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMulNt { a, b }, rg))
    }

    /// Swaps the last two axes (rank 2, or rank 3 batched).
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (batch, m, n) = match x.shape() {
            [m, n] => (1, *m, *n),
            [b, m, n] => (*b, *m, *n),
            s => {
                return Err(HydraError::Rank {
                    op: "transpose",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        let mut out = Vec::with_capacity(x.len());
        for t in 0..batch {
            out.extend(tensor::transpose_raw(&x.data()[t * m * n..(t + 1) * m * n], m, n));
        }
        let shape = if x.rank() == 2 { vec![n, m] } else { vec![batch, n, m] };
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose { a }, rg))
    }

    /// `x·wᵀ + b` applied to every vector along the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [out_dim, in_dim] = *wv.shape() else {
            return Err(HydraError::Rank {
                op: "linear",
                expected: 2,
                shape: wv.shape().to_vec(),
            });
        };
        if xv.last_dim() != in_dim || bv.shape() != [out_dim] {
            return Err(HydraError::dim("linear", xv.shape(), wv.shape()));
        }
        let rows = xv.rows();
        let mut out: Vec<f64> = bv.data().repeat(rows);
        tensor::matmul_nt_acc(xv.data(), wv.data(), &mut out, rows, in_dim, out_dim);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(HydraError::dim("add", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Adds a constant tensor; the gradient flows only into `a`.
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != c.shape() {
            return Err(HydraError::dim("add_const", av.shape(), c.shape()));
        }
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::AddConst { a }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * factor).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).softmax_rows();
        let rg = self.rg(a);
        self.push(out, Op::Softmax { a }, rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if d < 2 {
            return Err(HydraError::dim("layer_norm", xv.shape(), &[2]));
        }
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(HydraError::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let (normed, inv_std) = tensor::layer_norm_raw(xv.data(), d);
        let data = normed
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .zip(gv.data().iter().zip(bv.data()))
                    .map(|(n, (g, b))| n * g + b)
            })
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).gelu();
        let rg = self.rg(a);
        self.push(out, Op::Gelu { a }, rg)
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        let d = av.last_dim();
        if width == 0 || start + width > d {
            return Err(HydraError::Index {
                what: "slice_last",
                index: start + width,
                size: d,
            });
        }
        let data = av
            .data()
            .chunks(d)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceLast { a, start, width }, rg))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len() - 1];
        let mut width = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if &s[..s.len() - 1] != lead {
                return Err(HydraError::dim("concat_last", &first, s));
            }
            width += s[s.len() - 1];
        }
        let rows = self.value(parts[0]).rows();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let w = v.last_dim();
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first.clone();
        *shape.last_mut().unwrap() = width;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLast { parts: parts.to_vec() }, rg))
    }

    /// Looks up rows of `table` by `ids`; output shape is `lead × d`.
    pub fn gather(&mut self, table: Var, ids: &[usize], lead: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let [rows, d] = *tv.shape() else {
            return Err(HydraError::Rank {
                op: "gather",
                expected: 2,
                shape: tv.shape().to_vec(),
            });
        };
        if lead.iter().product::<usize>() != ids.len() {
            return Err(HydraError::dim("gather", lead, &[ids.len()]));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(HydraError::Index {
                    what: "embedding row",
                    index: id,
                    size: rows,
                });
            }
            data.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let mut shape = lead.to_vec();
        shape.push(d);
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Position 0 of every sequence: `[b×s×d] → [b×d]`.
    pub fn select_first(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let [b, s, d] = *av.shape() else {
            return Err(HydraError::Rank {
                op: "select_first",
                expected: 3,
                shape: av.shape().to_vec(),
            });
        };
        let data = (0..b)
            .flat_map(|i| av.data()[i * s * d..i * s * d + d].iter().copied())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![b, d], data)?, Op::SelectFirst { a }, rg))
    }

    /// `Σ mask·(pred − target)² / Σ mask`, differentiable in `pred` only.
    pub fn masked_mse(&mut self, pred: Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || pv.shape() != mask.shape() {
            return Err(HydraError::dim("mse_flat", pv.shape(), target.shape()));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(HydraError::Contract("mask entries must be 0 or 1".into()));
        }
        let count: f64 = mask.data().iter().sum();
        if count == 0.0 {
            return Err(HydraError::EmptyLoss);
        }
        let diff: Vec<f64> = pv
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((p, t), m)| m * (p - t))
            .collect();
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMse {
                pred,
                diff,
                mask: mask.data().to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let [b, c] = *lv.shape() else {
            return Err(HydraError::Rank {
                op: "cross_entropy",
                expected: 2,
                shape: lv.shape().to_vec(),
            });
        };
        if labels.len() != b {
            return Err(HydraError::dim("cross_entropy", lv.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(HydraError::Index {
                what: "class label",
                index: bad,
                size: c,
            });
        }
        let probs = lv.softmax_rows().into_data();
        let mut loss = 0.0;
        for (i, row) in lv.data().chunks(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
        }
        loss /= b as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(HydraError::EmptyLoss);
        }
        let mut total = 0.0;
        for &p in parts {
            let v = self.value(p);
            if v.len() != 1 {
                return Err(HydraError::Contract(format!(
                    "mean expects scalars, got shape {:?}",
                    v.shape()
                )));
            }
            total += v.item();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::scalar(total / parts.len() as f64),
            Op::Mean { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Runs the backward sweep from a scalar node and consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(HydraError::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let values = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients {
            grads: values,
            bindings: self.bindings,
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k, n) = batch_dims(av.shape(), bv.shape());
                acc(*a, &|ga| {
                    for t in 0..batch {
                        tensor::matmul_nt_acc(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv.data()[t * k * n..(t + 1) * k * n],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(*b, &|gb| {
                    for t in 0..batch {
                        tensor::matmul_tn_acc(
                            &av.data()[t * m * k..(t + 1) * m * k],
                            &g[t * m * n..(t + 1) * m * n],
                            &mut gb[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::MatMulNt { a, b } => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (av, bv) = (self.value(*a), self.value(*b));
                let sa = av.shape();
                let (batch, m, k) = match sa {
                    [m, k] => (1, *m, *k),
                    [b, m, k] => (*b, *m, *k),
                    _ => unreachable!(),
                };
                let n = bv.shape()[bv.rank() - 2];
                acc(*a, &|ga| {
                    for t in 0..batch {
                        tensor::matmul_acc(
                            &g[t * m * n..(t + 1) * m * n],
                            &bv.data()[t * n * k..(t + 1) * n * k],
                            &mut ga[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(*b, &|gb| {
                    for t in 0..batch {
                        tensor::matmul_tn_acc(
                            &g[t * m * n..(t + 1) * m * n],
                            &av.data()[t * m * k..(t + 1) * m * k],
                            &mut gb[t * n * k..(t + 1) * n * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
            }
            Op::Transpose { a } => {
                let s = node.value.shape();
                let (batch, m, n) = match s {
                    [m, n] => (1, *m, *n),
                    [b, m, n] => (*b, *m, *n),
                    _ => unreachable!(),
                };
                acc(*a, &|ga| {
                    for t in 0..batch {
                        let back = tensor::transpose_raw(&g[t * m * n..(t + 1) * m * n], m, n);
                        for (x, y) in ga[t * m * n..(t + 1) * m * n].iter_mut().zip(back) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                acc(*x, &|gx| tensor::matmul_acc(g, wv.data(), gx, rows, out_dim, in_dim));
                acc(*w, &|gw| tensor::matmul_tn_acc(g, xv.data(), gw, rows, out_dim, in_dim));
                acc(*b, &|gb| {
                    for row in g.chunks(out_dim) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| add_into(gb, g));
            }
            Op::AddConst { a } => acc(*a, &|ga| add_into(ga, g)),
            Op::Scale { a, factor } => acc(*a, &|ga| {
                for (o, v) in ga.iter_mut().zip(g) {
                    *o += factor * v;
                }
            }),
            Op::Softmax { a } => {
                let y = node.value.data();
                let w = node.value.last_dim();
                acc(*a, &|ga| {
                    for ((gr, yr), out) in g.chunks(w).zip(y.chunks(w)).zip(ga.chunks_mut(w)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in out.iter_mut().zip(gr).zip(yr) {
                            *o += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = self.value(*gain).data();
                acc(*x, &|gx| {
                    for (r, ((gr, nr), out)) in g.chunks(d).zip(normed.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                        // dn = g·gain; dx = inv_std·(dn − mean(dn) − n·mean(dn·n))
                        let dn: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dn = dn.iter().sum::<f64>() / d as f64;
                        let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((o, dni), ni) in out.iter_mut().zip(&dn).zip(nr) {
                            *o += inv_std[r] * (dni - mean_dn - ni * mean_dn_n);
                        }
                    }
                });
                acc(*gain, &|gg| {
                    for (gr, nr) in g.chunks(d).zip(normed.chunks(d)) {
                        for ((o, gi), ni) in gg.iter_mut().zip(gr).zip(nr) {
                            *o += gi * ni;
                        }
                    }
                });
                acc(*bias, &|gb| {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::Gelu { a } => {
                let xv = self.value(*a).data();
                acc(*a, &|ga| {
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(xv) {
                        *o += gi * tensor::gelu_derivative(*xi);
                    }
                });
            }
            Op::SliceLast { a, start, width } => {
                let d = self.value(*a).last_dim();
                acc(*a, &|ga| {
                    for (out, gr) in ga.chunks_mut(d).zip(g.chunks(*width)) {
                        add_into(&mut out[*start..*start + *width], gr);
                    }
                });
            }
            Op::ConcatLast { parts } => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    acc(p, &|gp| {
                        for (out, gr) in gp.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(out, &gr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Gather { table, ids } => {
                let d = node.value.last_dim();
                acc(*table, &|gt| {
                    for (&id, gr) in ids.iter().zip(g.chunks(d)) {
                        add_into(&mut gt[id * d..(id + 1) * d], gr);
                    }
                });
            }
            Op::SelectFirst { a } => {
                let s = self.value(*a).shape();
                let (sq, d) = (s[1], s[2]);
                acc(*a, &|ga| {
                    for (i, gr) in g.chunks(d).enumerate() {
                        add_into(&mut ga[i * sq * d..i * sq * d + d], gr);
                    }
                });
            }
            Op::MaskedMse {
                pred,
                diff,
                mask,
                count,
            } => {
                let scale = g[0] * 2.0 / count;
                acc(*pred, &|gp| {
                    for ((o, d), m) in gp.iter_mut().zip(diff).zip(mask) {
                        *o += scale * d * m;
                    }
                });
            }
            Op::CrossEntropy { logits, probs, labels } => {
                let c = self.value(*logits).last_dim();
                let scale = g[0] / labels.len() as f64;
                acc(*logits, &|gl| {
                    for (i, (out, pr)) in gl.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        for (j, (o, p)) in out.iter_mut().zip(pr).enumerate() {
                            let y = if j == labels[i] { 1.0 } else { 0.0 };
                            *o += scale * (p - y);
                        }
                    }
                });
            }
            Op::Mean { parts } => {
                let share = g[0] / parts.len() as f64;
                for &p in parts {
                    acc(p, &|gp| gp[0] += share);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn batch_dims(sa: &[usize], sb: &[usize]) -> (usize, usize, usize, usize) {
    match (sa, sb) {
        ([m, k], [_, n]) => (1, *m, *k, *n),
        ([b, m, k], [_, _, n]) => (*b, *m, *k, *n),
        _ => unreachable!("validated in forward"),
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    bindings: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds each bound parameter's gradient into the matching entry of `params`.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<()> {
        for (name, v) in &self.bindings {
            if let (Some(p), Some(g)) = (params.by_name_mut(name), self.get(*v)) {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
