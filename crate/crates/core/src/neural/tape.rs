//! Reverse-mode differentiation over 2D tensors.
//!
//! A [`Graph`] records every operation applied during one forward pass;
//! [`Graph::backward`] walks the record in reverse and returns gradients for
//! every parameter in the [`ParamStore`]. Attention, the pairwise edge
//! combiner and the losses are fused ops with hand-written adjoints.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{dot, matmul, matmul_a_bt_acc, matmul_at_b_acc, Tensor};

pub type ParamId = usize;

const LN_EPS: f64 = 1e-5;

/// Named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.numel(), "flat parameter length");
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Zero tensors with the same shapes.
    pub fn zeros_like(&self) -> Grads {
        Grads {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }
}

/// Gradients, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Tensor>,
}

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Optional relation-dependent terms of an attention op.
#[derive(Clone, Debug)]
pub struct EdgeTerms {
    /// `n * m` relation indices, row-major over (query, key).
    pub rel: Vec<usize>,
    /// `R x H` additive logit bias.
    pub bias: Var,
    /// `R x W` additive value offset.
    pub value: Var,
}

struct AttnCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    edges: Option<EdgeTerms>,
    /// `H x n x m` attention weights; masked keys hold exactly 0.
    probs: Vec<f64>,
}

struct CeCache {
    logits: Var,
    targets: Vec<(usize, usize, f64)>,
    /// Softmax of each target row, in target order.
    probs: Vec<Vec<f64>>,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    Attention(Box<AttnCache>),
    PairCombine {
        p: Var,
        q: Var,
        e: Var,
        rel: Vec<usize>,
    },
    CrossEntropy(Box<CeCache>),
    Mse {
        pred: Var,
        target: Tensor,
        weight: f64,
    },
    LinComb(Vec<(Var, f64)>),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

/// One forward pass over borrowed parameters.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        xs.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut s = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    xs.iter_mut().for_each(|x| *x /= s);
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; params.len()],
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id] = Some(v);
        v
    }

    /// A constant (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1);
        let mut out = self.value(a).clone();
        assert_eq!(out.cols, r.cols);
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `x W + b`
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = gelu(*x).0);
        self.push(out, Op::Gelu(a))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        out.data.iter_mut().zip(&mask).for_each(|(x, m)| *x *= m);
        self.push(out, Op::Dropout(a, mask))
    }

    /// Row-wise layer normalization with `1 x c` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let gamma = self.param(gamma);
        let beta = self.param(beta);
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut rstd = vec![0.0; rows];
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = s;
            for (o, v) in xhat.row_mut(i).iter_mut().zip(r) {
                *o = (v - mean) * s;
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for i in 0..rows {
            for (k, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = *o * g.data[k] + b.data[k];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Rows `idx` of a table.
    pub fn gather(&mut self, table: ParamId, idx: &[usize]) -> Var {
        let table = self.param(table);
        let t = self.value(table);
        let mut out = Tensor::zeros(idx.len(), t.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
        )
    }

    /// Multi-head scaled dot-product attention of `q (n x W)` over
    /// `k, v (m x W)`, optionally with relation bias/value terms and a key
    /// mask (`false` = ignored key).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        edges: Option<EdgeTerms>,
        key_mask: Option<Vec<bool>>,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, w) = qv.shape();
        let m = kv.rows;
        assert_eq!(w % heads, 0, "width divisible by heads");
        let dh = w / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let bias = edges.as_ref().map(|e| self.value(e.bias));
        let val = edges.as_ref().map(|e| self.value(e.value));
        let mut probs = vec![0.0; heads * n * m];
        let mut out = Tensor::zeros(n, w);
        let mut logits = vec![0.0; m];
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            for i in 0..n {
                let qi = &qv.row(i)[hs.clone()];
                for j in 0..m {
                    let masked = key_mask.as_ref().is_some_and(|km| !km[j]);
                    logits[j] = if masked {
                        f64::NEG_INFINITY
                    } else {
                        let mut l = dot(qi, &kv.row(j)[hs.clone()]) * scale;
                        if let (Some(b), Some(e)) = (bias, edges.as_ref()) {
                            l += b.get(e.rel[i * m + j], h);
                        }
                        l
                    };
                }
                softmax_in_place(&mut logits);
                probs[(h * n + i) * m..(h * n + i + 1) * m].copy_from_slice(&logits);
                let orow = &mut out.data[i * w + h * dh..i * w + (h + 1) * dh];
                for j in 0..m {
                    let p = logits[j];
                    if p == 0.0 {
                        continue;
                    }
                    for (o, x) in orow.iter_mut().zip(&vv.row(j)[hs.clone()]) {
                        *o += p * x;
                    }
                    if let (Some(val), Some(e)) = (val, edges.as_ref()) {
                        for (o, x) in orow.iter_mut().zip(&val.row(e.rel[i * m + j])[hs.clone()]) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention(Box::new(AttnCache {
                q,
                k,
                v,
                heads,
                edges,
                probs,
            })),
        )
    }

    /// `relu(p_i + q_j + e[rel_ij])` for every ordered pair, as an
    /// `(n * n) x E` tensor.
    pub fn pair_combine(&mut self, p: Var, q: Var, e: ParamId, rel: &[usize]) -> Var {
        let e = self.param(e);
        let (pv, qv, ev) = (self.value(p), self.value(q), self.value(e));
        let (n, d) = pv.shape();
        assert_eq!(rel.len(), n * n);
        let mut out = Tensor::zeros(n * n, d);
        for i in 0..n {
            for j in 0..n {
                let o = out.row_mut(i * n + j);
                for (k, ok) in o.iter_mut().enumerate() {
                    let x = pv.data[i * d + k] + qv.data[j * d + k] + ev.data[rel[i * n + j] * d + k];
                    *ok = x.max(0.0);
                }
            }
        }
        self.push(
            out,
            Op::PairCombine {
                p,
                q,
                e,
                rel: rel.to_vec(),
            },
        )
    }

    /// `sum_k w_k * CE(softmax(logits[row_k]), class_k)` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize, f64)>) -> Var {
        let lv = self.value(logits);
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(targets.len());
        for &(r, c, w) in &targets {
            let mut p = lv.row(r).to_vec();
            softmax_in_place(&mut p);
            loss -= w * p[c].max(1e-300).ln();
            probs.push(p);
        }
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(Box::new(CeCache {
                logits,
                targets,
                probs,
            })),
        )
    }

    /// `weight * sum (pred - target)^2` as a scalar.
    pub fn mse(&mut self, pred: Var, target: Tensor, weight: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        let s: f64 = pv.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
        self.push(Tensor::scalar(weight * s), Op::Mse { pred, target, weight })
    }

    /// `sum_k c_k * x_k` over scalars.
    pub fn lin_comb(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let s = terms.iter().map(|&(v, c)| c * self.value(v).data[0]).sum();
        self.push(Tensor::scalar(s), Op::LinComb(terms))
    }

    /// Gradients of scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut pg = self.params.zeros_like();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads, &mut pg);
        }
        pg
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut Tensor {
        let (r, c) = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>], pg: &mut Grads) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Param(id) => pg.tensors[*id].add_assign(g),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                matmul_a_bt_acc(g, bv, self.slot(grads, *a));
                matmul_at_b_acc(av, g, self.slot(grads, *b));
            }
            Op::Add(a, b) => {
                self.slot(grads, *a).add_assign(g);
                self.slot(grads, *b).add_assign(g);
            }
            Op::AddRow(a, row) => {
                self.slot(grads, *a).add_assign(g);
                let r = self.slot(grads, *row);
                for i in 0..g.rows {
                    for (o, x) in r.data.iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a);
                let s = self.slot(grads, *a);
                for ((o, &x), &gi) in s.data.iter_mut().zip(&av.data).zip(&g.data) {
                    *o += gi * gelu(x).1;
                }
            }
            Op::Dropout(a, mask) => {
                let s = self.slot(grads, *a);
                for ((o, m), gi) in s.data.iter_mut().zip(mask).zip(&g.data) {
                    *o += gi * m;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma).data.clone();
                let (rows, cols) = xhat.shape();
                {
                    let dg = self.slot(grads, *gamma);
                    for i in 0..rows {
                        for k in 0..cols {
                            dg.data[k] += g.data[i * cols + k] * xhat.data[i * cols + k];
                        }
                    }
                }
                {
                    let db = self.slot(grads, *beta);
                    for i in 0..rows {
                        for k in 0..cols {
                            db.data[k] += g.data[i * cols + k];
                        }
                    }
                }
                let dx = self.slot(grads, *x);
                let mut dxhat = vec![0.0; cols];
                for i in 0..rows {
                    let xh = xhat.row(i);
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for k in 0..cols {
                        dxhat[k] = g.data[i * cols + k] * gv[k];
                        m1 += dxhat[k];
                        m2 += dxhat[k] * xh[k];
                    }
                    m1 /= cols as f64;
                    m2 /= cols as f64;
                    for k in 0..cols {
                        dx.data[i * cols + k] += rstd[i] * (dxhat[k] - m1 - xh[k] * m2);
                    }
                }
            }
            Op::Gather { table, idx } => {
                let t = self.slot(grads, *table);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, x) in t.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
            }
            Op::Attention(c) => self.backprop_attention(c, g, grads),
            Op::PairCombine { p, q, e, rel } => {
                let out = self.value(Var(idx));
                let (nn, d) = out.shape();
                let n = (nn as f64).sqrt().round() as usize;
                let mut gm = g.clone();
                for (x, o) in gm.data.iter_mut().zip(&out.data) {
                    if *o <= 0.0 {
                        *x = 0.0;
                    }
                }
                {
                    let dp = self.slot(grads, *p);
                    for i in 0..n {
                        for j in 0..n {
                            let src = &gm.data[(i * n + j) * d..(i * n + j + 1) * d];
                            for (o, x) in dp.data[i * d..(i + 1) * d].iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                }
                {
                    let dq = self.slot(grads, *q);
                    for i in 0..n {
                        for j in 0..n {
                            let src = &gm.data[(i * n + j) * d..(i * n + j + 1) * d];
                            for (o, x) in dq.data[j * d..(j + 1) * d].iter_mut().zip(src) {
                                *o += x;
                            }
                        }
                    }
                }
                let de = self.slot(grads, *e);
                for (pair, &r) in rel.iter().enumerate() {
                    let src = &gm.data[pair * d..(pair + 1) * d];
                    for (o, x) in de.data[r * d..(r + 1) * d].iter_mut().zip(src) {
                        *o += x;
                    }
                }
            }
            Op::CrossEntropy(c) => {
                let scale = g.data[0];
                let dl = self.slot(grads, c.logits);
                for (&(r, cls, w), p) in c.targets.iter().zip(&c.probs) {
                    let row = dl.row_mut(r);
                    for (k, (o, pk)) in row.iter_mut().zip(p).enumerate() {
                        let y = if k == cls { 1.0 } else { 0.0 };
                        *o += scale * w * (pk - y);
                    }
                }
            }
            Op::Mse { pred, target, weight } => {
                let scale = g.data[0] * 2.0 * weight;
                let pv = self.value(*pred).data.clone();
                let dp = self.slot(grads, *pred);
                for ((o, p), t) in dp.data.iter_mut().zip(&pv).zip(&target.data) {
                    *o += scale * (p - t);
                }
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    self.slot(grads, v).data[0] += c * g.data[0];
                }
            }
        }
    }

    fn backprop_attention(&self, c: &AttnCache, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let (n, w) = qv.shape();
        let m = kv.rows;
        let dh = w / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Tensor::zeros(n, w);
        let mut dk = Tensor::zeros(m, w);
        let mut dv = Tensor::zeros(m, w);
        let edge_shapes = c
            .edges
            .as_ref()
            .map(|e| (self.value(e.bias).shape(), self.value(e.value).shape()));
        let mut dbias = edge_shapes.map(|(b, _)| Tensor::zeros(b.0, b.1));
        let mut dval = edge_shapes.map(|(_, v)| Tensor::zeros(v.0, v.1));
        let val = c.edges.as_ref().map(|e| self.value(e.value));
        let mut dp = vec![0.0; m];
        for h in 0..c.heads {
            let hs = h * dh..(h + 1) * dh;
            for i in 0..n {
                let p = &c.probs[(h * n + i) * m..(h * n + i + 1) * m];
                let go = &g.row(i)[hs.clone()];
                let mut acc = 0.0;
                for j in 0..m {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let mut d = dot(go, &vv.row(j)[hs.clone()]);
                    if let (Some(val), Some(e)) = (val, c.edges.as_ref()) {
                        let r = e.rel[i * m + j];
                        d += dot(go, &val.row(r)[hs.clone()]);
                        let dvr = &mut dval.as_mut().expect("edge grads").data[r * w + h * dh..r * w + (h + 1) * dh];
                        for (o, x) in dvr.iter_mut().zip(go) {
                            *o += p[j] * x;
                        }
                    }
                    for (o, x) in dv.data[j * w + h * dh..j * w + (h + 1) * dh].iter_mut().zip(go) {
                        *o += p[j] * x;
                    }
                    dp[j] = d;
                    acc += p[j] * d;
                }
                for j in 0..m {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - acc);
                    if let Some(e) = c.edges.as_ref() {
                        let r = e.rel[i * m + j];
                        let db = dbias.as_mut().expect("edge grads");
                        let cols = db.cols;
                        db.data[r * cols + h] += ds;
                    }
                    let s = ds * scale;
                    let kj = &kv.row(j)[hs.clone()];
                    for (o, x) in dq.data[i * w + h * dh..i * w + (h + 1) * dh].iter_mut().zip(kj) {
                        *o += s * x;
                    }
                    let qi = &qv.row(i)[hs.clone()];
                    for (o, x) in dk.data[j * w + h * dh..j * w + (h + 1) * dh].iter_mut().zip(qi) {
                        *o += s * x;
                    }
                }
            }
        }
        self.slot(grads, c.q).add_assign(&dq);
        self.slot(grads, c.k).add_assign(&dk);
        self.slot(grads, c.v).add_assign(&dv);
        if let (Some(e), Some(db), Some(dvl)) = (c.edges.as_ref(), dbias, dval) {
            self.slot(grads, e.bias).add_assign(&db);
            self.slot(grads, e.value).add_assign(&dvl);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
    }

    /// Checks every parameter entry of `build` against central differences.
    fn check(params: &mut ParamStore, build: &dyn Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(params);
            let l = build(&mut g);
            g.backward(l)
        };
        let h = 1e-5;
        for id in 0..params.len() {
            for k in 0..params.get(id).len() {
                let orig = params.get(id).data[k];
                params.get_mut(id).data[k] = orig + h;
                let lp = {
                    let mut g = Graph::new(params);
                    let l = build(&mut g);
                    g.value(l).data[0]
                };
                params.get_mut(id).data[k] = orig - h;
                let lm = {
                    let mut g = Graph::new(params);
                    let l = build(&mut g);
                    g.value(l).data[0]
                };
                params.get_mut(id).data[k] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = analytic.tensors[id].data[k];
                let err = (num - ana).abs() / (num.abs().max(ana.abs()).max(1e-6));
                assert!(err < 1e-5 || (num - ana).abs() < 1e-8, "{} [{k}]: {num} vs {ana}", params.name(id));
            }
        }
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamStore::new();
        let emb = ps.add("emb", randn(5, 6, &mut rng));
        let w = ps.add("w", randn(6, 6, &mut rng));
        let b = ps.add("b", randn(1, 6, &mut rng));
        let gm = ps.add("gamma", randn(1, 6, &mut rng));
        let bt = ps.add("beta", randn(1, 6, &mut rng));
        let wo = ps.add("wo", randn(6, 4, &mut rng));
        let target = randn(3, 4, &mut rng);
        check(&mut ps, &|g| {
            let x = g.gather(emb, &[0, 3, 3]);
            let y = g.linear(x, w, b);
            let y = g.gelu(y);
            let y = g.add(y, x);
            let y = g.layer_norm(y, gm, bt);
            let wv = g.param(wo);
            let o = g.matmul(y, wv);
            let ce = g.cross_entropy(o, vec![(0, 1, 1.0), (2, 3, 0.5)]);
            let ms = g.mse(o, target.clone(), 0.3);
            g.lin_comb(vec![(ce, 1.0), (ms, 2.0)])
        });
    }

    #[test]
    fn attention_and_pair_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamStore::new();
        let x = ps.add("x", randn(4, 8, &mut rng));
        let mem = ps.add("mem", randn(3, 8, &mut rng));
        let bias = ps.add("bias", randn(5, 2, &mut rng));
        let val = ps.add("val", randn(5, 8, &mut rng));
        let et = ps.add("etab", randn(5, 8, &mut rng));
        let wo = ps.add("wo", randn(8, 3, &mut rng));
        let rel: Vec<usize> = (0..16).map(|i| (i * 7) % 5).collect();
        check(&mut ps, &|g| {
            let xv = g.param(x);
            let (bv, vv) = (g.param(bias), g.param(val));
            let edges = EdgeTerms {
                rel: rel.clone(),
                bias: bv,
                value: vv,
            };
            let a = g.attention(xv, xv, xv, 2, Some(edges), Some(vec![true, false, true, true]));
            let mv = g.param(mem);
            let c = g.attention(a, mv, mv, 2, None, None);
            let pc = g.pair_combine(c, a, et, &rel);
            let w = g.param(wo);
            let o = g.matmul(pc, w);
            g.cross_entropy(o, vec![(1, 0, 1.0), (6, 2, 1.0), (15, 1, 0.25)])
        });
    }

    #[test]
    fn masked_keys_get_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps = ParamStore::new();
        let mut g = Graph::new(&ps);
        let x = g.input(randn(3, 4, &mut rng));
        let mut y = randn(3, 4, &mut rng);
        let v1 = g.input(y.clone());
        let a = g.attention(x, x, v1, 1, None, Some(vec![true, true, false]));
        y.row_mut(2).iter_mut().for_each(|v| *v += 100.0);
        let v2 = g.input(y);
        let b = g.attention(x, x, v2, 1, None, Some(vec![true, true, false]));
        assert_eq!(g.value(a), g.value(b));
    }
}
