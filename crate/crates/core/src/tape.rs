//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Nodes hold dense `f64` vectors (scalars are length one). Parameters are
//! read from a borrowed [`ModelParams`] and their gradients are accumulated
//! into a second `ModelParams` of the same layout.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::crf::{self, TransitionTable};
use crate::encoder::{self, EncoderCache};
use crate::math;
use crate::params::{ModelParams, ParamId};
use crate::proto::{self, DistanceKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    ParamRow(ParamId, usize),
    Encode(Box<EncoderCache>),
    Slice(Var, usize),
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mean(Vec<Var>),
    Sum(Vec<Var>),
    Tanh(Var),
    SoftplusEps(Var),
    Normalize(Var),
    Concat(Vec<Var>),
    Dot(Var, Var),
    Euclid(Var, Var),
    KlSym(Var, Var),
    Gather(Var, Vec<Option<usize>>),
    Nll(Var, usize),
    GroupLogits { query: Var, groups: Vec<Vec<Var>>, kind: DistanceKind },
    Crf { emissions: Var, start: Var, end: Var, trans: Var, n_tags: usize, gold: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Variance floor added after softplus in Gaussian heads.
pub const VAR_EPS: f64 = 1e-6;

pub struct Tape<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Tape { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tensor(&self, id: ParamId) -> &'p crate::params::Tensor {
        self.params.get(id).unwrap_or_else(|| panic!("tape uses missing tensor `{}`", id.name()))
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Copy of `v` that blocks gradients.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).to_vec();
        self.constant(value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.tensor(id).data.clone();
        self.push(value, Op::Param(id))
    }

    pub fn param_row(&mut self, id: ParamId, row: usize) -> Var {
        let value = self.tensor(id).row(row).to_vec();
        self.push(value, Op::ParamRow(id, row))
    }

    /// Encode a bucket-id sequence; the result is `[n, dim]` flattened.
    pub fn encode(&mut self, ids: &[usize]) -> Var {
        let (value, cache) = encoder::forward(ids, &self.params.encoder);
        self.push(value, Op::Encode(Box::new(cache)))
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Var {
        let value = self.value(v)[start..start + len].to_vec();
        self.push(value, Op::Slice(v, start))
    }

    /// Row `i` of a `[n, width]` node.
    pub fn row(&mut self, v: Var, i: usize, width: usize) -> Var {
        self.slice(v, i * width, width)
    }

    /// `W x (+ b)` with `W` a `[rows, cols]` parameter.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wt = self.tensor(w);
        let rows = wt.shape[0];
        let xv = self.value(x);
        let mut out: Vec<f64> = (0..rows).map(|r| math::dot(wt.row(r), xv)).collect();
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(&self.tensor(b).data) {
                *o += bv;
            }
        }
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * s).collect();
        self.push(value, Op::Scale(a, s))
    }

    pub fn mean(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "mean of no vectors");
        let rows: Vec<&[f64]> = vars.iter().map(|&v| self.value(v)).collect();
        let value = math::mean_of(&rows);
        self.push(value, Op::Mean(vars.to_vec()))
    }

    pub fn sum(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "sum of no vectors");
        let mut value = self.value(vars[0]).to_vec();
        for &v in &vars[1..] {
            for (o, x) in value.iter_mut().zip(self.value(v)) {
                *o += x;
            }
        }
        self.push(value, Op::Sum(vars.to_vec()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| math::tanh(x)).collect();
        self.push(value, Op::Tanh(a))
    }

    /// `softplus(a) + VAR_EPS`, elementwise.
    pub fn softplus_eps(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| math::softplus(x) + VAR_EPS).collect();
        self.push(value, Op::SoftplusEps(a))
    }

    /// `a / ||a||`; the caller guarantees `a != 0`.
    pub fn normalize(&mut self, a: Var) -> Var {
        let n = math::norm(self.value(a));
        let value = self.value(a).iter().map(|x| x / n).collect();
        self.push(value, Op::Normalize(a))
    }

    pub fn concat(&mut self, vars: &[Var]) -> Var {
        let mut value = Vec::new();
        for &v in vars {
            value.extend_from_slice(self.value(v));
        }
        self.push(value, Op::Concat(vars.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let value = vec![math::dot(self.value(a), self.value(b))];
        self.push(value, Op::Dot(a, b))
    }

    pub fn euclid(&mut self, a: Var, b: Var) -> Var {
        let value = vec![math::euclidean(self.value(a), self.value(b))];
        self.push(value, Op::Euclid(a, b))
    }

    /// Symmetrized KL of diagonal Gaussians stored as `[mean; var]`.
    pub fn kl_sym(&mut self, a: Var, b: Var) -> Var {
        let value = vec![proto::sym_kl_flat(self.value(a), self.value(b))];
        self.push(value, Op::KlSym(a, b))
    }

    /// `out[k] = a[idx[k]]`, or `-inf` where `idx[k]` is `None`.
    pub fn gather(&mut self, a: Var, idx: Vec<Option<usize>>) -> Var {
        let av = self.value(a);
        let value = idx.iter().map(|i| i.map_or(f64::NEG_INFINITY, |i| av[i])).collect();
        self.push(value, Op::Gather(a, idx))
    }

    /// `-log softmax(logits)[gold]`.
    pub fn nll(&mut self, logits: Var, gold: usize) -> Var {
        let l = self.value(logits);
        let value = vec![math::log_sum_exp(l) - l[gold]];
        self.push(value, Op::Nll(logits, gold))
    }

    /// `out[g] = mean over keys k in groups[g] of -d(query, k)`; empty
    /// groups give `-inf`.
    pub fn group_logits(&mut self, query: Var, groups: Vec<Vec<Var>>, kind: DistanceKind) -> Var {
        let q = self.value(query);
        let value = groups
            .iter()
            .map(|keys| {
                if keys.is_empty() {
                    return f64::NEG_INFINITY;
                }
                let mut s = 0.0;
                for k in keys {
                    s += proto::neg_distance(q, self.value(*k), kind);
                }
                s / keys.len() as f64
            })
            .collect();
        self.push(value, Op::GroupLogits { query, groups, kind })
    }

    /// Linear-chain CRF negative log-likelihood of `gold`; `emissions` is
    /// `[n, n_tags]`, `trans` is `[n_tags, n_tags]` (from, to).
    pub fn crf_nll(&mut self, emissions: Var, start: Var, end: Var, trans: Var, n_tags: usize, gold: Vec<usize>) -> Var {
        let table = TransitionTable::from_parts(
            n_tags,
            self.value(start).to_vec(),
            self.value(end).to_vec(),
            self.value(trans).to_vec(),
        );
        let em = self.value(emissions);
        let log_z = crf::log_partition_flat(em, n_tags, &table);
        let score = crf::path_score_flat(em, n_tags, &table, &gold);
        self.push(vec![log_z - score], Op::Crf { emissions, start, end, trans, n_tags, gold })
    }

    /// Backpropagate from scalar `root` and add parameter gradients into
    /// `grads` (same layout as the tape's parameters).
    pub fn backward(&self, root: Var, grads: &mut ModelParams) {
        let mut g: Vec<Vec<f64>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        g[root.0] = vec![1.0; self.nodes[root.0].value.len()];
        for idx in (0..=root.0).rev() {
            if g[idx].is_empty() {
                continue;
            }
            let gi = core::mem::take(&mut g[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let t = grads.get_mut(*id).expect("grad tensor");
                    for (a, b) in t.data.iter_mut().zip(&gi) {
                        *a += b;
                    }
                }
                Op::ParamRow(id, row) => {
                    let t = grads.get_mut(*id).expect("grad tensor");
                    for (a, b) in t.row_mut(*row).iter_mut().zip(&gi) {
                        *a += b;
                    }
                }
                Op::Encode(cache) => {
                    encoder::backward(cache, &gi, &self.params.encoder, &mut grads.encoder);
                }
                Op::Slice(src, start) => {
                    let dst = acc(&mut g, *src, self.nodes[src.0].value.len());
                    for (a, b) in dst[*start..*start + gi.len()].iter_mut().zip(&gi) {
                        *a += b;
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = self.tensor(*w);
                    let xv = &self.nodes[x.0].value;
                    {
                        let gw = grads.get_mut(*w).expect("grad tensor");
                        for (r, &gr) in gi.iter().enumerate() {
                            if gr != 0.0 {
                                for (a, &xk) in gw.row_mut(r).iter_mut().zip(xv) {
                                    *a += gr * xk;
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = grads.get_mut(*b).expect("grad tensor");
                        for (a, v) in gb.data.iter_mut().zip(&gi) {
                            *a += v;
                        }
                    }
                    let dx = acc(&mut g, *x, xv.len());
                    for (r, &gr) in gi.iter().enumerate() {
                        if gr != 0.0 {
                            for (a, &wk) in dx.iter_mut().zip(wt.row(r)) {
                                *a += gr * wk;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut g, *a, gi.len()), &gi, 1.0);
                    add_into(acc(&mut g, *b, gi.len()), &gi, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut g, *a, gi.len()), &gi, 1.0);
                    add_into(acc(&mut g, *b, gi.len()), &gi, -1.0);
                }
                Op::Scale(a, s) => add_into(acc(&mut g, *a, gi.len()), &gi, *s),
                Op::Mean(vars) => {
                    let s = 1.0 / vars.len() as f64;
                    for v in vars {
                        add_into(acc(&mut g, *v, gi.len()), &gi, s);
                    }
                }
                Op::Sum(vars) => {
                    for v in vars {
                        add_into(acc(&mut g, *v, gi.len()), &gi, 1.0);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let dst = acc(&mut g, *a, gi.len());
                    for ((d, gv), yv) in dst.iter_mut().zip(&gi).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::SoftplusEps(a) => {
                    let x = &self.nodes[a.0].value;
                    let dst = acc(&mut g, *a, gi.len());
                    for ((d, gv), xv) in dst.iter_mut().zip(&gi).zip(x) {
                        *d += gv * math::sigmoid(*xv);
                    }
                }
                Op::Normalize(a) => {
                    let y = &node.value;
                    let n = math::norm(&self.nodes[a.0].value);
                    let proj = math::dot(y, &gi);
                    let dst = acc(&mut g, *a, gi.len());
                    for ((d, gv), yv) in dst.iter_mut().zip(&gi).zip(y) {
                        *d += (gv - yv * proj) / n;
                    }
                }
                Op::Concat(vars) => {
                    let mut offset = 0;
                    for v in vars {
                        let len = self.nodes[v.0].value.len();
                        add_into(acc(&mut g, *v, len), &gi[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::Dot(a, b) => {
                    let s = gi[0];
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    add_into(acc(&mut g, *a, av.len()), bv, s);
                    add_into(acc(&mut g, *b, bv.len()), av, s);
                }
                Op::Euclid(a, b) => {
                    let d = node.value[0];
                    if d > 0.0 {
                        let s = gi[0] / d;
                        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                        let diff: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x - y).collect();
                        add_into(acc(&mut g, *a, diff.len()), &diff, s);
                        add_into(acc(&mut g, *b, diff.len()), &diff, -s);
                    }
                }
                Op::KlSym(a, b) => {
                    let (da, db) = proto::sym_kl_flat_grad(&self.nodes[a.0].value, &self.nodes[b.0].value);
                    add_into(acc(&mut g, *a, da.len()), &da, gi[0]);
                    add_into(acc(&mut g, *b, db.len()), &db, gi[0]);
                }
                Op::Gather(a, idx) => {
                    let len = self.nodes[a.0].value.len();
                    let dst = acc(&mut g, *a, len);
                    for (k, i) in idx.iter().enumerate() {
                        if let Some(i) = i {
                            dst[*i] += gi[k];
                        }
                    }
                }
                Op::Nll(logits, gold) => {
                    let l = &self.nodes[logits.0].value;
                    let lse = math::log_sum_exp(l);
                    let dst = acc(&mut g, *logits, l.len());
                    for (k, (d, lv)) in dst.iter_mut().zip(l).enumerate() {
                        let p = math::exp(lv - lse);
                        *d += gi[0] * (p - if k == *gold { 1.0 } else { 0.0 });
                    }
                }
                Op::GroupLogits { query, groups, kind } => {
                    let q = &self.nodes[query.0].value;
                    let mut gq = vec![0.0; q.len()];
                    let mut gk = vec![0.0; q.len()];
                    for (keys, &gg) in groups.iter().zip(&gi) {
                        if keys.is_empty() || gg == 0.0 {
                            continue;
                        }
                        let s = gg / keys.len() as f64;
                        for k in keys {
                            gk.iter_mut().for_each(|x| *x = 0.0);
                            proto::neg_distance_grad(q, &self.nodes[k.0].value, *kind, s, &mut gq, &mut gk);
                            add_into(acc(&mut g, *k, q.len()), &gk, 1.0);
                        }
                    }
                    add_into(acc(&mut g, *query, q.len()), &gq, 1.0);
                }
                Op::Crf { emissions, start, end, trans, n_tags, gold } => {
                    let table = TransitionTable::from_parts(
                        *n_tags,
                        self.nodes[start.0].value.clone(),
                        self.nodes[end.0].value.clone(),
                        self.nodes[trans.0].value.clone(),
                    );
                    let em = &self.nodes[emissions.0].value;
                    let m = crf::marginals_flat(em, *n_tags, &table);
                    let s = gi[0];
                    let t = *n_tags;
                    let n = em.len() / t;
                    {
                        let de = acc(&mut g, *emissions, em.len());
                        for (k, d) in de.iter_mut().enumerate() {
                            let gold_hit = if gold[k / t] == k % t { 1.0 } else { 0.0 };
                            *d += s * (m.unary[k] - gold_hit);
                        }
                    }
                    {
                        let ds = acc(&mut g, *start, t);
                        for (k, d) in ds.iter_mut().enumerate() {
                            let hit = if gold[0] == k { 1.0 } else { 0.0 };
                            *d += s * (m.unary[k] - hit);
                        }
                    }
                    {
                        let dend = acc(&mut g, *end, t);
                        for (k, d) in dend.iter_mut().enumerate() {
                            let hit = if gold[n - 1] == k { 1.0 } else { 0.0 };
                            *d += s * (m.unary[(n - 1) * t + k] - hit);
                        }
                    }
                    {
                        let dt = acc(&mut g, *trans, t * t);
                        for (k, d) in dt.iter_mut().enumerate() {
                            *d += s * m.pairwise[k];
                        }
                        for w in gold.windows(2) {
                            dt[w[0] * t + w[1]] -= s;
                        }
                    }
                }
            }
        }
    }
}

fn acc(g: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
    let slot = &mut g[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    slot
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}
