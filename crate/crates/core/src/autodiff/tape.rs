//! Reverse-mode tape.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes in reverse recording order and pushes each node's
//! gradient into its inputs. Leaf gradients accumulate across calls until
//! [`Tape::zero_grads`]; intermediate gradients are rebuilt on every call.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Clamp applied inside every logarithm of the cross-entropy ops.
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Concat { parts: Vec<usize>, axis: Axis },
    SliceRows { src: usize, start: usize },
    SliceCols { src: usize, start: usize },
    Reshape(usize),
    Softmax(usize),
    Dropout { src: usize, scale: Vec<f64> },
    Sum(usize),
    CrossEntropy { src: usize, target: usize },
    BinaryCrossEntropy { src: usize, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [r, c] => Some((r, c)),
        _ => None,
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a copy of `tensor`; gradients flow to it iff it requires grad.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    /// Trainable leaf, mainly for tests and small models built directly on a tape.
    pub fn variable(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("variable", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, true))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node shape is consistent")
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        let (Some((m, k)), Some((k2, n))) = (dims2(sa), dims2(sb)) else {
            return Err(Error::dim("matmul", sa, sb));
        };
        if k != k2 {
            return Err(Error::dim("matmul", sa, sb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(&self.node(a).value, &self.node(b).value, &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let Some((m, n)) = dims2(&self.node(a).shape) else {
            return Err(Error::dim("transpose", &self.node(a).shape, &[]));
        };
        let src = &self.node(a).value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a.0), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::dim(op, &self.node(a).shape, &self.node(b).shape));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Add(a.0, b.0), rg))
    }

    /// Adds the length-`n` vector `row` to every row of the `m×n` matrix `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let sa = &self.node(a).shape;
        let Some((_, n)) = dims2(sa) else {
            return Err(Error::dim("add_row", sa, &self.node(row).shape));
        };
        if self.node(row).value.len() != n {
            return Err(Error::dim("add_row", sa, &self.node(row).shape));
        }
        let r = &self.node(row).value;
        let out = self
            .node(a)
            .value
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(&[a, row]);
        Ok(self.push(sa.clone(), out, Op::AddRow(a.0, row.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.node(a).value.iter().map(|x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.node(a).shape.clone(), out, Op::Scale(a.0, c), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.node(a).value.iter().map(|x| x.tanh()).collect();
        let rg = self.rg(&[a]);
        self.push(self.node(a).shape.clone(), out, Op::Tanh(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.node(a).value.iter().map(|&x| sigmoid(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.node(a).shape.clone(), out, Op::Sigmoid(a.0), rg)
    }

    /// Concatenates 2-D tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let Some((r0, c0)) = dims2(&self.node(*first).shape) else {
            return Err(Error::dim("concat", &self.node(*first).shape, &[]));
        };
        let mut total = 0;
        for p in parts {
            let s = &self.node(*p).shape;
            match (dims2(s), axis) {
                (Some((r, c)), Axis::Rows) if c == c0 => total += r,
                (Some((r, c)), Axis::Cols) if r == r0 => total += c,
                _ => return Err(Error::dim("concat", &self.node(*first).shape, s)),
            }
        }
        let (shape, out) = match axis {
            Axis::Rows => {
                let mut out = Vec::with_capacity(total * c0);
                for p in parts {
                    out.extend_from_slice(&self.node(*p).value);
                }
                (vec![total, c0], out)
            }
            Axis::Cols => {
                let mut out = Vec::with_capacity(r0 * total);
                for i in 0..r0 {
                    for p in parts {
                        let n = &self.node(*p);
                        let c = n.shape[1];
                        out.extend_from_slice(&n.value[i * c..(i + 1) * c]);
                    }
                }
                (vec![r0, total], out)
            }
        };
        let rg = self.rg(parts);
        let parts = parts.iter().map(|v| v.0).collect();
        Ok(self.push(shape, out, Op::Concat { parts, axis }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = &self.node(a).shape;
        let Some((m, n)) = dims2(s) else {
            return Err(Error::dim("slice_rows", s, &[start, len]));
        };
        if start + len > m || len == 0 {
            return Err(Error::dim("slice_rows", s, &[start, len]));
        }
        let out = self.node(a).value[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![len, n], out, Op::SliceRows { src: a.0, start }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = &self.node(a).shape;
        let Some((m, n)) = dims2(s) else {
            return Err(Error::dim("slice_cols", s, &[start, len]));
        };
        if start + len > n || len == 0 {
            return Err(Error::dim("slice_cols", s, &[start, len]));
        }
        let v = &self.node(a).value;
        let out = (0..m)
            .flat_map(|i| v[i * n + start..i * n + start + len].iter().copied())
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, len], out, Op::SliceCols { src: a.0, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.node(a).value.len() {
            return Err(Error::dim("reshape", &self.node(a).shape, shape));
        }
        let out = self.node(a).value.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a.0), rg))
    }

    /// Softmax over all entries of `a`; entries with `mask[i] == false` are exactly zero.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let x = &self.node(a).value;
        let out = softmax_values(x, mask)?;
        let rg = self.rg(&[a]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Softmax(a.0), rg))
    }

    /// Inverted dropout. Identity (no node recorded) outside training or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let scale: Vec<f64> = (0..self.node(a).value.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.node(a).value.iter().zip(&scale).map(|(x, s)| x * s).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Dropout { src: a.0, scale }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Vec::new(), vec![s], Op::Sum(a.0), rg)
    }

    /// `-ln p[target]` for a probability vector `probs`.
    pub fn cross_entropy(&mut self, probs: Var, target: usize) -> Result<Var> {
        let p = &self.node(probs).value;
        if target >= p.len() {
            return Err(Error::Label(format!(
                "class index {target} out of range for {} classes",
                p.len()
            )));
        }
        let v = -p[target].max(LOG_EPS).ln();
        let rg = self.rg(&[probs]);
        Ok(self.push(Vec::new(), vec![v], Op::CrossEntropy { src: probs.0, target }, rg))
    }

    /// Mean binary cross-entropy of sigmoid outputs `probs` against 0/1 `targets`.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let p = &self.node(probs).value;
        if p.len() != targets.len() {
            return Err(Error::dim(
                "binary_cross_entropy",
                &self.node(probs).shape,
                &[targets.len()],
            ));
        }
        if p.is_empty() {
            return Err(Error::DegenerateInput("binary cross-entropy over zero points".into()));
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::Label(format!("binary target {t} not in {{0, 1}}")));
        }
        let total: f64 = p
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                if t == 1.0 {
                    -p.max(LOG_EPS).ln()
                } else {
                    -(1.0 - p).max(LOG_EPS).ln()
                }
            })
            .sum();
        let v = total / p.len() as f64;
        let rg = self.rg(&[probs]);
        Ok(self.push(
            Vec::new(),
            vec![v],
            Op::BinaryCrossEntropy {
                src: probs.0,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Propagates d(loss)/d(node) to every trainable ancestor of `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not recorded on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let Tape { nodes, grads } = self;
        acc(grads, loss.0, 1)[0] += 1.0;

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(&nodes[*a].shape).unwrap();
                    let n = nodes[*b].shape[1];
                    if nodes[*a].requires_grad {
                        let bv = &nodes[*b].value;
                        let ga = acc(grads, *a, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if nodes[*b].requires_grad {
                        let av = &nodes[*a].value;
                        let gb = acc(grads, *b, k * n);
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a_ip = av[i * k + p];
                                if a_ip == 0.0 {
                                    continue;
                                }
                                for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o += a_ip * gv;
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = dims2(&nodes[*a].shape).unwrap();
                    let ga = acc(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for src in [*a, *b] {
                        if nodes[src].requires_grad {
                            add_into(acc(grads, src, g.len()), &g);
                        }
                    }
                }
                Op::AddRow(a, r) => {
                    if nodes[*a].requires_grad {
                        add_into(acc(grads, *a, g.len()), &g);
                    }
                    if nodes[*r].requires_grad {
                        let n = nodes[*r].value.len();
                        let gr = acc(grads, *r, n);
                        for chunk in g.chunks(n) {
                            add_into(gr, chunk);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (src, other) in [(*a, *b), (*b, *a)] {
                        if nodes[src].requires_grad {
                            let ov = &nodes[other].value;
                            let gs = acc(grads, src, g.len());
                            for ((o, gv), x) in gs.iter_mut().zip(&g).zip(ov) {
                                *o += gv * x;
                            }
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(grads, *a, g.len());
                    for (o, gv) in ga.iter_mut().zip(&g) {
                        *o += gv * c;
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(grads, *a, g.len());
                    for ((o, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(grads, *a, g.len());
                    for ((o, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
                Op::Concat { parts, axis } => {
                    let total_cols = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = dims2(&nodes[p].shape).unwrap();
                        if nodes[p].requires_grad {
                            let gp = acc(grads, p, r * c);
                            match axis {
                                Axis::Rows => add_into(gp, &g[offset * c..(offset + r) * c]),
                                Axis::Cols => {
                                    for i in 0..r {
                                        let src = &g[i * total_cols + offset..i * total_cols + offset + c];
                                        add_into(&mut gp[i * c..(i + 1) * c], src);
                                    }
                                }
                            }
                        }
                        offset += match axis {
                            Axis::Rows => r,
                            Axis::Cols => c,
                        };
                    }
                }
                Op::SliceRows { src, start } => {
                    let n = nodes[*src].shape[1];
                    let len = nodes[*src].value.len();
                    let gs = acc(grads, *src, len);
                    add_into(&mut gs[start * n..start * n + g.len()], &g);
                }
                Op::SliceCols { src, start } => {
                    let (m, n) = dims2(&nodes[*src].shape).unwrap();
                    let w = node.shape[1];
                    let gs = acc(grads, *src, m * n);
                    for i in 0..m {
                        add_into(&mut gs[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                }
                Op::Reshape(a) => add_into(acc(grads, *a, g.len()), &g),
                Op::Softmax(a) => {
                    let dot: f64 = g.iter().zip(y).map(|(gv, yv)| gv * yv).sum();
                    let ga = acc(grads, *a, g.len());
                    for ((o, gv), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += yv * (gv - dot);
                    }
                }
                Op::Dropout { src, scale } => {
                    let gs = acc(grads, *src, g.len());
                    for ((o, gv), s) in gs.iter_mut().zip(&g).zip(scale) {
                        *o += gv * s;
                    }
                }
                Op::Sum(a) => {
                    let len = nodes[*a].value.len();
                    acc(grads, *a, len).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::CrossEntropy { src, target } => {
                    let p = nodes[*src].value[*target];
                    let len = nodes[*src].value.len();
                    if p > LOG_EPS {
                        acc(grads, *src, len)[*target] -= g[0] / p;
                    }
                }
                Op::BinaryCrossEntropy { src, targets } => {
                    let pv = &nodes[*src].value;
                    let scale = g[0] / pv.len() as f64;
                    let gs = acc(grads, *src, pv.len());
                    for ((o, &p), &t) in gs.iter_mut().zip(pv).zip(targets) {
                        if t == 1.0 {
                            if p > LOG_EPS {
                                *o -= scale / p;
                            }
                        } else if 1.0 - p > LOG_EPS {
                            *o += scale / (1.0 - p);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Max-subtracted softmax over `x`, zero wherever `mask` is false.
pub fn softmax_values(x: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::DegenerateInput("softmax of an empty vector".into()));
    }
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::dim("softmax", &[x.len()], &[m.len()]));
        }
    }
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..x.len())
        .filter(|&i| live(i))
        .map(|i| x[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateMask("every softmax entry is masked".into()));
    }
    let mut out: Vec<f64> = (0..x.len())
        .map(|i| if live(i) { (x[i] - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_hand_cases() {
        let mut t = Tape::new();
        let i = t.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = t.constant(&[2, 1], vec![3.0, 4.0]).unwrap();
        let out = t.matmul(i, v).unwrap();
        assert_eq!(t.value(out), &[3.0, 4.0]);

        let r = t.constant(&[1, 2], vec![1.0, 2.0]).unwrap();
        let out = t.matmul(r, v).unwrap();
        assert_eq!(t.value(out), &[11.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let mut t = Tape::new();
        let a = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        match t.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn elementwise_fixed_points() {
        let mut t = Tape::new();
        let z = t.constant(&[1], vec![0.0]).unwrap();
        let th = t.tanh(z);
        let sg = t.sigmoid(z);
        assert_eq!(t.value(th), &[0.0]);
        assert_eq!(t.value(sg), &[0.5]);
        let a = t.constant(&[2], vec![1.0, 2.0]).unwrap();
        let b = t.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(t.add(a, b).is_err());
        assert!(t.mul(a, b).is_err());
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax_values(&[5.0], None).unwrap(), vec![1.0]);
        for c in [-3.0, 0.0, 7.5] {
            let s = softmax_values(&[c, c, c], None).unwrap();
            for v in s {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let s = softmax_values(&[1.0, 2.0, 1.0], Some(&[true, false, true])).unwrap();
        assert_eq!(s, vec![0.5, 0.0, 0.5]);
        assert!(matches!(
            softmax_values(&[1.0, 2.0], Some(&[false, false])),
            Err(Error::DegenerateMask(_))
        ));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = t.constant(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(t.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert!(t.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = Tape::new();
        let x = t.constant(&[100_000], vec![1.0; 100_000]).unwrap();
        let y = t.dropout(x, 0.5, true, &mut rng).unwrap();
        let mean = t.value(y).iter().sum::<f64>() / 1e5;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(t.value(y).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let p = t.constant(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let l = t.cross_entropy(p, 0).unwrap();
        assert!(t.scalar(l).abs() < 1e-15);
        assert!(matches!(t.cross_entropy(p, 3), Err(Error::Label(_))));

        let q = t.constant(&[1], vec![0.5]).unwrap();
        let l = t.binary_cross_entropy(q, &[1.0]).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(t.binary_cross_entropy(q, &[0.5]).is_err());
    }

    #[test]
    fn backward_identity_and_scale() {
        let mut t = Tape::new();
        let x = t.variable(&[], vec![3.0]).unwrap();
        t.backward(x).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0]);

        let mut t = Tape::new();
        let x = t.variable(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let y = t.scale(x, 2.0);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut t = Tape::new();
        let x = t.variable(&[2], vec![1.0, 2.0]).unwrap();
        let s = t.sum(x);
        t.backward(s).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);
        t.zero_grads();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.variable(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }
}
