//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive applied to its variables in execution
//! order, so node inputs always precede the node itself. [`Tape::backward`]
//! walks the recorded nodes once, in reverse, accumulating adjoints.
//!
//! ```
//! use mcgan_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
//! let y = tape.sq_norm(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::norm::Norm;
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Cos(Var),
    Scale(Var, f64),
    Sum(Var),
    MeanRows(Var),
    Dot(Var, Var),
    SqNorm(Var),
    Norm(Var, Norm),
    SoftmaxCe(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node that depends on a differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), g.clone()).ok()
    }

    /// Gradient for `v`, zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Result<Tensor> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()),
            None => Ok(Tensor::zeros(self.shapes[v.0].clone())),
        }
    }

    /// Gradients for several variables, zeros where independent.
    pub fn collect(&self, vars: &[Var]) -> Result<Vec<Tensor>> {
        vars.iter().map(|&v| self.get_or_zeros(v)).collect()
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

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[x.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        Ok(self.unary(x, out, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, out, Op::Sub(a, b)))
    }

    /// Broadcast-adds a length-`c` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.value(x).add_row(self.value(row))?;
        Ok(self.binary(x, row, out, Op::AddRow(x, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.binary(a, b, out, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 })?;
        Ok(self.unary(x, out, Op::Relu(x)))
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::cos)?;
        Ok(self.unary(x, out, Op::Cos(x)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s)?;
        Ok(self.unary(x, out, Op::Scale(x, s)))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum())?;
        Ok(self.unary(x, out, Op::Sum(x)))
    }

    /// Mean over the batch (row) axis of a matrix.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mean_rows()?;
        Ok(self.unary(x, out, Op::MeanRows(x)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).dot(self.value(b))?)?;
        Ok(self.binary(a, b, out, Op::Dot(a, b)))
    }

    pub fn sq_norm(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::scalar(t.dot(t)?)?;
        Ok(self.unary(x, out, Op::SqNorm(x)))
    }

    /// `ℓ_q` norm of the flattened input, see [`Norm::subgradient`] for the
    /// conventions used at kinks.
    pub fn norm(&mut self, x: Var, q: Norm) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).norm(q))?;
        Ok(self.unary(x, out, Op::Norm(x, q)))
    }

    /// Mean softmax cross-entropy of `batch × K` logits at the given labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (r, k) = z.require_matrix("softmax_cross_entropy")?;
        if labels.len() != r {
            return Err(Error::dim("softmax_cross_entropy", z.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::contract(format!("label {bad} out of range for {k} classes")));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            total += log_sum_exp(row) - row[y];
        }
        let out = Tensor::scalar(total / r as f64)?;
        Ok(self.unary(logits, out, Op::SoftmaxCe(logits, labels.to_vec())))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::contract(format!("backward needs a scalar output, got shape {:?}", out.shape())));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        // Only leaves and intermediate nodes that need gradients are reported.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if let Some(da) = self.slot(grads, a) {
                    // dA += dC · Bᵀ
                    gemm(m, n, k, g, n, false, bv.data(), n, true, da, 1.0);
                }
                if let Some(db) = self.slot(grads, b) {
                    // dB += Aᵀ · dC
                    gemm(k, m, n, av.data(), k, true, g, n, false, db, 1.0);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                if let Some(dx) = self.slot(grads, x) {
                    // g is c × r
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    axpy(da, 1.0, g);
                }
                if let Some(db) = self.slot(grads, b) {
                    axpy(db, 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    axpy(da, 1.0, g);
                }
                if let Some(db) = self.slot(grads, b) {
                    axpy(db, -1.0, g);
                }
            }
            Op::AddRow(x, row) => {
                if let Some(dx) = self.slot(grads, x) {
                    axpy(dx, 1.0, g);
                }
                let c = self.value(row).len();
                if let Some(dr) = self.slot(grads, row) {
                    for chunk in g.chunks_exact(c) {
                        axpy(dr, 1.0, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(self.value(b).data()) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.slot(grads, b) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(self.value(a).data()) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = self.slot(grads, x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(self.value(x).data()) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Cos(x) => {
                if let Some(dx) = self.slot(grads, x) {
                    for ((d, gi), xi) in dx.iter_mut().zip(g).zip(self.value(x).data()) {
                        *d -= gi * xi.sin();
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.slot(grads, x) {
                    axpy(dx, s, g);
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanRows(x) => {
                let r = self.value(x).shape()[0];
                let c = g.len();
                if let Some(dx) = self.slot(grads, x) {
                    let inv = 1.0 / r as f64;
                    for chunk in dx.chunks_exact_mut(c) {
                        axpy(chunk, inv, g);
                    }
                }
            }
            Op::Dot(a, b) => {
                if let Some(da) = self.slot(grads, a) {
                    axpy(da, g[0], self.value(b).data());
                }
                if let Some(db) = self.slot(grads, b) {
                    axpy(db, g[0], self.value(a).data());
                }
            }
            Op::SqNorm(x) => {
                if let Some(dx) = self.slot(grads, x) {
                    axpy(dx, 2.0 * g[0], self.value(x).data());
                }
            }
            Op::Norm(x, q) => {
                let xv = self.value(x).data();
                let mut sub = vec![0.0; xv.len()];
                q.subgradient(xv, &mut sub);
                if let Some(dx) = self.slot(grads, x) {
                    axpy(dx, g[0], &sub);
                }
            }
            Op::SoftmaxCe(z, ref labels) => {
                let zv = self.value(z);
                let k = zv.shape()[1];
                let r = labels.len();
                if let Some(dz) = self.slot(grads, z) {
                    let w = g[0] / r as f64;
                    for (i, &y) in labels.iter().enumerate() {
                        let row = zv.row(i);
                        let lse = log_sum_exp(row);
                        let drow = &mut dz[i * k..(i + 1) * k];
                        for (j, (d, zj)) in drow.iter_mut().zip(row).enumerate() {
                            let p = (zj - lse).exp();
                            let t = if j == y { 1.0 } else { 0.0 };
                            *d += w * (p - t);
                        }
                    }
                }
            }
        }
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `log Σ exp(z_j)` with max subtraction.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
