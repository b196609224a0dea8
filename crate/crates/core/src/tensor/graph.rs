//! Reverse-mode differentiation over dense f64 matrices.
//!
//! The graph is a define-by-run tape rebuilt for every training step. Nodes
//! store their forward data eagerly, so intermediate values can be read out
//! while the graph is still being built. `backward` replays the tape in
//! reverse and accumulates gradients into every node that requires them.
//!
//! Everything is `[rows, cols]` shaped; batches live in the rows, features in
//! the columns, and scalars are `[1, 1]`.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::tensor::param::ParamStore;

/// Handle to a node in a [`Graph`]. Cheap to copy; only valid for the graph
/// that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value {
    pub(crate) id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Value {
    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    /// `a [B, m] + bias [1, m]`, broadcast over rows.
    AddBias(usize, usize),
    Silu(usize),
    Sqrt(usize),
    /// Row gather from an embedding table.
    Embed { table: usize, idx: Vec<usize> },
    ConcatCols(Vec<usize>),
    /// `[B, m] -> [B, 1]` sum over columns.
    RowSum(usize),
    /// Scale row `i` by the constant `factors[i]`.
    RowScale(usize, Vec<f64>),
    SumAll(usize),
    MeanAll(usize),
    StopGrad(#[allow(dead_code)] usize),
}

struct Node {
    op: Op,
    data: Array2<f64>,
    grad: Option<Array2<f64>>,
    needs_grad: bool,
}

/// Define-by-run tape. One per loss evaluation.
pub struct Graph {
    nodes: Vec<Node>,
    poison: Option<String>,
}

fn finite(a: &Array2<f64>) -> bool {
    // A single non-finite entry makes the sum non-finite; values in this
    // crate are far too small to overflow a finite sum.
    a.sum().is_finite()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), poison: None }
    }

    fn push(&mut self, op: Op, data: Array2<f64>, needs_grad: bool) -> Value {
        if self.poison.is_none() && !finite(&data) {
            self.poison = Some(format!("{op:?}"));
        }
        let (rows, cols) = data.dim();
        let id = self.nodes.len();
        self.nodes.push(Node { op, data, grad: None, needs_grad });
        Value { id, rows, cols }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// First operation that produced a non-finite value, if any.
    pub fn poison(&self) -> Option<&str> {
        self.poison.as_deref()
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match &self.poison {
            Some(op) => Err(Error::NonFinite { context: format!("{context} ({op})") }),
            None => Ok(()),
        }
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant(&mut self, data: Array2<f64>) -> Value {
        self.push(Op::Leaf, data, false)
    }

    pub fn scalar(&mut self, v: f64) -> Value {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Differentiable leaf (an input we may want `d/dx` for).
    pub fn input(&mut self, data: Array2<f64>) -> Value {
        self.push(Op::Leaf, data, true)
    }

    /// Register every parameter of `store` as a differentiable leaf.
    pub fn register_params(&mut self, store: &ParamStore) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        for (name, arr) in store.iter() {
            let v = self.push(Op::Leaf, arr.clone(), true);
            out.insert(name.to_string(), v);
        }
        out
    }

    /// Forward data of a node. Available as soon as the node exists.
    pub fn data(&self, v: Value) -> &Array2<f64> {
        &self.nodes[v.id].data
    }

    /// Gradient accumulated by the last `backward` call, if any.
    pub fn grad(&self, v: Value) -> Option<&Array2<f64>> {
        self.nodes[v.id].grad.as_ref()
    }

    pub fn add(&mut self, a: Value, b: Value) -> Value {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "add: shape mismatch");
        let data = &self.nodes[a.id].data + &self.nodes[b.id].data;
        self.push(Op::Add(a.id, b.id), data, self.needs(a.id) || self.needs(b.id))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Value {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "sub: shape mismatch");
        let data = &self.nodes[a.id].data - &self.nodes[b.id].data;
        self.push(Op::Sub(a.id, b.id), data, self.needs(a.id) || self.needs(b.id))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "mul: shape mismatch");
        let data = &self.nodes[a.id].data * &self.nodes[b.id].data;
        self.push(Op::Mul(a.id, b.id), data, self.needs(a.id) || self.needs(b.id))
    }

    pub fn div(&mut self, a: Value, b: Value) -> Value {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "div: shape mismatch");
        let data = &self.nodes[a.id].data / &self.nodes[b.id].data;
        self.push(Op::Div(a.id, b.id), data, self.needs(a.id) || self.needs(b.id))
    }

    pub fn neg(&mut self, a: Value) -> Value {
        let data = self.nodes[a.id].data.mapv(|x| -x);
        self.push(Op::Neg(a.id), data, self.needs(a.id))
    }

    pub fn scale(&mut self, a: Value, k: f64) -> Value {
        let data = self.nodes[a.id].data.mapv(|x| k * x);
        self.push(Op::Scale(a.id, k), data, self.needs(a.id))
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Value {
        assert_eq!(a.cols, b.rows, "matmul: inner dimension mismatch");
        let data = self.nodes[a.id].data.dot(&self.nodes[b.id].data);
        self.push(Op::MatMul(a.id, b.id), data, self.needs(a.id) || self.needs(b.id))
    }

    pub fn add_bias(&mut self, a: Value, bias: Value) -> Value {
        assert_eq!(bias.rows, 1, "add_bias: bias must be a row vector");
        assert_eq!(a.cols, bias.cols, "add_bias: width mismatch");
        let data = &self.nodes[a.id].data + &self.nodes[bias.id].data;
        self.push(Op::AddBias(a.id, bias.id), data, self.needs(a.id) || self.needs(bias.id))
    }

    pub fn silu(&mut self, a: Value) -> Value {
        let data = self.nodes[a.id].data.mapv(|x| x / (1.0 + (-x).exp()));
        self.push(Op::Silu(a.id), data, self.needs(a.id))
    }

    pub fn sqrt(&mut self, a: Value) -> Value {
        let data = self.nodes[a.id].data.mapv(f64::sqrt);
        self.push(Op::Sqrt(a.id), data, self.needs(a.id))
    }

    /// Gather rows `idx` from `table`.
    pub fn embed(&mut self, table: Value, idx: &[usize]) -> Value {
        let tab = &self.nodes[table.id].data;
        let mut data = Array2::zeros((idx.len(), table.cols));
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < table.rows, "embed: index {r} out of range");
            data.row_mut(i).assign(&tab.row(r));
        }
        self.push(Op::Embed { table: table.id, idx: idx.to_vec() }, data, self.needs(table.id))
    }

    pub fn concat_cols(&mut self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Array2::zeros((rows, cols));
        let mut off = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "concat_cols: row mismatch");
            data.slice_mut(ndarray::s![.., off..off + p.cols])
                .assign(&self.nodes[p.id].data);
            off += p.cols;
        }
        let needs = parts.iter().any(|p| self.needs(p.id));
        self.push(Op::ConcatCols(parts.iter().map(|p| p.id).collect()), data, needs)
    }

    pub fn row_sum(&mut self, a: Value) -> Value {
        let data = self.nodes[a.id]
            .data
            .sum_axis(Axis(1))
            .insert_axis(Axis(1));
        self.push(Op::RowSum(a.id), data, self.needs(a.id))
    }

    pub fn row_scale(&mut self, a: Value, factors: &[f64]) -> Value {
        assert_eq!(factors.len(), a.rows, "row_scale: factor count mismatch");
        let mut data = self.nodes[a.id].data.clone();
        for (i, &f) in factors.iter().enumerate() {
            data.row_mut(i).mapv_inplace(|x| x * f);
        }
        self.push(Op::RowScale(a.id, factors.to_vec()), data, self.needs(a.id))
    }

    pub fn sum_all(&mut self, a: Value) -> Value {
        let data = Array2::from_elem((1, 1), self.nodes[a.id].data.sum());
        self.push(Op::SumAll(a.id), data, self.needs(a.id))
    }

    pub fn mean_all(&mut self, a: Value) -> Value {
        let n = (a.rows * a.cols) as f64;
        let data = Array2::from_elem((1, 1), self.nodes[a.id].data.sum() / n);
        self.push(Op::MeanAll(a.id), data, self.needs(a.id))
    }

    /// Forward identity, backward zero.
    pub fn stop_grad(&mut self, a: Value) -> Value {
        let data = self.nodes[a.id].data.clone();
        self.push(Op::StopGrad(a.id), data, false)
    }

    /// Convenience: mean over rows of the squared row-norm of `a`, with an
    /// optional per-row weight. This is the shape every loss in the crate
    /// reduces to.
    pub fn weighted_mean_sq_norm(&mut self, a: Value, weights: Option<&[f64]>) -> Value {
        let sq = self.mul(a, a);
        let per_row = self.row_sum(sq);
        let weighted = match weights {
            Some(w) => self.row_scale(per_row, w),
            None => per_row,
        };
        self.mean_all(weighted)
    }

    fn grad_mut(&mut self, id: usize) -> &mut Array2<f64> {
        if self.nodes[id].grad.is_none() {
            let dim = self.nodes[id].data.dim();
            self.nodes[id].grad = Some(Array2::zeros(dim));
        }
        self.nodes[id].grad.as_mut().unwrap()
    }

    fn accumulate(&mut self, id: usize, g: &Array2<f64>) {
        if self.nodes[id].needs_grad {
            *self.grad_mut(id) += g;
        }
    }

    /// Reverse pass from a scalar loss. Returns gradients for the registered
    /// parameter values in `params`; gradients of other differentiable leaves
    /// stay readable through [`Graph::grad`].
    pub fn backward(
        &mut self,
        loss: Value,
        params: &BTreeMap<String, Value>,
    ) -> Result<BTreeMap<String, Array2<f64>>> {
        if !loss.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got [{}, {}]",
                loss.rows, loss.cols
            )));
        }
        self.ensure_finite("forward pass")?;
        for node in &mut self.nodes {
            node.grad = None;
        }
        *self.grad_mut(loss.id) = Array2::ones((1, 1));

        for id in (0..=loss.id).rev() {
            if !self.nodes[id].needs_grad || self.nodes[id].grad.is_none() {
                continue;
            }
            let g = self.nodes[id].grad.clone().unwrap();
            match &self.nodes[id].op {
                Op::Leaf | Op::StopGrad(_) => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &g);
                    let neg = g.mapv(|x| -x);
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = &g * &self.nodes[b].data;
                    let gb = &g * &self.nodes[a].data;
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let bd = &self.nodes[b].data;
                    let ga = &g / bd;
                    let gb = -&(&g * &self.nodes[id].data / bd);
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::Neg(a) => {
                    let a = *a;
                    let ga = g.mapv(|x| -x);
                    self.accumulate(a, &ga);
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    let ga = g.mapv(|x| k * x);
                    self.accumulate(a, &ga);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.dot(&self.nodes[b].data.t());
                    let gb = self.nodes[a].data.t().dot(&g);
                    self.accumulate(a, &ga);
                    self.accumulate(b, &gb);
                }
                Op::AddBias(a, bias) => {
                    let (a, bias) = (*a, *bias);
                    self.accumulate(a, &g);
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(bias, &gb);
                }
                Op::Silu(a) => {
                    let a = *a;
                    let ga = &g
                        * &self.nodes[a].data.mapv(|x| {
                            let s = 1.0 / (1.0 + (-x).exp());
                            s * (1.0 + x * (1.0 - s))
                        });
                    self.accumulate(a, &ga);
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let ga = &g * &self.nodes[id].data.mapv(|y| 0.5 / y);
                    self.accumulate(a, &ga);
                }
                Op::Embed { table, idx } => {
                    let table = *table;
                    let idx = idx.clone();
                    if self.nodes[table].needs_grad {
                        let dim = self.nodes[table].data.dim();
                        if self.nodes[table].grad.is_none() {
                            self.nodes[table].grad = Some(Array2::zeros(dim));
                        }
                        let gt = self.nodes[table].grad.as_mut().unwrap();
                        for (i, &r) in idx.iter().enumerate() {
                            let mut row = gt.row_mut(r);
                            row += &g.row(i);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p].data.ncols();
                        let gp = g.slice(ndarray::s![.., off..off + w]).to_owned();
                        self.accumulate(p, &gp);
                        off += w;
                    }
                }
                Op::RowSum(a) => {
                    let a = *a;
                    let w = self.nodes[a].data.ncols();
                    let ga = g.broadcast((g.nrows(), w)).unwrap().to_owned();
                    self.accumulate(a, &ga);
                }
                Op::RowScale(a, factors) => {
                    let a = *a;
                    let factors = factors.clone();
                    let mut ga = g.clone();
                    for (i, &f) in factors.iter().enumerate() {
                        ga.row_mut(i).mapv_inplace(|x| x * f);
                    }
                    self.accumulate(a, &ga);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let dim = self.nodes[a].data.dim();
                    let ga = Array2::from_elem(dim, g[(0, 0)]);
                    self.accumulate(a, &ga);
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let dim = self.nodes[a].data.dim();
                    let n = (dim.0 * dim.1) as f64;
                    let ga = Array2::from_elem(dim, g[(0, 0)] / n);
                    self.accumulate(a, &ga);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, v) in params {
            let dim = self.nodes[v.id].data.dim();
            let g = self.nodes[v.id]
                .grad
                .clone()
                .unwrap_or_else(|| Array2::zeros(dim));
            if !finite(&g) {
                return Err(Error::NonFinite { context: format!("gradient of `{name}`") });
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}
