//! Define-by-run reverse-mode tape.
//!
//! Every op appends one node holding its output value and the handles of its
//! inputs. Inputs are always recorded before the op that consumes them, so the
//! node vector is already in topological order and the backward sweep is a
//! single reverse pass.
//!
//! Reset rule: `backward` recomputes gradients from scratch on each call (no
//! accumulation across calls). A tape is meant to live for one forward pass;
//! call [`Tape::clear`] or build a fresh one for the next batch.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Exp(Var),
    Clamp(Var, T, T),
    Relu(Var),
    L2NormalizeRows { x: Var, eps: T, norms: Vec<T> },
    LogSoftmaxRows(Var),
    ConcatCols(Var, Var),
    GatherRows { table: Var, ids: Vec<usize> },
    WeightedSum { x: Var, weights: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn matrix_dims<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::Dimension {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = matrix_dims(self.value(a), "transpose")?;
        let data = kernels::transpose(self.value(a).data(), r, c);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b)))
    }

    /// `x[i, :] + bias` for every row `i`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).numel() != cols {
            return Err(Error::Dimension {
                op: "add_row_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRowBias(x, bias)))
    }

    /// `x · W + b` with `W` stored `[in × out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_row_bias(xw, bias)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x);
        let data = value.data().iter().map(|&v| v * c).collect();
        let shape = value.shape().to_vec();
        let t = Tensor::new(shape, data).expect("shape preserved");
        self.push(t, Op::Scale(x, c))
    }

    /// Multiplies every entry of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let value = self.value(x);
        let data = value.data().iter().map(|&v| v * sv).collect();
        let shape = value.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::ScaleBy(x, s)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let data = value.data().iter().map(|&v| v.exp()).collect();
        let shape = value.shape().to_vec();
        let t = Tensor::new(shape, data).expect("shape preserved");
        self.push(t, Op::Exp(x))
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x);
        let data = value.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        let shape = value.shape().to_vec();
        let t = Tensor::new(shape, data).expect("shape preserved");
        self.push(t, Op::Clamp(x, lo, hi))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x);
        let data = value.data().iter().map(|&v| v.max(T::zero())).collect();
        let shape = value.shape().to_vec();
        let t = Tensor::new(shape, data).expect("shape preserved");
        self.push(t, Op::Relu(x))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: T) -> Var {
        let value = self.value(x);
        let cols = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        let mut data = Vec::with_capacity(value.numel());
        for row in value.data().chunks(cols) {
            let n = kernels::dot(row, row).sqrt().max(eps);
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        let shape = value.shape().to_vec();
        let t = Tensor::new(shape, data).expect("shape preserved");
        self.push(t, Op::L2NormalizeRows { x, eps, norms })
    }

    /// Max-subtracted log-softmax over each row.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x);
        if let Some(bad) = value.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "log_softmax_rows input contains {bad}"
            )));
        }
        let cols = value.cols();
        let mut data = Vec::with_capacity(value.numel());
        for row in value.data().chunks(cols) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            data.extend(row.iter().map(|&v| v - lse));
        }
        let shape = value.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::LogSoftmaxRows(x)))
    }

    /// `[a | b]` along columns; both must have the same row count.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = matrix_dims(self.value(a), "concat_cols")?;
        let (rb, cb) = matrix_dims(self.value(b), "concat_cols")?;
        if ra != rb {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        Ok(self.push(Tensor::new(vec![ra, ca + cb], data)?, Op::ConcatCols(a, b)))
    }

    /// Selects rows of a `[n × d]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(table), "gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::validation(
                    "row id",
                    format!("{id} out of range for table with {n} rows"),
                ));
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Scalar `Σ wₖ·xₖ` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                lhs: self.value(x).shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let s = kernels::dot(self.value(x).data(), &weights);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.weighted_sum(x, vec![T::one(); n])
            .expect("weights sized to input")
    }

    /// Populates `grad` on every node reachable from `loss` with `∂loss/∂node`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self
            .nodes
            .iter_mut()
            .zip(grads.into_iter().chain(std::iter::repeat_with(|| None)))
        {
            node.value.set_grad(g);
        }
        Ok(())
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Vec<T>>]) -> &'g mut Vec<T> {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                kernels::matmul_grad_lhs(g, bv.data(), self.slot(*a, grads), m, k, n);
                kernels::matmul_grad_rhs(av.data(), g, self.slot(*b, grads), m, k, n);
            }
            Op::Transpose(a) => {
                // out is c×r; its transpose maps the gradient back to r×c.
                let (c, r) = (out.shape()[0], out.shape()[1]);
                let back = kernels::transpose(g, c, r);
                for (d, v) in self.slot(*a, grads).iter_mut().zip(back) {
                    *d += v;
                }
            }
            Op::Add(a, b) => {
                for (d, &v) in self.slot(*a, grads).iter_mut().zip(g) {
                    *d += v;
                }
                for (d, &v) in self.slot(*b, grads).iter_mut().zip(g) {
                    *d += v;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                for ((d, &gi), &y) in self.slot(*a, grads).iter_mut().zip(g).zip(bv) {
                    *d += gi * y;
                }
                for ((d, &gi), &x) in self.slot(*b, grads).iter_mut().zip(g).zip(av) {
                    *d += gi * x;
                }
            }
            Op::AddRowBias(x, bias) => {
                for (d, &v) in self.slot(*x, grads).iter_mut().zip(g) {
                    *d += v;
                }
                let cols = out.cols();
                let db = self.slot(*bias, grads);
                for row in g.chunks(cols) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            Op::Scale(x, c) => {
                for (d, &v) in self.slot(*x, grads).iter_mut().zip(g) {
                    *d += v * *c;
                }
            }
            Op::ScaleBy(x, s) => {
                let sv = self.value(*s).data()[0];
                let xv = self.value(*x).data();
                for (d, &v) in self.slot(*x, grads).iter_mut().zip(g) {
                    *d += v * sv;
                }
                let ds = kernels::dot(g, xv);
                self.slot(*s, grads)[0] += ds;
            }
            Op::Exp(x) => {
                for ((d, &gi), &y) in self.slot(*x, grads).iter_mut().zip(g).zip(out.data()) {
                    *d += gi * y;
                }
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                for ((d, &gi), &v) in self.slot(*x, grads).iter_mut().zip(g).zip(xv) {
                    if v >= *lo && v <= *hi {
                        *d += gi;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                for ((d, &gi), &v) in self.slot(*x, grads).iter_mut().zip(g).zip(xv) {
                    if v > T::zero() {
                        *d += gi;
                    }
                }
            }
            Op::L2NormalizeRows { x, eps, norms } => {
                let cols = out.cols();
                let dx = self.slot(*x, grads);
                for (i, &n) in norms.iter().enumerate() {
                    let y = out.row(i);
                    let gy = &g[i * cols..(i + 1) * cols];
                    let dxr = &mut dx[i * cols..(i + 1) * cols];
                    if n > *eps {
                        // d(x/‖x‖) = (g − y·(y·g)) / ‖x‖
                        let proj = kernels::dot(y, gy);
                        for ((d, &gi), &yi) in dxr.iter_mut().zip(gy).zip(y) {
                            *d += (gi - yi * proj) / n;
                        }
                    } else {
                        for (d, &gi) in dxr.iter_mut().zip(gy) {
                            *d += gi / n;
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                let cols = out.cols();
                let dx = self.slot(*x, grads);
                for (i, (gy, y)) in g.chunks(cols).zip(out.data().chunks(cols)).enumerate() {
                    let gsum: T = gy.iter().copied().sum();
                    for ((d, &gi), &yi) in dx[i * cols..(i + 1) * cols].iter_mut().zip(gy).zip(y) {
                        *d += gi - yi.exp() * gsum;
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let w = ca + cb;
                {
                    let da = self.slot(*a, grads);
                    for (i, row) in g.chunks(w).enumerate() {
                        for (d, &v) in da[i * ca..(i + 1) * ca].iter_mut().zip(&row[..ca]) {
                            *d += v;
                        }
                    }
                }
                let db = self.slot(*b, grads);
                for (i, row) in g.chunks(w).enumerate() {
                    for (d, &v) in db[i * cb..(i + 1) * cb].iter_mut().zip(&row[ca..]) {
                        *d += v;
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let d = out.cols();
                let dt = self.slot(*table, grads);
                for (r, &id) in ids.iter().enumerate() {
                    kernels::axpy(
                        T::one(),
                        &g[r * d..(r + 1) * d],
                        &mut dt[id * d..(id + 1) * d],
                    );
                }
            }
            Op::WeightedSum { x, weights } => {
                let gs = g[0];
                for (d, &w) in self.slot(*x, grads).iter_mut().zip(weights) {
                    *d += gs * w;
                }
            }
        }
    }
}
