//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; inputs always
//! precede outputs, so append order is a valid topological order and the
//! backward sweep is a single reverse pass. A graph may be back-propagated
//! once.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{
    check_same_shape, gelu_grad, gelu_value, matmul_values, require_rank, sign,
    transpose_values, Result, Tensor, TensorError,
};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[m×n] + b[n]`
    AddRow(Var, Var),
    /// `x[m×n] / c[m×1]`
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Gelu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    L1(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
///
/// Only nodes that require gradients ever hold an entry.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: Option<&'p ParamStore>,
    bound: HashMap<ParamId, Var>,
    backward_done: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: None,
            bound: HashMap::new(),
            backward_done: false,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf not backed by the parameter store.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a differentiable leaf. Repeated calls for
    /// the same id return the same node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let store = self.params.ok_or(TensorError::NoParamStore)?;
        let value = store.get(id).ok_or(TensorError::UnknownParam(id.0))?.clone();
        let v = self.variable(value);
        self.bound.insert(id, v);
        Ok(v)
    }

    /// Copies the value of `v` into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape(op_name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcast-adds a bias vector of length `n` to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        require_rank("add_row", xv, 2)?;
        if bv.numel() != xv.cols() || bv.rank() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % n])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    /// Divides every row `i` of an `m×n` matrix by `c[i]`, where `c` is `m×1`.
    pub fn div_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        require_rank("div_col", xv, 2)?;
        if cv.shape() != [xv.rows(), 1] {
            return Err(TensorError::ShapeMismatch {
                op: "div_col",
                lhs: xv.shape().to_vec(),
                rhs: cv.shape().to_vec(),
            });
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v / cv.data()[i / n])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(c);
        Ok(self.push(out, Op::DivCol(x, c), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_value);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Sums each row of an `m×n` matrix into an `m×1` column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        require_rank("row_sum", v, 2)?;
        let data = (0..v.rows()).map(|i| v.row(i).iter().sum()).collect();
        let out = Tensor::new(vec![v.rows(), 1], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowSum(a), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_values(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = transpose_values(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Concatenates tensors of equal rank along `axis`; all other
    /// dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat",
            shape: Vec::new(),
            reason: "no inputs".into(),
        })?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Takes `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if start > end || end > shape[axis] {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape,
                reason: format!("range {start}..{end} on axis {axis}"),
            });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&v.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let out = Tensor::new(out_shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice(a, axis, start), rg))
    }

    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape("l1_loss", av, bv)?;
        let n = av.numel().max(1) as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s / n), Op::L1(a, b), rg))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TensorError::AlreadyBackward);
        }
        let lv = self.value(loss);
        if lv.rank() != 0 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        self.backward_done = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
                let target = &nodes[v.0];
                if !target.requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; target.value.numel()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| s.iter_mut().zip(&g).for_each(|(x, gv)| *x -= gv));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &|s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * bv[k];
                        }
                    });
                    acc(*b, &|s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * av[k];
                        }
                    });
                }
                Op::AddRow(x, b) => {
                    let n = nodes[b.0].value.numel();
                    acc(*x, &|s| add_into(s, &g));
                    acc(*b, &|s| {
                        for (k, gv) in g.iter().enumerate() {
                            s[k % n] += gv;
                        }
                    });
                }
                Op::DivCol(x, c) => {
                    let xv = nodes[x.0].value.data();
                    let cv = nodes[c.0].value.data();
                    let n = nodes[x.0].value.cols();
                    acc(*x, &|s| {
                        for (k, gv) in g.iter().enumerate() {
                            s[k] += gv / cv[k / n];
                        }
                    });
                    acc(*c, &|s| {
                        for (k, gv) in g.iter().enumerate() {
                            let ci = cv[k / n];
                            s[k / n] -= gv * xv[k] / (ci * ci);
                        }
                    });
                }
                Op::Scale(a, f) => acc(*a, &|s| {
                    s.iter_mut().zip(&g).for_each(|(x, gv)| *x += f * gv)
                }),
                Op::AddScalar(a) => acc(*a, &|s| add_into(s, &g)),
                Op::Exp(a) => {
                    let out = node.value.data();
                    acc(*a, &|s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * out[k];
                        }
                    });
                }
                Op::Log(a) => {
                    let av = nodes[a.0].value.data();
                    acc(*a, &|s| {
                        for k in 0..s.len() {
                            s[k] += g[k] / av[k];
                        }
                    });
                }
                Op::Gelu(a) => {
                    let av = nodes[a.0].value.data();
                    acc(*a, &|s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * gelu_grad(av[k]);
                        }
                    });
                }
                Op::Abs(a) => {
                    let av = nodes[a.0].value.data();
                    acc(*a, &|s| {
                        for k in 0..s.len() {
                            s[k] += g[k] * sign(av[k]);
                        }
                    });
                }
                Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0])),
                Op::Mean(a) => {
                    let n = nodes[a.0].value.numel() as f64;
                    acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0] / n));
                }
                Op::RowSum(a) => {
                    let n = nodes[a.0].value.cols();
                    acc(*a, &|s| {
                        for (k, x) in s.iter_mut().enumerate() {
                            *x += g[k / n];
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    // dA = G·Bᵀ, dB = Aᵀ·G
                    acc(*a, &|s| {
                        let bd = bv.data();
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                s[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    acc(*b, &|s| {
                        let ad = av.data();
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let a_ip = ad[i * k + p];
                                if a_ip == 0.0 {
                                    continue;
                                }
                                let srow = &mut s[p * n..(p + 1) * n];
                                for (x, gv) in srow.iter_mut().zip(grow) {
                                    *x += a_ip * gv;
                                }
                            }
                        }
                    });
                }
                Op::Transpose(a) => {
                    let (m, n) = (node.value.rows(), node.value.cols());
                    acc(*a, &|s| {
                        for i in 0..m {
                            for j in 0..n {
                                s[j * m + i] += g[i * n + j];
                            }
                        }
                    });
                }
                Op::Reshape(a) => acc(*a, &|s| add_into(s, &g)),
                Op::Concat(parts, axis) => {
                    let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.shape()[*axis];
                        acc(p, &|s| {
                            for o in 0..outer {
                                let src = o * total * inner + offset * inner;
                                let dst = o * len * inner;
                                add_into(&mut s[dst..dst + len * inner], &g[src..src + len * inner]);
                            }
                        });
                        offset += len;
                    }
                }
                Op::Slice(a, axis, start) => {
                    let (outer, len, inner) = axis_split(nodes[a.0].value.shape(), *axis);
                    let width = node.value.shape()[*axis];
                    acc(*a, &|s| {
                        for o in 0..outer {
                            let dst = o * len * inner + start * inner;
                            let src = o * width * inner;
                            add_into(&mut s[dst..dst + width * inner], &g[src..src + width * inner]);
                        }
                    });
                }
                Op::L1(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    let scale = g[0] / av.len().max(1) as f64;
                    acc(*a, &|s| {
                        for k in 0..s.len() {
                            s[k] += scale * sign(av[k] - bv[k]);
                        }
                    });
                    acc(*b, &|s| {
                        for k in 0..s.len() {
                            s[k] -= scale * sign(av[k] - bv[k]);
                        }
                    });
                }
            }
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Gradients of every bound parameter, ordered by parameter id.
    /// Parameters bound but unreachable from the loss get zero gradients.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .bound
            .iter()
            .map(|(&id, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
