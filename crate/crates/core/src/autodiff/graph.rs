use std::cell::{Cell, RefCell};
use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// The differentiable operations exposed to model code.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    MulElementwise,
    Matmul,
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    RowL2Norm,
    SoftmaxRows,
    ConcatRows,
    Scale(f64),
}

// Structural ops (transpose, reshape, broadcast, slicing, division) are
// recorded too; backward passes are written in terms of them so that
// gradients stay differentiable.
#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Matmul,
    Transpose,
    Relu,
    Exp,
    Log,
    Sum,
    Mean,
    RowL2Norm,
    SoftmaxRows,
    ConcatRows,
    Scale(f64),
    Reshape,
    SumTo,
    BroadcastTo,
    SliceRows { start: usize, end: usize },
    RecipOrZero,
}

struct Node {
    op: Op,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Node ids are assigned in creation order, so inputs always precede the
/// nodes that consume them. A graph is meant to live for one training step.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                op: Op::Leaf,
                inputs: Vec::new(),
                value,
                requires_grad,
            });
            nodes.len() - 1
        };
        Var { graph: self, id }
    }

    /// A leaf that gradients flow into.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, op: Op, inputs: Vec<usize>, value: Tensor) -> Var<'_> {
        let requires_grad = self.recording.get() && {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        if !requires_grad {
            return self.constant(value);
        }
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                op,
                inputs,
                value,
                requires_grad,
            });
            nodes.len() - 1
        };
        Var { graph: self, id }
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Gradient of a scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the backward pass is itself recorded, so the
    /// returned gradients can be differentiated again. Without it they are
    /// detached constants. A `wrt` tensor that `output` does not depend on
    /// gets a zero gradient.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g>,
        wrt: &[Var<'g>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g>>> {
        self.check_same(output)?;
        for w in wrt {
            self.check_same(*w)?;
        }
        if output.numel() != 1 {
            return Err(Error::Contract(format!(
                "grad needs a scalar output, got shape {:?}",
                output.shape()
            )));
        }
        if !output.requires_grad() {
            return Err(Error::Contract(
                "grad output does not require grad (was it produced without create_graph?)".into(),
            ));
        }

        let n = output.id + 1;
        let mut depends = vec![false; n];
        for w in wrt {
            if w.id < n {
                depends[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..n {
                if !depends[id]
                    && nodes[id].requires_grad
                    && nodes[id].inputs.iter().any(|&i| depends[i])
                {
                    depends[id] = true;
                }
            }
        }

        let previous = self.recording.replace(create_graph);
        let result = self.backward(output, wrt, &depends);
        self.recording.set(previous);
        result
    }

    fn backward<'g>(
        &'g self,
        output: Var<'g>,
        wrt: &[Var<'g>],
        depends: &[bool],
    ) -> Result<Vec<Var<'g>>> {
        let mut grads: Vec<Option<Var<'g>>> = vec![None; output.id + 1];
        grads[output.id] = Some(self.constant(Tensor::ones(&output.shape())));

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id] else { continue };
            let inputs = self.nodes.borrow()[id].inputs.clone();
            if !inputs.iter().any(|&i| depends[i]) {
                continue;
            }
            let input_grads = self.vjp(id, g)?;
            for (inp, gi) in inputs.into_iter().zip(input_grads) {
                if !depends[inp] {
                    continue;
                }
                grads[inp] = Some(match grads[inp] {
                    Some(acc) => acc.add(gi)?,
                    None => gi,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.constant(Tensor::zeros(&w.shape())),
            })
            .collect())
    }

    /// Vector-Jacobian products of node `id` for every input, given the
    /// upstream gradient `g`.
    fn vjp<'g>(&'g self, id: usize, g: Var<'g>) -> Result<Vec<Var<'g>>> {
        let (op, inputs) = {
            let nodes = self.nodes.borrow();
            (nodes[id].op.clone(), nodes[id].inputs.clone())
        };
        let out = self.var(id);
        let x = |k: usize| self.var(inputs[k]);
        let shape = |k: usize| self.var(inputs[k]).shape();

        let grads = match op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![g.sum_to(&shape(0))?, g.sum_to(&shape(1))?],
            Op::Sub => vec![g.sum_to(&shape(0))?, g.neg().sum_to(&shape(1))?],
            Op::Mul => vec![
                g.mul(x(1))?.sum_to(&shape(0))?,
                g.mul(x(0))?.sum_to(&shape(1))?,
            ],
            Op::Div => vec![
                g.div(x(1))?.sum_to(&shape(0))?,
                g.mul(out)?.div(x(1))?.neg().sum_to(&shape(1))?,
            ],
            Op::Matmul => vec![g.matmul(x(1).transpose()?)?, x(0).transpose()?.matmul(g)?],
            Op::Transpose => vec![g.transpose()?],
            Op::Relu => {
                // Subgradient 0 at exactly 0.
                let mask = self
                    .value_of(inputs[0])
                    .map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                vec![g.mul(self.constant(mask))?]
            }
            Op::Exp => vec![g.mul(out)?],
            Op::Log => vec![g.div(x(0))?],
            Op::Sum => vec![g.broadcast_to(&shape(0))?],
            Op::Mean => {
                let n = x(0).numel() as f64;
                vec![g.broadcast_to(&shape(0))?.scale(1.0 / n)]
            }
            Op::RowL2Norm => {
                let rows = out.numel();
                let coef = g
                    .reshape(&[rows, 1])?
                    .mul(out.reshape(&[rows, 1])?.recip_or_zero())?;
                vec![x(0).mul(coef)?]
            }
            Op::SoftmaxRows => {
                let rows = out.shape()[0];
                let gs = g.mul(out)?;
                let row_sums = gs.sum_to(&[rows, 1])?;
                vec![gs.sub(out.mul(row_sums)?)?]
            }
            Op::ConcatRows => {
                let mut start = 0;
                let mut parts = Vec::with_capacity(inputs.len());
                for k in 0..inputs.len() {
                    let rows = shape(k)[0];
                    parts.push(g.slice_rows(start, start + rows)?);
                    start += rows;
                }
                parts
            }
            Op::Scale(c) => vec![g.scale(c)],
            Op::Reshape => vec![g.reshape(&shape(0))?],
            Op::SumTo => vec![g.broadcast_to(&shape(0))?],
            Op::BroadcastTo => vec![g.sum_to(&shape(0))?],
            Op::SliceRows { start, end } => {
                let in_shape = shape(0);
                let (rows, cols) = (in_shape[0], in_shape[1]);
                let mut parts = Vec::with_capacity(3);
                if start > 0 {
                    parts.push(self.constant(Tensor::zeros(&[start, cols])));
                }
                parts.push(g);
                if end < rows {
                    parts.push(self.constant(Tensor::zeros(&[rows - end, cols])));
                }
                vec![concat_rows(&parts)?]
            }
            Op::RecipOrZero => vec![g.mul(out.mul(out)?.neg())?],
        };
        Ok(grads)
    }

    fn check_same(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.graph) {
            Ok(())
        } else {
            Err(Error::Contract(
                "tensor belongs to a different graph".into(),
            ))
        }
    }
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let err = || Error::shape(op, a, b);
    let (ar, ac) = dims2(a).ok_or_else(err)?;
    let (br, bc) = dims2(b).ok_or_else(err)?;
    let pick = |x: usize, y: usize| match (x, y) {
        _ if x == y => Some(x),
        (1, _) => Some(y),
        (_, 1) => Some(x),
        _ => None,
    };
    let r = pick(ar, br).ok_or_else(err)?;
    let c = pick(ac, bc).ok_or_else(err)?;
    if a.len().max(b.len()) == 2 {
        Ok(vec![r, c])
    } else {
        Ok(vec![c])
    }
}

fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let (r, c) = dims2(&shape).expect("broadcast shape is rank 1 or 2");
    let (ar, ac) = a.dims2().expect("checked");
    let (br, bc) = b.dims2().expect("checked");
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i };
        let bi = if br == 1 { 0 } else { i };
        for j in 0..c {
            let aj = if ac == 1 { 0 } else { j };
            let bj = if bc == 1 { 0 } else { j };
            data.push(f(ad[ai * ac + aj], bd[bi * bc + bj]));
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
    };
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Stacks matrices with equal column counts on top of each other.
pub fn concat_rows<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_rows needs at least one input".into()))?;
    let graph = first.graph;
    let value = {
        let nodes = graph.nodes.borrow();
        let cols = match nodes[first.id].value.shape() {
            [_, c] => *c,
            s => return Err(Error::shape("concat_rows", s, &[])),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            graph.check_same(*p)?;
            let t = &nodes[p.id].value;
            match t.shape() {
                [r, c] if *c == cols => {
                    rows += r;
                    data.extend_from_slice(t.data());
                }
                s => return Err(Error::shape("concat_rows", &[0, cols], s)),
            }
        }
        Tensor::from_parts(vec![rows, cols], data)
    };
    Ok(graph.push(Op::ConcatRows, parts.iter().map(|p| p.id).collect(), value))
}

/// Dispatches one of the public op kinds over its inputs.
pub fn op_forward<'g>(kind: OpKind, inputs: &[Var<'g>]) -> Result<Var<'g>> {
    let arity = match kind {
        OpKind::Add | OpKind::Sub | OpKind::MulElementwise | OpKind::Matmul => Some(2),
        OpKind::ConcatRows => None,
        _ => Some(1),
    };
    if let Some(n) = arity {
        if inputs.len() != n {
            return Err(Error::Contract(format!(
                "{kind:?} takes {n} inputs, got {}",
                inputs.len()
            )));
        }
    }
    match kind {
        OpKind::Add => inputs[0].add(inputs[1]),
        OpKind::Sub => inputs[0].sub(inputs[1]),
        OpKind::MulElementwise => inputs[0].mul(inputs[1]),
        OpKind::Matmul => inputs[0].matmul(inputs[1]),
        OpKind::Relu => Ok(inputs[0].relu()),
        OpKind::Exp => Ok(inputs[0].exp()),
        OpKind::Log => inputs[0].log(),
        OpKind::Sum => Ok(inputs[0].sum()),
        OpKind::Mean => Ok(inputs[0].mean()),
        OpKind::RowL2Norm => inputs[0].row_l2_norm(),
        OpKind::SoftmaxRows => inputs[0].softmax_rows(),
        OpKind::ConcatRows => concat_rows(inputs),
        OpKind::Scale(c) => Ok(inputs[0].scale(c)),
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.graph.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_of(self.id).shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.value_of(self.id).numel()
    }

    /// First element; the value of a scalar.
    pub fn item(&self) -> f64 {
        self.graph.value_of(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Constant copy of this value, cut off from the graph.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant(self.value())
    }

    fn unary(&self, op: Op, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Var<'g>> {
        let value = f(&self.graph.value_of(self.id))?;
        Ok(self.graph.push(op, vec![self.id], value))
    }

    fn binary(
        &self,
        other: Var<'g>,
        op: Op,
        f: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'g>> {
        self.graph.check_same(other)?;
        let value = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        Ok(self.graph.push(op, vec![self.id, other.id], value))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Add, |a, b| {
            zip_broadcast("add", a, b, |x, y| x + y)
        })
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Sub, |a, b| {
            zip_broadcast("sub", a, b, |x, y| x - y)
        })
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Mul, |a, b| {
            zip_broadcast("mul", a, b, |x, y| x * y)
        })
    }

    pub fn div(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Div, |a, b| {
            zip_broadcast("div", a, b, |x, y| x / y)
        })
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Matmul, matmul_values)
    }

    pub fn transpose(&self) -> Result<Var<'g>> {
        self.unary(Op::Transpose, |t| {
            let (r, c) = match t.shape() {
                [r, c] => (*r, *c),
                s => return Err(Error::shape("transpose", s, &[])),
            };
            let d = t.data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            Ok(Tensor::from_parts(vec![c, r], out))
        })
    }

    pub fn relu(&self) -> Var<'g> {
        self.unary(Op::Relu, |t| Ok(t.map(|v| v.max(0.0))))
            .expect("relu is total")
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(Op::Exp, |t| Ok(t.map(f64::exp)))
            .expect("exp is total")
    }

    /// Natural log; every entry must be strictly positive. NaN passes
    /// through so that overflow upstream surfaces as a non-finite loss.
    pub fn log(&self) -> Result<Var<'g>> {
        self.unary(Op::Log, |t| {
            if let Some(bad) = t.data().iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            Ok(t.map(f64::ln))
        })
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&self) -> Var<'g> {
        self.unary(Op::Sum, |t| Ok(Tensor::scalar(t.data().iter().sum())))
            .expect("sum is total")
    }

    pub fn mean(&self) -> Var<'g> {
        self.unary(Op::Mean, |t| {
            Ok(Tensor::scalar(
                t.data().iter().sum::<f64>() / t.numel() as f64,
            ))
        })
        .expect("mean is total")
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(c), |t| Ok(t.map(|v| v * c)))
            .expect("scale is total")
    }

    pub fn neg(&self) -> Var<'g> {
        self.scale(-1.0)
    }

    /// Euclidean norm of every row: `[r, c] -> [r]`.
    pub fn row_l2_norm(&self) -> Result<Var<'g>> {
        self.unary(Op::RowL2Norm, |t| {
            let (r, _) = t
                .dims2()
                .ok_or_else(|| Error::shape("row_l2_norm", t.shape(), &[]))?;
            let norms = (0..r)
                .map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            Ok(Tensor::from_parts(vec![r], norms))
        })
    }

    /// Row-wise softmax of a `[r, c]` matrix.
    pub fn softmax_rows(&self) -> Result<Var<'g>> {
        self.unary(Op::SoftmaxRows, |t| {
            let (r, c) = match t.shape() {
                [r, c] => (*r, *c),
                s => return Err(Error::shape("softmax_rows", s, &[])),
            };
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = t.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                out.extend(exps.into_iter().map(|e| e / total));
            }
            Ok(Tensor::from_parts(vec![r, c], out))
        })
    }

    /// Row-wise log-softmax, composed from primitive ops.
    ///
    /// The row maximum is subtracted as a constant; the result is exact for
    /// any constant shift so gradients are unaffected.
    pub fn log_softmax_rows(&self) -> Result<Var<'g>> {
        let t = self.value();
        let r = match t.shape() {
            [r, _] => *r,
            s => return Err(Error::shape("log_softmax_rows", s, &[])),
        };
        let maxes: Vec<f64> = (0..r)
            .map(|i| t.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = self.graph.constant(Tensor::from_parts(vec![r, 1], maxes));
        let shifted = self.sub(shift)?;
        let lse = shifted.exp().sum_to(&[r, 1])?.log()?;
        shifted.sub(lse)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        if self.shape() == shape {
            return Ok(*self);
        }
        self.unary(Op::Reshape, |t| {
            if shape.iter().product::<usize>() != t.numel() {
                return Err(Error::shape("reshape", t.shape(), shape));
            }
            Ok(Tensor::from_parts(shape.to_vec(), t.data().to_vec()))
        })
    }

    /// Sums broadcast dimensions away so the result has `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Var<'g>> {
        if self.shape() == shape {
            return Ok(*self);
        }
        self.unary(Op::SumTo, |t| {
            let err = || Error::shape("sum_to", t.shape(), shape);
            let (r, c) = t.dims2().ok_or_else(err)?;
            let (tr, tc) = if shape.iter().product::<usize>() == 1 {
                (1, 1)
            } else {
                dims2(shape).ok_or_else(err)?
            };
            if (tr != r && tr != 1) || (tc != c && tc != 1) {
                return Err(err());
            }
            let mut out = vec![0.0; tr * tc];
            let d = t.data();
            for i in 0..r {
                let oi = if tr == 1 { 0 } else { i };
                for j in 0..c {
                    let oj = if tc == 1 { 0 } else { j };
                    out[oi * tc + oj] += d[i * c + j];
                }
            }
            Ok(Tensor::from_parts(shape.to_vec(), out))
        })
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'g>> {
        if self.shape() == shape {
            return Ok(*self);
        }
        self.unary(Op::BroadcastTo, |t| {
            let target = Tensor::zeros(shape);
            let out = zip_broadcast("broadcast_to", t, &target, |x, _| x)?;
            if out.shape() != shape {
                return Err(Error::shape("broadcast_to", t.shape(), shape));
            }
            Ok(out)
        })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'g>> {
        self.unary(Op::SliceRows { start, end }, |t| match t.shape() {
            [r, c] if start < end && end <= *r => Ok(Tensor::from_parts(
                vec![end - start, *c],
                t.data()[start * c..end * c].to_vec(),
            )),
            s => Err(Error::shape("slice_rows", s, &[start, end])),
        })
    }

    /// `1/x`, except that zero maps to zero. Used for the norm derivative,
    /// which is taken to be zero at the origin.
    pub(crate) fn recip_or_zero(&self) -> Var<'g> {
        self.unary(Op::RecipOrZero, |t| {
            Ok(t.map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }))
        })
        .expect("recip_or_zero is total")
    }
}
