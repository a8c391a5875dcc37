use std::collections::BTreeMap;

use super::Tensor;
use crate::{linalg, Error, Result};

/// Handle to a value on a [`Tape`]. Cheap to copy; only valid for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

/// The primitive differentiable operations. Structural attributes (axis,
/// slice bounds, scalar factors) ride along in the variant payloads so a
/// recorded step is fully described by its kind plus its input handles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Add,
    Subtract,
    ElementwiseMultiply,
    Divide,
    MatMul,
    Transpose,
    Sigmoid,
    Relu,
    Exp,
    Log,
    SumOverAxis(usize),
    MeanOverAxis(usize),
    Slice { axis: usize, start: usize, len: usize },
    Concat(usize),
    ScalarMultiply(f64),
    L2Norm,
    CosineSimilarity,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::ElementwiseMultiply => "elementwise_multiply",
            OpKind::Divide => "divide",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::SumOverAxis(_) => "sum_over_axis",
            OpKind::MeanOverAxis(_) => "mean_over_axis",
            OpKind::Slice { .. } => "slice",
            OpKind::Concat(_) => "concat",
            OpKind::ScalarMultiply(_) => "scalar_multiply",
            OpKind::L2Norm => "l2_norm",
            OpKind::CosineSimilarity => "cosine_similarity",
        }
    }
}

/// How the right operand of a binary elementwise op lines up with the left.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Broadcast {
    /// Identical shapes.
    Same,
    /// Right operand is a 1-D vector matching the last axis of the left.
    LastAxis,
    /// Right operand is a scalar.
    Scalar,
}

enum Step {
    Op {
        op: OpKind,
        inputs: Vec<Var>,
        output: Var,
    },
    /// Shape change with identity data layout; gradient passes through.
    Reshape { input: Var, output: Var },
}

struct Entry {
    value: Tensor,
    requires_grad: bool,
    is_leaf: bool,
}

/// Gradients of a scalar loss with respect to the tape's leaf parameters,
/// keyed by the parameter's [`Var`]. Parameters the loss never touched map
/// to zero tensors of the parameter's shape.
pub struct Gradients {
    map: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.map.get(&v.0)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Flat record of a forward computation over dense `f64` tensors.
///
/// Values are appended as [`constant`](Tape::constant) or
/// [`parameter`](Tape::parameter) leaves and combined with
/// [`apply`](Tape::apply) (or the named convenience methods). A step is
/// recorded whenever any input requires gradients; [`backward`](Tape::backward)
/// replays the steps in reverse and accumulates gradients for every
/// parameter leaf. The tape is single-use: `backward` consumes it.
pub struct Tape {
    entries: Vec<Entry>,
    steps: Vec<Step>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            steps: Vec::new(),
            consumed: false,
        }
    }

    fn push_entry(&mut self, value: Tensor, requires_grad: bool, is_leaf: bool) -> Var {
        self.entries.push(Entry {
            value,
            requires_grad,
            is_leaf,
        });
        Var(self.entries.len() - 1)
    }

    fn insert_leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push_entry(value, requires_grad, true))
    }

    /// Inserts a value that gradients never flow into.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.insert_leaf(value, false)
    }

    /// Inserts a trainable value; `backward` will report its gradient.
    pub fn parameter(&mut self, value: Tensor) -> Result<Var> {
        self.insert_leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.entries[v.0].requires_grad
    }

    /// Number of values recorded so far. Useful for checking that two runs
    /// of the same computation produced identical tapes.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies one primitive operation, validating shapes and domains,
    /// and records it for the backward pass when any input is
    /// gradient-bearing.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        let value = self.forward(op, inputs)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires = inputs.iter().any(|v| self.entries[v.0].requires_grad);
        let out = self.push_entry(value, requires, false);
        if requires && !self.consumed {
            self.steps.push(Step::Op {
                op,
                inputs: inputs.to_vec(),
                output: out,
            });
        }
        Ok(out)
    }

    /// Reinterprets a value under a new shape with the same element count.
    /// Data layout is row-major and unchanged, so this is not a primitive
    /// operation; the gradient passes through untouched.
    pub fn reshape(&mut self, v: Var, shape: Vec<usize>) -> Result<Var> {
        let value = &self.entries[v.0].value;
        if shape.iter().product::<usize>() != value.len() || shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: value.shape().to_vec(),
                rhs: shape,
            });
        }
        let new_value = Tensor::new(shape, value.data().to_vec())?;
        let requires = self.entries[v.0].requires_grad;
        let out = self.push_entry(new_value, requires, false);
        if requires && !self.consumed {
            self.steps.push(Step::Reshape { input: v, output: out });
        }
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::ElementwiseMultiply, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Divide, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::SumOverAxis(axis), &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::MeanOverAxis(axis), &[a])
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { axis, start, len }, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpKind::Concat(axis), parts)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::ScalarMultiply(factor), &[a])
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::L2Norm, &[a])
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::CosineSimilarity, &[a, b])
    }

    /// Sum of all elements, reduced to a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let mut v = a;
        while !self.value(v).is_scalar() {
            v = self.sum_axis(v, 0)?;
        }
        if self.value(v).rank() > 1 {
            v = self.reshape(v, vec![1])?;
        }
        Ok(v)
    }

    /// Mean of all elements, reduced to a scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    fn arity(&self, op: OpKind, inputs: &[Var], expected: usize) -> Result<()> {
        if inputs.len() == expected {
            Ok(())
        } else {
            Err(Error::Domain {
                op: op.name(),
                msg: format!("expected {} inputs, got {}", expected, inputs.len()),
            })
        }
    }

    fn forward(&self, op: OpKind, inputs: &[Var]) -> Result<Tensor> {
        match op {
            OpKind::Add | OpKind::Subtract | OpKind::ElementwiseMultiply | OpKind::Divide => {
                self.arity(op, inputs, 2)?;
                self.forward_binary(op, inputs[0], inputs[1])
            }
            OpKind::MatMul => {
                self.arity(op, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                Tensor::new(vec![m, n], linalg::matmul(a.data(), b.data(), m, k, n))
            }
            OpKind::Transpose => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                if a.rank() != 2 {
                    return Err(Error::Domain {
                        op: "transpose",
                        msg: format!("expected a 2-D tensor, got shape {:?}", a.shape()),
                    });
                }
                let (m, n) = (a.shape()[0], a.shape()[1]);
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = a.data()[i * n + j];
                    }
                }
                Tensor::new(vec![n, m], out)
            }
            OpKind::Sigmoid => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                let out = a.data().iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect();
                Tensor::new(a.shape().to_vec(), out)
            }
            OpKind::Relu => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                let out = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
                Tensor::new(a.shape().to_vec(), out)
            }
            OpKind::Exp => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| x.exp()).collect())
            }
            OpKind::Log => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                if a.data().iter().any(|&x| x <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        msg: "input has non-positive entries".into(),
                    });
                }
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| x.ln()).collect())
            }
            OpKind::SumOverAxis(axis) | OpKind::MeanOverAxis(axis) => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                let (outer, axis_len, inner) = reduce_dims(a.shape(), axis, op.name())?;
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..axis_len {
                        let base = (o * axis_len + l) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += a.data()[base + i];
                        }
                    }
                }
                if matches!(op, OpKind::MeanOverAxis(_)) {
                    for v in &mut out {
                        *v /= axis_len as f64;
                    }
                }
                Tensor::new(reduced_shape(a.shape(), axis), out)
            }
            OpKind::Slice { axis, start, len } => {
                self.arity(op, inputs, 1)?;
                let a = self.value(inputs[0]);
                if axis >= a.rank() || len == 0 || start + len > a.shape()[axis] {
                    return Err(Error::Domain {
                        op: "slice",
                        msg: format!(
                            "range {}..{} on axis {} is out of bounds for shape {:?}",
                            start,
                            start + len,
                            axis,
                            a.shape()
                        ),
                    });
                }
                let (outer, axis_len, inner) = reduce_dims(a.shape(), axis, "slice")?;
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * axis_len + start) * inner;
                    out.extend_from_slice(&a.data()[base..base + len * inner]);
                }
                let mut shape = a.shape().to_vec();
                shape[axis] = len;
                Tensor::new(shape, out)
            }
            OpKind::Concat(axis) => {
                if inputs.is_empty() {
                    return Err(Error::Domain {
                        op: "concat",
                        msg: "needs at least one input".into(),
                    });
                }
                let first = self.value(inputs[0]).shape().to_vec();
                if axis >= first.len() {
                    return Err(Error::Domain {
                        op: "concat",
                        msg: format!("axis {} out of bounds for rank {}", axis, first.len()),
                    });
                }
                let mut total_axis = 0;
                for &v in inputs {
                    let s = self.value(v).shape();
                    let compatible = s.len() == first.len()
                        && s.iter()
                            .zip(&first)
                            .enumerate()
                            .all(|(d, (a, b))| d == axis || a == b);
                    if !compatible {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            lhs: first,
                            rhs: s.to_vec(),
                        });
                    }
                    total_axis += s[axis];
                }
                let mut shape = first.clone();
                shape[axis] = total_axis;
                let (outer, _, inner) = reduce_dims(&shape, axis, "concat")?;
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for &v in inputs {
                        let t = self.value(v);
                        let part_axis = t.shape()[axis];
                        let base = o * part_axis * inner;
                        out.extend_from_slice(&t.data()[base..base + part_axis * inner]);
                    }
                }
                Tensor::new(shape, out)
            }
            OpKind::ScalarMultiply(c) => {
                self.arity(op, inputs, 1)?;
                if !c.is_finite() {
                    return Err(Error::Domain {
                        op: "scalar_multiply",
                        msg: format!("factor {} is not finite", c),
                    });
                }
                let a = self.value(inputs[0]);
                Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| c * x).collect())
            }
            OpKind::L2Norm => {
                self.arity(op, inputs, 1)?;
                Ok(Tensor::scalar(linalg::l2_norm(self.value(inputs[0]).data())))
            }
            OpKind::CosineSimilarity => {
                self.arity(op, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.len() != b.len() {
                    return Err(Error::ShapeMismatch {
                        op: "cosine_similarity",
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                Ok(Tensor::scalar(linalg::cosine(a.data(), b.data())))
            }
        }
    }

    fn forward_binary(&self, op: OpKind, a: Var, b: Var) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let bcast = broadcast_kind(ta.shape(), tb.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: op.name(),
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })?;
        if matches!(op, OpKind::Divide) && tb.data().iter().any(|&x| x == 0.0) {
            return Err(Error::Domain {
                op: "divide",
                msg: "divisor has zero entries".into(),
            });
        }
        let f = |x: f64, y: f64| match op {
            OpKind::Add => x + y,
            OpKind::Subtract => x - y,
            OpKind::ElementwiseMultiply => x * y,
            OpKind::Divide => x / y,
            _ => unreachable!(),
        };
        let out = map_broadcast(ta.data(), tb.data(), bcast, f);
        Tensor::new(ta.shape().to_vec(), out)
    }

    /// Runs reverse-mode accumulation from a scalar `loss` and consumes the
    /// tape. Every `parameter` leaf gets an entry in the result; leaves the
    /// loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_val = &self.entries[loss.0].value;
        if !loss_val.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss_val.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.entries.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..self.steps.len()).rev() {
            let output = match &self.steps[idx] {
                Step::Op { output, .. } | Step::Reshape { output, .. } => *output,
            };
            let dout = match grads[output.0].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.steps[idx] {
                Step::Reshape { input, .. } => {
                    let input = *input;
                    accumulate(&mut grads, input, &dout);
                }
                Step::Op { op, inputs, output } => {
                    let (op, inputs, output) = (*op, inputs.clone(), *output);
                    self.backward_step(op, &inputs, output, &dout, &mut grads);
                }
            }
        }

        let mut map = BTreeMap::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.is_leaf && entry.requires_grad {
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; entry.value.len()]);
                map.insert(i, Tensor::new(entry.value.shape().to_vec(), data)?);
            }
        }
        Ok(Gradients { map })
    }

    fn backward_step(
        &self,
        op: OpKind,
        inputs: &[Var],
        output: Var,
        dout: &[f64],
        grads: &mut Vec<Option<Vec<f64>>>,
    ) {
        match op {
            OpKind::Add | OpKind::Subtract => {
                let (a, b) = (inputs[0], inputs[1]);
                let bcast = broadcast_kind(self.value(a).shape(), self.value(b).shape()).unwrap();
                if self.requires_grad_of(a) {
                    accumulate(grads, a, dout);
                }
                if self.requires_grad_of(b) {
                    let mut db = reduce_broadcast(dout, self.value(b).len(), bcast);
                    if matches!(op, OpKind::Subtract) {
                        for v in &mut db {
                            *v = -*v;
                        }
                    }
                    accumulate(grads, b, &db);
                }
            }
            OpKind::ElementwiseMultiply => {
                let (a, b) = (inputs[0], inputs[1]);
                let (ta, tb) = (self.value(a), self.value(b));
                let bcast = broadcast_kind(ta.shape(), tb.shape()).unwrap();
                if self.requires_grad_of(a) {
                    let da = map_broadcast(dout, tb.data(), bcast, |g, y| g * y);
                    accumulate(grads, a, &da);
                }
                if self.requires_grad_of(b) {
                    let prod: Vec<f64> = dout.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    let db = reduce_broadcast(&prod, tb.len(), bcast);
                    accumulate(grads, b, &db);
                }
            }
            OpKind::Divide => {
                let (a, b) = (inputs[0], inputs[1]);
                let (ta, tb) = (self.value(a), self.value(b));
                let bcast = broadcast_kind(ta.shape(), tb.shape()).unwrap();
                if self.requires_grad_of(a) {
                    let da = map_broadcast(dout, tb.data(), bcast, |g, y| g / y);
                    accumulate(grads, a, &da);
                }
                if self.requires_grad_of(b) {
                    let quotient = map_broadcast(ta.data(), tb.data(), bcast, |x, y| x / (y * y));
                    let prod: Vec<f64> = dout
                        .iter()
                        .zip(&quotient)
                        .map(|(g, q)| -g * q)
                        .collect();
                    let db = reduce_broadcast(&prod, tb.len(), bcast);
                    accumulate(grads, b, &db);
                }
            }
            OpKind::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.requires_grad_of(a) {
                    let da = linalg::matmul_nt(dout, tb.data(), m, n, k);
                    accumulate(grads, a, &da);
                }
                if self.requires_grad_of(b) {
                    let db = linalg::matmul_tn(ta.data(), dout, m, k, n);
                    accumulate(grads, b, &db);
                }
            }
            OpKind::Transpose => {
                let a = inputs[0];
                let (m, n) = {
                    let s = self.value(a).shape();
                    (s[0], s[1])
                };
                let mut da = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        da[i * n + j] = dout[j * m + i];
                    }
                }
                accumulate(grads, a, &da);
            }
            OpKind::Sigmoid => {
                let y = self.value(output).data();
                let da: Vec<f64> = dout
                    .iter()
                    .zip(y)
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                accumulate(grads, inputs[0], &da);
            }
            OpKind::Relu => {
                let x = self.value(inputs[0]).data();
                let da: Vec<f64> = dout
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, inputs[0], &da);
            }
            OpKind::Exp => {
                let y = self.value(output).data();
                let da: Vec<f64> = dout.iter().zip(y).map(|(g, &y)| g * y).collect();
                accumulate(grads, inputs[0], &da);
            }
            OpKind::Log => {
                let x = self.value(inputs[0]).data();
                let da: Vec<f64> = dout.iter().zip(x).map(|(g, &x)| g / x).collect();
                accumulate(grads, inputs[0], &da);
            }
            OpKind::SumOverAxis(axis) | OpKind::MeanOverAxis(axis) => {
                let a = inputs[0];
                let shape = self.value(a).shape();
                let (outer, axis_len, inner) = reduce_dims(shape, axis, op.name()).unwrap();
                let scalefac = if matches!(op, OpKind::MeanOverAxis(_)) {
                    1.0 / axis_len as f64
                } else {
                    1.0
                };
                let mut da = vec![0.0; self.value(a).len()];
                for o in 0..outer {
                    for l in 0..axis_len {
                        let base = (o * axis_len + l) * inner;
                        for i in 0..inner {
                            da[base + i] = dout[o * inner + i] * scalefac;
                        }
                    }
                }
                accumulate(grads, a, &da);
            }
            OpKind::Slice { axis, start, len } => {
                let a = inputs[0];
                let shape = self.value(a).shape();
                let (outer, axis_len, inner) = reduce_dims(shape, axis, "slice").unwrap();
                let mut da = vec![0.0; self.value(a).len()];
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    da[dst..dst + len * inner].copy_from_slice(&dout[src..src + len * inner]);
                }
                accumulate(grads, a, &da);
            }
            OpKind::Concat(axis) => {
                let out_shape = self.value(output).shape();
                let (outer, _, inner) = reduce_dims(out_shape, axis, "concat").unwrap();
                let mut offset = 0;
                for &v in inputs {
                    let part_axis = self.value(v).shape()[axis];
                    if self.requires_grad_of(v) {
                        let mut dv = vec![0.0; self.value(v).len()];
                        for o in 0..outer {
                            let src = (o * out_shape[axis] + offset) * inner;
                            let dst = o * part_axis * inner;
                            dv[dst..dst + part_axis * inner]
                                .copy_from_slice(&dout[src..src + part_axis * inner]);
                        }
                        accumulate(grads, v, &dv);
                    }
                    offset += part_axis;
                }
            }
            OpKind::ScalarMultiply(c) => {
                let da: Vec<f64> = dout.iter().map(|g| g * c).collect();
                accumulate(grads, inputs[0], &da);
            }
            OpKind::L2Norm => {
                let x = self.value(inputs[0]).data();
                let norm = self.value(output).data()[0];
                if norm > 0.0 {
                    let g = dout[0] / norm;
                    let da: Vec<f64> = x.iter().map(|&x| g * x).collect();
                    accumulate(grads, inputs[0], &da);
                }
                // The norm of the zero vector gets a zero (sub)gradient.
            }
            OpKind::CosineSimilarity => {
                let (a, b) = (inputs[0], inputs[1]);
                let (xa, xb) = (self.value(a).data(), self.value(b).data());
                let na = linalg::l2_norm(xa);
                let nb = linalg::l2_norm(xb);
                let den = na * nb;
                if den < linalg::COSINE_EPS {
                    return;
                }
                let s = linalg::dot(xa, xb) / den;
                let g = dout[0];
                if self.requires_grad_of(a) {
                    let da: Vec<f64> = xa
                        .iter()
                        .zip(xb)
                        .map(|(&ai, &bi)| g * (bi / den - s * ai / (na * na)))
                        .collect();
                    accumulate(grads, a, &da);
                }
                if self.requires_grad_of(b) {
                    let db: Vec<f64> = xa
                        .iter()
                        .zip(xb)
                        .map(|(&ai, &bi)| g * (ai / den - s * bi / (nb * nb)))
                        .collect();
                    accumulate(grads, b, &db);
                }
            }
        }
    }

    fn requires_grad_of(&self, v: Var) -> bool {
        self.entries[v.0].requires_grad
    }
}

fn accumulate(grads: &mut Vec<Option<Vec<f64>>>, v: Var, contribution: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot => *slot = Some(contribution.to_vec()),
    }
}

fn broadcast_kind(lhs: &[usize], rhs: &[usize]) -> Option<Broadcast> {
    if lhs == rhs {
        Some(Broadcast::Same)
    } else if rhs == [1] {
        Some(Broadcast::Scalar)
    } else if rhs.len() == 1 && *lhs.last().unwrap() == rhs[0] {
        Some(Broadcast::LastAxis)
    } else {
        None
    }
}

fn map_broadcast(lhs: &[f64], rhs: &[f64], bcast: Broadcast, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match bcast {
        Broadcast::Same => lhs.iter().zip(rhs).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Scalar => lhs.iter().map(|&x| f(x, rhs[0])).collect(),
        Broadcast::LastAxis => {
            let k = rhs.len();
            let mut out = Vec::with_capacity(lhs.len());
            for chunk in lhs.chunks(k) {
                out.extend(chunk.iter().zip(rhs).map(|(&x, &y)| f(x, y)));
            }
            out
        }
    }
}

/// Folds a gradient of the broadcast (lhs-shaped) result back onto the
/// right operand's shape by summing over the broadcast positions.
fn reduce_broadcast(dout: &[f64], rhs_len: usize, bcast: Broadcast) -> Vec<f64> {
    match bcast {
        Broadcast::Same => dout.to_vec(),
        Broadcast::Scalar => vec![dout.iter().sum()],
        Broadcast::LastAxis => {
            let mut out = vec![0.0; rhs_len];
            for chunk in dout.chunks(rhs_len) {
                for (o, &g) in out.iter_mut().zip(chunk) {
                    *o += g;
                }
            }
            out
        }
    }
}

fn reduce_dims(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Domain {
            op,
            msg: format!("axis {} out of bounds for shape {:?}", axis, shape),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| *d != axis)
        .map(|(_, &e)| e)
        .collect();
    if s.is_empty() {
        s.push(1);
    }
    s
}
