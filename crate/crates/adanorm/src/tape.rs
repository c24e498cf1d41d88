//! Reverse-mode automatic differentiation on a per-pass tape.
//!
//! The tape is define-by-run: each forward pass records its operations in
//! topological order, `backward` sweeps the tape once in reverse, and
//! gradients for bound parameters are written back into the `ParamStore`.
//! Every operation validates shapes up front and checks its output for
//! NaN/Inf, so numeric blow-ups surface as errors at the op that produced
//! them instead of propagating.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{ensure_finite, Tensor};

/// Handle to a value recorded on a tape. Only valid for the tape that
/// produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul { a: ValueId, b: ValueId },
    Matvec { m: ValueId, v: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Div { a: ValueId, b: ValueId },
    AddScalar { a: ValueId },
    MulScalar { a: ValueId, s: f64 },
    RsubScalar { a: ValueId },
    Sqrt { a: ValueId },
    Sigmoid { a: ValueId },
    Relu { a: ValueId },
    Tanh { a: ValueId },
    Exp { a: ValueId },
    Ln { a: ValueId },
    Guard { a: ValueId, eps: f64 },
    MeanRows { a: ValueId },
    BroadcastRows { v: ValueId, rows: usize },
    SumAll { a: ValueId },
    Pick { a: ValueId, idx: usize },
    PickRow { a: ValueId, row: usize },
    Reshape { a: ValueId },
    Conv1d { x: ValueId, w: ValueId, b: ValueId },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Vec<f64>>>,
    bound: Vec<(ParamId, ValueId)>,
    bound_lookup: HashMap<ParamId, ValueId>,
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

    /// Records a leaf holding `t`. Gradients w.r.t. leaves are available
    /// after `backward`.
    pub fn input(&mut self, t: Tensor) -> ValueId {
        self.push(t, Op::Leaf)
    }

    /// Binds a stored parameter onto this tape, memoized per parameter so a
    /// parameter reused within one pass maps to a single leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> ValueId {
        if let Some(&vid) = self.bound_lookup.get(&id) {
            return vid;
        }
        let vid = self.push(store.value(id).clone(), Op::Leaf);
        self.bound.push((id, vid));
        self.bound_lookup.insert(id, vid);
        vid
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        // Any new node invalidates previously computed gradients.
        self.grads = None;
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    fn emit(&mut self, op_name: &'static str, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Result<ValueId> {
        ensure_finite(op_name, &values)?;
        let t = Tensor::new(shape, values).expect("op output shape is consistent");
        Ok(self.push(t, op))
    }

    // ---- forward ops ----

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 {
            return Err(Error::shape("matmul", "operands must be rank 2"));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions disagree: {}x{} vs {}x{}", m, k, k2, n),
            ));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ta.values()[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * tb.values()[p * n + j];
                }
            }
        }
        self.emit("matmul", vec![m, n], out, Op::Matmul { a, b })
    }

    /// Matrix-vector product: [r,c] x [c] -> [r].
    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> Result<ValueId> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.rank() != 2 || tv.rank() != 1 {
            return Err(Error::shape("matvec", "expected matrix and vector"));
        }
        let (r, c) = (tm.rows(), tm.cols());
        if c != tv.numel() {
            return Err(Error::shape(
                "matvec",
                format!("matrix is {}x{}, vector has {}", r, c, tv.numel()),
            ));
        }
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &tm.values()[i * c..(i + 1) * c];
            out[i] = row.iter().zip(tv.values()).map(|(a, b)| a * b).sum();
        }
        self.emit("matvec", vec![r], out, Op::Matvec { m, v })
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                op_name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let values = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        self.emit(op_name, shape, values, op)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Elementwise division. Any exactly-zero denominator is an error; for
    /// learned divisors go through `guard` first.
    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.value(b).values().contains(&0.0) {
            return Err(Error::math("div", "zero denominator"));
        }
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div { a, b })
    }

    fn unary(
        &mut self,
        op_name: &'static str,
        a: ValueId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<ValueId> {
        let ta = self.value(a);
        let values = ta.values().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        self.emit(op_name, shape, values, op)
    }

    pub fn add_scalar(&mut self, a: ValueId, s: f64) -> Result<ValueId> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar { a })
    }

    pub fn mul_scalar(&mut self, a: ValueId, s: f64) -> Result<ValueId> {
        self.unary("mul_scalar", a, |x| x * s, Op::MulScalar { a, s })
    }

    /// s - x elementwise.
    pub fn rsub_scalar(&mut self, a: ValueId, s: f64) -> Result<ValueId> {
        self.unary("rsub_scalar", a, |x| s - x, Op::RsubScalar { a })
    }

    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId> {
        if self.value(a).values().iter().any(|&x| x < 0.0) {
            return Err(Error::math("sqrt", "negative operand"));
        }
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt { a })
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid { a })
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu { a })
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary("tanh", a, f64::tanh, Op::Tanh { a })
    }

    pub fn exp(&mut self, a: ValueId) -> Result<ValueId> {
        self.unary("exp", a, f64::exp, Op::Exp { a })
    }

    pub fn ln(&mut self, a: ValueId) -> Result<ValueId> {
        if self.value(a).values().iter().any(|&x| x <= 0.0) {
            return Err(Error::math("ln", "non-positive operand"));
        }
        self.unary("ln", a, f64::ln, Op::Ln { a })
    }

    /// Keeps each entry away from zero: v if |v| >= eps, else sign(v)*eps
    /// with sign(0) = +1. Constant (zero-gradient) on the clamped region.
    pub fn guard(&mut self, a: ValueId, eps: f64) -> Result<ValueId> {
        self.unary(
            "guard",
            a,
            |x| {
                if x.abs() >= eps {
                    x
                } else if x.is_sign_negative() && x != 0.0 {
                    -eps
                } else {
                    eps
                }
            },
            Op::Guard { a, eps },
        )
    }

    /// Mean over the time (row) axis of a rank-2 tensor: [L,d] -> [d].
    pub fn mean_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::shape("mean_rows", "expected rank 2"));
        }
        let (l, d) = (ta.rows(), ta.cols());
        if l == 0 {
            return Err(Error::math("mean_rows", "empty time axis"));
        }
        let mut out = vec![0.0; d];
        for j in 0..l {
            for k in 0..d {
                out[k] += ta.values()[j * d + k];
            }
        }
        for v in &mut out {
            *v /= l as f64;
        }
        self.emit("mean_rows", vec![d], out, Op::MeanRows { a })
    }

    /// Tiles a [d] vector into a [rows,d] matrix.
    pub fn broadcast_rows(&mut self, v: ValueId, rows: usize) -> Result<ValueId> {
        let tv = self.value(v);
        if tv.rank() != 1 {
            return Err(Error::shape("broadcast_rows", "expected rank 1"));
        }
        let d = tv.numel();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(tv.values());
        }
        self.emit("broadcast_rows", vec![rows, d], out, Op::BroadcastRows { v, rows })
    }

    /// Sum of all entries -> scalar.
    pub fn sum_all(&mut self, a: ValueId) -> Result<ValueId> {
        let s: f64 = self.value(a).values().iter().sum();
        self.emit("sum_all", vec![], vec![s], Op::SumAll { a })
    }

    /// Picks one entry of a vector -> scalar.
    pub fn pick(&mut self, a: ValueId, idx: usize) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.rank() != 1 {
            return Err(Error::shape("pick", "expected rank 1"));
        }
        if idx >= ta.numel() {
            return Err(Error::shape(
                "pick",
                format!("index {} out of range {}", idx, ta.numel()),
            ));
        }
        let v = ta.values()[idx];
        self.emit("pick", vec![], vec![v], Op::Pick { a, idx })
    }

    /// Extracts row `row` of a rank-2 tensor as a [d] vector.
    pub fn pick_row(&mut self, a: ValueId, row: usize) -> Result<ValueId> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::shape("pick_row", "expected rank 2"));
        }
        if row >= ta.rows() {
            return Err(Error::shape(
                "pick_row",
                format!("row {} out of range {}", row, ta.rows()),
            ));
        }
        let d = ta.cols();
        let values = ta.row(row).to_vec();
        self.emit("pick_row", vec![d], values, Op::PickRow { a, row })
    }

    /// Reinterprets the values under a new shape with the same element count.
    pub fn reshape(&mut self, a: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let ta = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {} values into {:?}", ta.numel(), shape),
            ));
        }
        let values = ta.values().to_vec();
        self.emit("reshape", shape, values, Op::Reshape { a })
    }

    /// Valid 1-D convolution over time. x is [L,d] (d input channels), w is
    /// [F,d,K], b is [F]; output is [L-K+1, F].
    pub fn conv1d(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.rank() != 2 || tw.rank() != 3 || tb.rank() != 1 {
            return Err(Error::shape("conv1d", "expected x [L,d], w [F,d,K], b [F]"));
        }
        let (l, d) = (tx.rows(), tx.cols());
        let (f, dc, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if dc != d {
            return Err(Error::shape(
                "conv1d",
                format!("x has {} channels, w expects {}", d, dc),
            ));
        }
        if tb.numel() != f {
            return Err(Error::shape("conv1d", "bias length must equal filter count"));
        }
        if l < k {
            return Err(Error::shape(
                "conv1d",
                format!("window length {} shorter than kernel {}", l, k),
            ));
        }
        let t_out = l - k + 1;
        let mut out = vec![0.0; t_out * f];
        for t in 0..t_out {
            for fi in 0..f {
                let mut s = tb.values()[fi];
                for c in 0..d {
                    for ki in 0..k {
                        s += tx.values()[(t + ki) * d + c] * tw.values()[fi * d * k + c * k + ki];
                    }
                }
                out[t * f + fi] = s;
            }
        }
        self.emit("conv1d", vec![t_out, f], out, Op::Conv1d { x, w, b })
    }

    /// Mean of a set of scalar nodes.
    pub fn mean_of(&mut self, ids: &[ValueId]) -> Result<ValueId> {
        let first = *ids
            .first()
            .ok_or_else(|| Error::Autodiff("mean_of needs at least one node".into()))?;
        let mut acc = first;
        for &id in &ids[1..] {
            acc = self.add(acc, id)?;
        }
        self.mul_scalar(acc, 1.0 / ids.len() as f64)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss node. Populates gradients for every
    /// node at or before `loss` in tape order.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.numel()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            // Split off the current node's gradient so parents can be
            // mutated; parents always precede the node.
            let (before, after) = grads.split_at_mut(i);
            let go: &[f64] = &after[0];
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let ta = &self.nodes[a.0].value;
                    let tb = &self.nodes[b.0].value;
                    let (m, k) = (ta.rows(), ta.cols());
                    let n = tb.cols();
                    // ga += go . b^T ; gb += a^T . go
                    {
                        let ga = &mut before[a.0];
                        for i2 in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += go[i2 * n + j] * tb.values()[p * n + j];
                                }
                                ga[i2 * k + p] += s;
                            }
                        }
                    }
                    {
                        let gb = &mut before[b.0];
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i2 in 0..m {
                                    s += ta.values()[i2 * k + p] * go[i2 * n + j];
                                }
                                gb[p * n + j] += s;
                            }
                        }
                    }
                }
                Op::Matvec { m, v } => {
                    let tm = &self.nodes[m.0].value;
                    let tv = &self.nodes[v.0].value;
                    let (r, c) = (tm.rows(), tm.cols());
                    {
                        let gm = &mut before[m.0];
                        for i2 in 0..r {
                            for j in 0..c {
                                gm[i2 * c + j] += go[i2] * tv.values()[j];
                            }
                        }
                    }
                    {
                        let gv = &mut before[v.0];
                        for j in 0..c {
                            let mut s = 0.0;
                            for i2 in 0..r {
                                s += go[i2] * tm.values()[i2 * c + j];
                            }
                            gv[j] += s;
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut before[a.0], go, |g, _| g);
                    accumulate(&mut before[b.0], go, |g, _| g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut before[a.0], go, |g, _| g);
                    accumulate(&mut before[b.0], go, |g, _| -g);
                }
                Op::Mul { a, b } => {
                    let tb = self.nodes[b.0].value.values();
                    let ta = self.nodes[a.0].value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g * tb[idx];
                    }
                    for (idx, &g) in go.iter().enumerate() {
                        before[b.0][idx] += g * ta[idx];
                    }
                }
                Op::Div { a, b } => {
                    let ta = self.nodes[a.0].value.values();
                    let tb = self.nodes[b.0].value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g / tb[idx];
                    }
                    for (idx, &g) in go.iter().enumerate() {
                        before[b.0][idx] -= g * ta[idx] / (tb[idx] * tb[idx]);
                    }
                }
                Op::AddScalar { a } => accumulate(&mut before[a.0], go, |g, _| g),
                Op::MulScalar { a, s } => accumulate(&mut before[a.0], go, |g, _| g * s),
                Op::RsubScalar { a } => accumulate(&mut before[a.0], go, |g, _| -g),
                Op::Sqrt { a } => {
                    let y = node.value.values();
                    // Guarded denominator keeps the derivative finite at 0.
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g * 0.5 / y[idx].max(1e-12);
                    }
                }
                Op::Sigmoid { a } => {
                    let y = node.value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g * y[idx] * (1.0 - y[idx]);
                    }
                }
                Op::Relu { a } => {
                    let x = self.nodes[a.0].value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        if x[idx] > 0.0 {
                            before[a.0][idx] += g;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = node.value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g * (1.0 - y[idx] * y[idx]);
                    }
                }
                Op::Exp { a } => {
                    let y = node.value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g * y[idx];
                    }
                }
                Op::Ln { a } => {
                    let x = self.nodes[a.0].value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        before[a.0][idx] += g / x[idx];
                    }
                }
                Op::Guard { a, eps } => {
                    let x = self.nodes[a.0].value.values();
                    for (idx, &g) in go.iter().enumerate() {
                        if x[idx].abs() >= eps {
                            before[a.0][idx] += g;
                        }
                    }
                }
                Op::MeanRows { a } => {
                    let ta = &self.nodes[a.0].value;
                    let (l, d) = (ta.rows(), ta.cols());
                    let inv = 1.0 / l as f64;
                    let ga = &mut before[a.0];
                    for j in 0..l {
                        for k2 in 0..d {
                            ga[j * d + k2] += go[k2] * inv;
                        }
                    }
                }
                Op::BroadcastRows { v, rows } => {
                    let d = self.nodes[v.0].value.numel();
                    let gv = &mut before[v.0];
                    for j in 0..rows {
                        for k2 in 0..d {
                            gv[k2] += go[j * d + k2];
                        }
                    }
                }
                Op::SumAll { a } => {
                    let g = go[0];
                    for gi in before[a.0].iter_mut() {
                        *gi += g;
                    }
                }
                Op::Pick { a, idx } => {
                    before[a.0][idx] += go[0];
                }
                Op::PickRow { a, row } => {
                    let d = node.value.numel();
                    let ga = &mut before[a.0];
                    for k2 in 0..d {
                        ga[row * d + k2] += go[k2];
                    }
                }
                Op::Reshape { a } => accumulate(&mut before[a.0], go, |g, _| g),
                Op::Conv1d { x, w, b } => {
                    let tx = &self.nodes[x.0].value;
                    let tw = &self.nodes[w.0].value;
                    let (l, d) = (tx.rows(), tx.cols());
                    let (f, k) = (tw.shape()[0], tw.shape()[2]);
                    let t_out = l - k + 1;
                    for t in 0..t_out {
                        for fi in 0..f {
                            let g = go[t * f + fi];
                            if g == 0.0 {
                                continue;
                            }
                            before[b.0][fi] += g;
                            for c in 0..d {
                                for ki in 0..k {
                                    before[x.0][(t + ki) * d + c] +=
                                        g * tw.values()[fi * d * k + c * k + ki];
                                    before[w.0][fi * d * k + c * k + ki] +=
                                        g * tx.values()[(t + ki) * d + c];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `id`.
    pub fn grad(&self, id: ValueId) -> Result<&[f64]> {
        match &self.grads {
            Some(g) => Ok(&g[id.0]),
            None => Err(Error::Autodiff("backward has not been run".into())),
        }
    }

    pub fn grad_tensor(&self, id: ValueId) -> Result<Tensor> {
        let g = self.grad(id)?;
        Tensor::new(self.value(id).shape().to_vec(), g.to_vec())
    }

    /// Adds this pass's parameter gradients into the store.
    pub fn accumulate_grads(&self, store: &mut ParamStore) -> Result<()> {
        if self.grads.is_none() {
            return Err(Error::Autodiff("backward has not been run".into()));
        }
        for &(pid, vid) in &self.bound {
            let g = self.grad(vid)?;
            store.add_to_grad(pid, g);
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], go: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (idx, &g) in go.iter().enumerate() {
        dst[idx] += f(g, idx);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
