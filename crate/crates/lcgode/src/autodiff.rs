//! Reverse-mode automatic differentiation on a replayable tape.
//!
//! A forward pass appends primitive op records to a [`Tape`]; node ids are
//! indices into that list and are therefore topologically ordered by
//! construction. [`Tape::backward`] replays the records in reverse and
//! accumulates gradients for every registered parameter. Tapes are rebuilt
//! per forward pass, so control flow in model code needs no special casing.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub type NodeId = usize;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors. Registration order is
/// fixed at model construction, which keeps optimizer state and checkpoint
/// layout stable.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            self.values[id.0].shape(),
            value.shape(),
            "parameter {} shape change",
            self.names[id.0]
        );
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn num_coords(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]. Parameters the
/// loss never touched keep an all-zero entry.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros(store: &ParamStore) -> Self {
        Gradients {
            grads: store.values.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        let dst = &mut self.grads[id.0];
        assert_eq!(dst.shape(), grad.shape());
        for (d, g) in dst.data_mut().iter_mut().zip(grad.data()) {
            *d += g;
        }
    }

    /// Scale every gradient in place, e.g. to average over a batch.
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Elementwise sum with another gradient set over the same store.
    /// Batch reduction always adds in a fixed order so results cannot
    /// depend on scheduling.
    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            assert_eq!(dst.shape(), src.shape());
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += s;
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Concat(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Softmax(NodeId),
    Broadcast(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Concat(..) => "concat",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Softmax(_) => "softmax",
            Op::Broadcast(..) => "broadcast",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    param: Option<ParamId>,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor, param: Option<ParamId>) -> NodeId {
        self.nodes.push(Node { op, value, param });
        self.nodes.len() - 1
    }

    /// Record a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, None)
    }

    pub fn constant_scalar(&mut self, x: f64) -> NodeId {
        self.constant(Tensor::scalar(x))
    }

    /// Record a leaf backed by a store parameter. Gradients flowing into
    /// this node accumulate under the parameter's id, so registering the
    /// same parameter more than once on a tape is allowed.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Leaf, store.get(id).clone(), Some(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v, None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v, None))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v, None)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddConst(a), v, None)
    }

    /// Concatenate two vectors (or scalars treated as length-1 vectors).
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() > 1 || vb.ndim() > 1 {
            return Err(Error::ShapeMismatch {
                op: "concat",
                details: format!("expected vectors, got {:?} and {:?}", va.shape(), vb.shape()),
            });
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        Ok(self.push(Op::Concat(a, b), Tensor::vector(data), None))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, None)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v, None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v, None)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v, None)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v, None)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v, None)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel() as f64;
        let v = Tensor::scalar(self.value(a).data().iter().sum::<f64>() / n);
        self.push(Op::Mean(a), v, None)
    }

    /// Softmax over a vector, stabilized by max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.ndim() != 1 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                details: format!("expected vector, got {:?}", va.shape()),
            });
        }
        let max = va.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = va.data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let v = Tensor::vector(exps.into_iter().map(|e| e / total).collect());
        Ok(self.push(Op::Softmax(a), v, None))
    }

    /// Broadcast a one-element tensor to an n-vector.
    pub fn broadcast(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let va = self.value(a);
        if !va.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                details: format!("expected scalar, got {:?}", va.shape()),
            });
        }
        let v = Tensor::vector(vec![va.item(); n]);
        Ok(self.push(Op::Broadcast(a), v, None))
    }

    /// Reverse pass from a one-element loss node. Replays the tape in
    /// reverse id order; the result is a pure function of the tape, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                details: format!("loss must be one element, got {:?}", lv.shape()),
            });
        }
        if !lv.item().is_finite() {
            // Point at the earliest node that went non-finite; that is
            // where the numeric failure originated.
            for (i, node) in self.nodes.iter().enumerate() {
                if !node.value.is_finite() {
                    return Err(Error::NonFinite {
                        node: i,
                        op: node.op.name().to_string(),
                    });
                }
            }
            return Err(Error::NonFinite {
                node: loss,
                op: self.nodes[loss].op.name().to_string(),
            });
        }

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0]));
        let mut grads = Gradients::zeros(store);

        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else { continue };
            if let Some(pid) = self.nodes[id].param {
                grads.accumulate(pid, &g);
            }
            self.propagate(id, &g, &mut adj)?;
        }
        Ok(grads)
    }

    fn propagate(&self, id: NodeId, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                match (va.ndim(), vb.ndim()) {
                    (2, 2) => {
                        // dA = g B^T, dB = A^T g
                        let (r, c) = (va.shape()[0], va.shape()[1]);
                        let k = vb.shape()[1];
                        let mut da = vec![0.0; r * c];
                        let mut db = vec![0.0; c * k];
                        for i in 0..r {
                            for l in 0..k {
                                let gil = g.data()[i * k + l];
                                if gil == 0.0 {
                                    continue;
                                }
                                for j in 0..c {
                                    da[i * c + j] += gil * vb.data()[j * k + l];
                                    db[j * k + l] += va.data()[i * c + j] * gil;
                                }
                            }
                        }
                        accumulate(adj, a, &Tensor::matrix(r, c, da));
                        accumulate(adj, b, &Tensor::matrix(c, k, db));
                    }
                    (2, 1) => {
                        let da = tensor::outer(g, vb)?;
                        let db = tensor::matvec_t(va, g)?;
                        accumulate(adj, a, &da);
                        accumulate(adj, b, &db);
                    }
                    _ => unreachable!("matmul recorded with unsupported shapes"),
                }
            }
            Op::Add(a, b) => {
                accumulate(adj, a, &reduce_to(self.value(a), g));
                accumulate(adj, b, &reduce_to(self.value(b), g));
            }
            Op::Sub(a, b) => {
                accumulate(adj, a, &reduce_to(self.value(a), g));
                let neg = g.map(|x| -x);
                accumulate(adj, b, &reduce_to(self.value(b), &neg));
            }
            Op::Mul(a, b) => {
                let ga = tensor::zip("mul', backward", g, self.value(b), |x, y| x * y)?;
                let gb = tensor::zip("mul', backward", g, self.value(a), |x, y| x * y)?;
                accumulate(adj, a, &reduce_to(self.value(a), &ga));
                accumulate(adj, b, &reduce_to(self.value(b), &gb));
            }
            Op::Scale(a, c) => accumulate(adj, a, &g.map(|x| x * c)),
            Op::AddConst(a) => accumulate(adj, a, g),
            Op::Concat(a, b) => {
                let na = self.value(a).numel();
                let (sa, sb) = g.data().split_at(na);
                accumulate(adj, a, &Tensor::new(self.value(a).shape().to_vec(), sa.to_vec()));
                accumulate(adj, b, &Tensor::new(self.value(b).shape().to_vec(), sb.to_vec()));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let da = binary_map(g, y, |gi, yi| gi * yi * (1.0 - yi));
                accumulate(adj, a, &da);
            }
            Op::Tanh(a) => {
                let da = binary_map(g, &node.value, |gi, yi| gi * (1.0 - yi * yi));
                accumulate(adj, a, &da);
            }
            Op::Relu(a) => {
                // Subgradient 0 at the kink.
                let da = binary_map(g, self.value(a), |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                accumulate(adj, a, &da);
            }
            Op::Softplus(a) => {
                let da = binary_map(g, self.value(a), |gi, xi| gi * sigmoid(xi));
                accumulate(adj, a, &da);
            }
            Op::Exp(a) => {
                let da = binary_map(g, &node.value, |gi, yi| gi * yi);
                accumulate(adj, a, &da);
            }
            Op::Log(a) => {
                let da = binary_map(g, self.value(a), |gi, xi| gi / xi);
                accumulate(adj, a, &da);
            }
            Op::Square(a) => {
                let da = binary_map(g, self.value(a), |gi, xi| gi * 2.0 * xi);
                accumulate(adj, a, &da);
            }
            Op::Sum(a) => {
                let gi = g.item();
                accumulate(adj, a, &self.value(a).map(|_| gi));
            }
            Op::Mean(a) => {
                let n = self.value(a).numel() as f64;
                let gi = g.item() / n;
                accumulate(adj, a, &self.value(a).map(|_| gi));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot: f64 = g.data().iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let da = Tensor::vector(
                    g.data()
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| yi * (gi - dot))
                        .collect(),
                );
                accumulate(adj, a, &da);
            }
            Op::Broadcast(a) => {
                let total: f64 = g.data().iter().sum();
                let shape = self.value(a).shape().to_vec();
                accumulate(adj, a, &Tensor::new(shape, vec![total]));
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: &Tensor) {
    match &mut adj[id] {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        slot => *slot = Some(g.clone()),
    }
}

/// Collapse a gradient onto the shape of an input that may have been
/// broadcast from a single element.
fn reduce_to(input: &Tensor, g: &Tensor) -> Tensor {
    if input.shape() == g.shape() {
        g.clone()
    } else {
        debug_assert!(input.is_scalar());
        Tensor::new(input.shape().to_vec(), vec![g.data().iter().sum()])
    }
}

fn binary_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(g.shape(), other.shape());
    Tensor::new(
        g.shape().to_vec(),
        g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences at `point`. Returns the worst relative error
/// `|analytic - numeric| / max(1, |analytic|)` over all coordinates.
///
/// `build` receives a tape and the node holding the parameter vector and
/// must return the loss node.
pub fn grad_check<F>(build: F, point: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "grad_check eps {eps} outside [1e-7, 1e-4]"
        )));
    }
    let mut store = ParamStore::new();
    let pid = store.add("x", Tensor::vector(point.to_vec()));

    let eval = |values: &[f64]| -> Result<f64> {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::vector(values.to_vec()));
        let mut tape = Tape::new();
        let x = tape.param(&s, id);
        let loss = build(&mut tape, x)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let x = tape.param(&store, pid);
    let loss = build(&mut tape, x)?;
    let grads = tape.backward(loss, &store)?;
    let analytic = grads.get(pid).data().to_vec();

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut up = point.to_vec();
        let mut dn = point.to_vec();
        up[i] += eps;
        dn[i] -= eps;
        let (fu, fd) = (eval(&up)?, eval(&dn)?);
        if !fu.is_finite() || !fd.is_finite() || !analytic[i].is_finite() {
            return Err(Error::GradCheckNonFinite { coord: i });
        }
        let numeric = (fu - fd) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Finite-difference check over every parameter of a store. `build` must
/// construct the loss from the given store. Returns the worst relative
/// error across all coordinates of all parameters.
pub fn grad_check_store<F>(build: F, store: &ParamStore, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "grad_check eps {eps} outside [1e-7, 1e-4]"
        )));
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let grads = tape.backward(loss, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, s)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut coord = 0usize;
    for (pid, _, value) in store.iter() {
        let analytic = grads.get(pid);
        for i in 0..value.numel() {
            let mut up = store.clone();
            let mut dn = store.clone();
            let mut vu = value.clone();
            let mut vd = value.clone();
            vu.data_mut()[i] += eps;
            vd.data_mut()[i] -= eps;
            up.set(pid, vu);
            dn.set(pid, vd);
            let (fu, fd) = (eval(&up)?, eval(&dn)?);
            let a = analytic.data()[i];
            if !fu.is_finite() || !fd.is_finite() || !a.is_finite() {
                return Err(Error::GradCheckNonFinite { coord });
            }
            let numeric = (fu - fd) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
            coord += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_param(tape: &mut Tape, store: &mut ParamStore, name: &str, v: Vec<f64>) -> (ParamId, NodeId) {
        let id = store.add(name, Tensor::vector(v));
        let node = tape.param(store, id);
        (id, node)
    }

    #[test]
    fn forward_values_basic() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[0], 0.5);
        let sp = tape.softplus(x);
        assert!((tape.value(sp).data()[0] - 0.693_147_180_559_945_3).abs() < 1e-15);
    }

    #[test]
    fn backward_chain_rule() {
        // d/dx sum(square(x)) = 2x
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let (id, x) = vec_param(&mut tape, &mut store, "x", vec![1.5, -2.0, 0.25]);
        let sq = tape.square(x);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(id).data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let (id, x) = vec_param(&mut tape, &mut store, "x", vec![0.0]);
        let s = tape.sigmoid(x);
        let loss = tape.sum(s);
        let grads = tape.backward(loss, &store).unwrap();
        assert!((grads.get(id).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relu_subgradient_zero_at_kink() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let (id, x) = vec_param(&mut tape, &mut store, "x", vec![0.0, -1.0, 2.0]);
        let r = tape.relu(x);
        let loss = tape.sum(r);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(id).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn untouched_param_gets_zero_entry() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::vector(vec![2.0]));
        let unused = store.add("unused", Tensor::matrix(2, 2, vec![1.0; 4]));
        let mut tape = Tape::new();
        let x = tape.param(&store, used);
        let loss = tape.sum(x);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(used).data(), &[1.0]);
        assert_eq!(grads.get(unused).data(), &[0.0; 4]);
        assert_eq!(grads.get(unused).shape(), &[2, 2]);
    }

    #[test]
    fn repeated_param_registration_accumulates() {
        // f = sum(x) + sum(x) registered as two leaves -> grad 2 per coord.
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        let sa = tape.sum(a);
        let sb = tape.sum(b);
        let loss = tape.add(sa, sb).unwrap();
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(id).data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![0.3, -0.7, 1.9]));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let t = tape.tanh(x);
        let e = tape.exp(t);
        let loss = tape.mean(e);
        let g1 = tape.backward(loss, &store).unwrap();
        let g2 = tape.backward(loss, &store).unwrap();
        assert_eq!(g1.get(id).data(), g2.get(id).data());
    }

    #[test]
    fn non_finite_loss_reports_origin_node() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![-1.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let l = tape.log(x); // NaN here
        let loss = tape.sum(l);
        let err = tape.backward(loss, &store).unwrap_err();
        match err {
            Error::NonFinite { node, op } => {
                assert_eq!(node, l);
                assert_eq!(op, "log");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn concat_splits_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0]));
        let b = store.add("b", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new();
        let na = tape.param(&store, a);
        let nb = tape.param(&store, b);
        let cat = tape.concat(na, nb).unwrap();
        let w = tape.constant(Tensor::vector(vec![1.0, 10.0, 100.0]));
        let prod = tape.mul(cat, w).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 10.0]);
        assert_eq!(grads.get(b).data(), &[100.0]);
    }

    #[test]
    fn scalar_broadcast_mul_reduces_gradient() {
        let mut store = ParamStore::new();
        let s = store.add("s", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let ns = tape.param(&store, s);
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let prod = tape.mul(v, ns).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.get(s).data(), &[6.0]);
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let err = grad_check(|tape, x| Ok(tape.sum(x)), &[1.0], 1e-2).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn grad_check_composite_function() {
        // f(x) = mean(exp(tanh(x) * x))
        let build = |tape: &mut Tape, x: NodeId| -> Result<NodeId> {
            let t = tape.tanh(x);
            let p = tape.mul(t, x)?;
            let e = tape.exp(p);
            Ok(tape.mean(e))
        };
        let err = grad_check(build, &[0.5, -1.2, 2.0, 0.01], 1e-5).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn backward_is_linear() {
        // grad(a*f + b*g) == a*grad(f) + b*grad(g) to machine precision.
        let point = [0.4, -0.9, 1.3];
        let (a, b) = (2.5, -0.75);

        let run = |mode: u8| -> Vec<f64> {
            let mut store = ParamStore::new();
            let id = store.add("x", Tensor::vector(point.to_vec()));
            let mut tape = Tape::new();
            let x = tape.param(&store, id);
            let t = tape.tanh(x);
            let f = tape.sum(t);
            let sq = tape.square(x);
            let g = tape.mean(sq);
            let loss = match mode {
                0 => f,
                1 => g,
                _ => {
                    let af = tape.scale(f, a);
                    let bg = tape.scale(g, b);
                    tape.add(af, bg).unwrap()
                }
            };
            tape.backward(loss, &store).unwrap().get(id).data().to_vec()
        };

        let gf = run(0);
        let gg = run(1);
        let gc = run(2);
        for i in 0..point.len() {
            assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matrix_matrix_grads() {
        let check = grad_check(
            |tape, x| {
                // x: 4 elements -> 2x2 matrix times constant, summed.
                let m = tape.constant(Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.25]));
                // reshape x into a matrix via matmul with selector matrices is
                // overkill; multiply elementwise then matmul the constant.
                let flat = tape.square(x);
                let s = tape.sum(flat);
                let b = tape.broadcast(s, 2)?;
                let mv = tape.matmul(m, b)?;
                Ok(tape.sum(mv))
            },
            &[1.0, -0.5, 0.3, 2.0],
            1e-5,
        )
        .unwrap();
        assert!(check < 1e-9, "relative error {check}");
    }
}
