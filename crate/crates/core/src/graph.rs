//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once through its constructor methods, which check
//! shapes eagerly, and is immutable afterwards. Leaves are either inputs
//! or parameters and are bound by name at evaluation time through
//! [`Bindings`]. Broadcasting is never implicit: binary elementwise ops
//! require identical shapes and broadcasts are explicit nodes.
//!
//! `max` along an axis routes its subgradient to the first maximal index.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{
    invert_perm, matmul_acc, matmul_nt_acc, matmul_tn_acc, numel, permute_data, split_at_axis,
    Real, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Input,
    Param,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf {
        name: String,
        kind: LeafKind,
    },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum {
        input: NodeId,
        axis: usize,
    },
    Max {
        input: NodeId,
        axis: usize,
    },
    Broadcast {
        input: NodeId,
        axis: usize,
        size: usize,
    },
    Reshape(NodeId),
    Permute {
        input: NodeId,
        perm: Vec<usize>,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Relu(NodeId),
    Sine(NodeId),
    Mse(NodeId, NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum { .. } => "sum",
            Op::Max { .. } => "max",
            Op::Broadcast { .. } => "broadcast",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Relu(..) => "relu",
            Op::Sine(..) => "sine",
            Op::Mse(..) => "mse",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
}

/// Named leaf values for one evaluation.
pub struct Bindings<'a, T: Real> {
    map: HashMap<String, Cow<'a, Tensor<T>>>,
}

impl<'a, T: Real> Default for Bindings<'a, T> {
    fn default() -> Self {
        Bindings {
            map: HashMap::new(),
        }
    }
}

impl<'a, T: Real> Bindings<'a, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: &'a Tensor<T>) -> &mut Self {
        self.map.insert(name.into(), Cow::Borrowed(value));
        self
    }

    pub fn bind_owned(&mut self, name: impl Into<String>, value: Tensor<T>) -> &mut Self {
        self.map.insert(name.into(), Cow::Owned(value));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name).map(|c| c.as_ref())
    }
}

/// Values of every node after a forward pass.
pub struct Evaluation<'a, T: Real> {
    values: Vec<Cow<'a, Tensor<T>>>,
}

impl<'a, T: Real> Evaluation<'a, T> {
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.values[id.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Parameter leaves as (name, shape), in creation order.
    pub fn params(&self) -> Vec<(&str, &[usize])> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Leaf {
                    name,
                    kind: LeafKind::Param,
                } => Some((name.as_str(), n.shape.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    fn label(&self, id: NodeId) -> String {
        match &self.nodes[id.0].op {
            Op::Leaf { name, .. } => format!("leaf `{name}`"),
            op => format!("node #{} ({})", id.0, op.kind()),
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf { kind, .. } => *kind == LeafKind::Param,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Scale(a, _) | Op::Reshape(a) | Op::Relu(a) | Op::Sine(a) => {
                self.nodes[a.0].needs_grad
            }
            Op::Sum { input, .. }
            | Op::Max { input, .. }
            | Op::Broadcast { input, .. }
            | Op::Permute { input, .. }
            | Op::Slice { input, .. } => self.nodes[input.0].needs_grad,
            Op::Concat { inputs, .. } => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            shape,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn add_leaf(&mut self, name: &str, shape: &[usize], kind: LeafKind) -> Result<NodeId> {
        if self.leaves.contains_key(name) {
            return Err(Error::shape(
                format!("leaf `{name}`"),
                "duplicate leaf name",
            ));
        }
        if shape.contains(&0) {
            return Err(Error::shape(format!("leaf `{name}`"), "zero-length axis"));
        }
        let id = self.push(
            Op::Leaf {
                name: name.to_string(),
                kind,
            },
            shape.to_vec(),
        );
        self.leaves.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.add_leaf(name, shape, LeafKind::Input)
    }

    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.add_leaf(name, shape, LeafKind::Param)
    }

    /// 2-D matrix product `(n,k) x (k,m) -> (n,m)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                format!("matmul of {} and {}", self.label(a), self.label(b)),
                format!("incompatible shapes {sa:?} x {sb:?}"),
            ));
        }
        Ok(self.push(Op::MatMul(a, b), vec![sa[0], sb[1]]))
    }

    fn same_shape(&self, what: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                format!("{what} of {} and {}", self.label(a), self.label(b)),
                format!("shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(self.shape(a).to_vec())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), s))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let s = self.shape(a).to_vec();
        self.push(Op::Scale(a, factor), s)
    }

    /// Sums `n` terms of identical shape. Panics on an empty slice.
    pub fn add_all(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    fn check_axis(&self, what: &str, input: NodeId, axis: usize) -> Result<()> {
        if axis >= self.shape(input).len() {
            return Err(Error::shape(
                format!("{what} over {}", self.label(input)),
                format!("axis {axis} out of range for shape {:?}", self.shape(input)),
            ));
        }
        Ok(())
    }

    /// Sums over `axis`, removing it.
    pub fn sum(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis("sum", input, axis)?;
        let mut s = self.shape(input).to_vec();
        s.remove(axis);
        Ok(self.push(Op::Sum { input, axis }, s))
    }

    /// Maximum over `axis`, removing it.
    pub fn max(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        self.check_axis("max", input, axis)?;
        let mut s = self.shape(input).to_vec();
        s.remove(axis);
        Ok(self.push(Op::Max { input, axis }, s))
    }

    /// Inserts a new axis of length `size` at position `axis`, copying values along it.
    pub fn broadcast(&mut self, input: NodeId, axis: usize, size: usize) -> Result<NodeId> {
        let mut s = self.shape(input).to_vec();
        if axis > s.len() || size == 0 {
            return Err(Error::shape(
                format!("broadcast of {}", self.label(input)),
                format!("cannot insert axis {axis} of size {size} into {s:?}"),
            ));
        }
        s.insert(axis, size);
        Ok(self.push(Op::Broadcast { input, axis, size }, s))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != numel(self.shape(input)) || shape.contains(&0) {
            return Err(Error::shape(
                format!("reshape of {}", self.label(input)),
                format!("cannot reshape {:?} into {shape:?}", self.shape(input)),
            ));
        }
        if shape == self.shape(input) {
            return Ok(input);
        }
        Ok(self.push(Op::Reshape(input), shape.to_vec()))
    }

    /// Output axis `i` takes input axis `perm[i]`.
    pub fn permute(&mut self, input: NodeId, perm: &[usize]) -> Result<NodeId> {
        let s = self.shape(input).to_vec();
        let mut seen = vec![false; s.len()];
        let valid = perm.len() == s.len()
            && perm
                .iter()
                .all(|&p| p < s.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape(
                format!("permute of {}", self.label(input)),
                format!("{perm:?} is not a permutation of the axes of {s:?}"),
            ));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(input);
        }
        let out = perm.iter().map(|&p| s[p]).collect();
        Ok(self.push(
            Op::Permute {
                input,
                perm: perm.to_vec(),
            },
            out,
        ))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &i in inputs {
            let s = self.shape(i);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    format!("concat with {}", self.label(i)),
                    format!("shape {s:?} incompatible with {first:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut out = first;
        out[axis] = total;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            out,
        ))
    }

    pub fn slice(
        &mut self,
        input: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId> {
        self.check_axis("slice", input, axis)?;
        let mut s = self.shape(input).to_vec();
        if len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                format!("slice of {}", self.label(input)),
                format!(
                    "range {start}..{} exceeds axis length {}",
                    start + len,
                    s[axis]
                ),
            ));
        }
        s[axis] = len;
        Ok(self.push(
            Op::Slice {
                input,
                axis,
                start,
                len,
            },
            s,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let s = self.shape(input).to_vec();
        self.push(Op::Relu(input), s)
    }

    pub fn sine(&mut self, input: NodeId) -> NodeId {
        let s = self.shape(input).to_vec();
        self.push(Op::Sine(input), s)
    }

    /// Mean squared error between two same-shaped nodes; scalar output.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.same_shape("mse", pred, target)?;
        Ok(self.push(Op::Mse(pred, target), Vec::new()))
    }

    /// Evaluates every node.
    pub fn forward<'a, T: Real>(&self, bindings: &'a Bindings<'a, T>) -> Result<Evaluation<'a, T>> {
        let mut values: Vec<Cow<'a, Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = |id: NodeId| -> &Tensor<T> { values[id.0].as_ref() };
            let out: Cow<'a, Tensor<T>> = match &node.op {
                Op::Leaf { name, .. } => {
                    let t = bindings
                        .map
                        .get(name)
                        .ok_or_else(|| Error::UnboundLeaf(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::shape(
                            self.label(NodeId(idx)),
                            format!("bound shape {:?}, declared {:?}", t.shape(), node.shape),
                        ));
                    }
                    Cow::Borrowed(match t {
                        Cow::Borrowed(b) => *b,
                        Cow::Owned(o) => o,
                    })
                }
                op => Cow::Owned(eval_op(op, &node.shape, &v)),
            };
            values.push(out);
        }
        Ok(Evaluation { values })
    }

    /// Forward pass then gradients of `loss` with respect to every parameter leaf.
    pub fn backward<'a, T: Real>(
        &self,
        bindings: &'a Bindings<'a, T>,
        loss: NodeId,
    ) -> Result<(Evaluation<'a, T>, HashMap<String, Tensor<T>>)> {
        if !self.shape(loss).is_empty() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let eval = self.forward(bindings)?;
        let grads = self.gradients(&eval, loss);
        Ok((eval, grads))
    }

    fn gradients<T: Real>(
        &self,
        eval: &Evaluation<'_, T>,
        loss: NodeId,
    ) -> HashMap<String, Tensor<T>> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = HashMap::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if let Op::Leaf { name, .. } = &node.op {
                out.insert(
                    name.clone(),
                    Tensor::new(node.shape.clone(), g).expect("gradient shape"),
                );
                continue;
            }
            backprop_op(self, eval, &node.op, &node.shape, &g, &mut grads);
        }
        // parameters not reached by the loss get zero gradients
        for (name, shape) in self.params() {
            out.entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(shape));
        }
        out
    }
}

fn eval_op<'b, T: Real>(
    op: &Op,
    shape: &[usize],
    v: &impl Fn(NodeId) -> &'b Tensor<T>,
) -> Tensor<T> {
    let data: Vec<T> = match op {
        Op::Leaf { .. } => unreachable!(),
        Op::MatMul(a, b) => {
            let (ta, tb) = (v(*a), v(*b));
            let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let mut c = vec![T::zero(); n * m];
            matmul_acc(ta.data(), tb.data(), &mut c, n, k, m);
            c
        }
        Op::Add(a, b) => zip_with(v(*a), v(*b), |x, y| x + y),
        Op::Sub(a, b) => zip_with(v(*a), v(*b), |x, y| x - y),
        Op::Mul(a, b) => zip_with(v(*a), v(*b), |x, y| x * y),
        Op::Scale(a, f) => {
            let f = T::of(*f);
            v(*a).data().iter().map(|&x| x * f).collect()
        }
        Op::Sum { input, axis } => {
            let t = v(*input);
            let (outer, n, inner) = split_at_axis(t.shape(), *axis);
            let mut out = vec![T::zero(); outer * inner];
            let d = t.data();
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (x, &y) in dst.iter_mut().zip(src) {
                        *x = *x + y;
                    }
                }
            }
            out
        }
        Op::Max { input, axis } => {
            let t = v(*input);
            let (outer, n, inner) = split_at_axis(t.shape(), *axis);
            let d = t.data();
            let mut out = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                let base = o * n * inner;
                out.extend_from_slice(&d[base..base + inner]);
                let dst = &mut out[o * inner..(o + 1) * inner];
                for j in 1..n {
                    let src = &d[base + j * inner..base + (j + 1) * inner];
                    for (x, &y) in dst.iter_mut().zip(src) {
                        if y > *x {
                            *x = y;
                        }
                    }
                }
            }
            out
        }
        Op::Broadcast { input, axis, size } => {
            let t = v(*input);
            let s = t.shape();
            let outer = numel(&s[..*axis]);
            let inner = numel(&s[*axis..]);
            let d = t.data();
            let mut out = Vec::with_capacity(outer * size * inner);
            for o in 0..outer {
                let src = &d[o * inner..(o + 1) * inner];
                for _ in 0..*size {
                    out.extend_from_slice(src);
                }
            }
            out
        }
        Op::Reshape(a) => v(*a).data().to_vec(),
        Op::Permute { input, perm } => {
            let t = v(*input);
            permute_data(t.data(), t.shape(), perm)
        }
        Op::Concat { inputs, axis } => {
            let outer = numel(&shape[..*axis]);
            let mut out = Vec::with_capacity(numel(shape));
            for o in 0..outer {
                for &i in inputs {
                    let t = v(i);
                    let chunk = numel(&t.shape()[*axis..]);
                    out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            out
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let t = v(*input);
            let (outer, n, inner) = split_at_axis(t.shape(), *axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let b = (o * n + start) * inner;
                out.extend_from_slice(&t.data()[b..b + len * inner]);
            }
            out
        }
        Op::Relu(a) => v(*a).data().iter().map(|&x| x.max(T::zero())).collect(),
        Op::Sine(a) => v(*a).data().iter().map(|&x| x.sin()).collect(),
        Op::Mse(a, b) => {
            let (ta, tb) = (v(*a), v(*b));
            let s: T = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            vec![s / T::of(ta.len() as f64)]
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape checked at construction")
}

fn zip_with<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], id: NodeId, g: Vec<T>) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop_op<T: Real>(
    graph: &Graph,
    eval: &Evaluation<'_, T>,
    op: &Op,
    shape: &[usize],
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let needs = |id: NodeId| graph.nodes[id.0].needs_grad;
    let val = |id: NodeId| eval.value(id);
    match op {
        Op::Leaf { .. } => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            if needs(*a) {
                let mut ga = vec![T::zero(); n * k];
                matmul_nt_acc(g, tb.data(), &mut ga, n, k, m);
                accumulate(grads, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![T::zero(); k * m];
                matmul_tn_acc(ta.data(), g, &mut gb, n, k, m);
                accumulate(grads, *b, gb);
            }
        }
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if needs(*b) {
                accumulate(grads, *b, g.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if needs(*b) {
                accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let gb: Vec<T> = g.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
                accumulate(grads, *a, gb);
            }
            if needs(*b) {
                let ga: Vec<T> = g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
                accumulate(grads, *b, ga);
            }
        }
        Op::Scale(a, f) => {
            let f = T::of(*f);
            accumulate(grads, *a, g.iter().map(|&x| x * f).collect());
        }
        Op::Sum { input, axis } => {
            let (outer, n, inner) = split_at_axis(graph.shape(*input), *axis);
            let mut gi = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for _ in 0..n {
                    gi.extend_from_slice(src);
                }
            }
            accumulate(grads, *input, gi);
        }
        Op::Max { input, axis } => {
            let t = val(*input);
            let (outer, n, inner) = split_at_axis(t.shape(), *axis);
            let d = t.data();
            let mut gi = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                let base = o * n * inner;
                for i in 0..inner {
                    let mut best = 0;
                    let mut bv = d[base + i];
                    for j in 1..n {
                        let x = d[base + j * inner + i];
                        if x > bv {
                            bv = x;
                            best = j;
                        }
                    }
                    gi[base + best * inner + i] = g[o * inner + i];
                }
            }
            accumulate(grads, *input, gi);
        }
        Op::Broadcast { input, axis, size } => {
            let s = graph.shape(*input);
            let outer = numel(&s[..*axis]);
            let inner = numel(&s[*axis..]);
            let mut gi = vec![T::zero(); outer * inner];
            for o in 0..outer {
                let dst = &mut gi[o * inner..(o + 1) * inner];
                for r in 0..*size {
                    let src = &g[(o * size + r) * inner..(o * size + r + 1) * inner];
                    for (x, &y) in dst.iter_mut().zip(src) {
                        *x = *x + y;
                    }
                }
            }
            accumulate(grads, *input, gi);
        }
        Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        Op::Permute { input, perm } => {
            let gi = permute_data(g, shape, &invert_perm(perm));
            accumulate(grads, *input, gi);
        }
        Op::Concat { inputs, axis } => {
            let outer = numel(&shape[..*axis]);
            let row = numel(&shape[*axis..]);
            let mut offset = 0;
            for &i in inputs {
                let chunk = numel(&graph.shape(i)[*axis..]);
                if needs(i) {
                    let mut gi = Vec::with_capacity(outer * chunk);
                    for o in 0..outer {
                        let b = o * row + offset;
                        gi.extend_from_slice(&g[b..b + chunk]);
                    }
                    accumulate(grads, i, gi);
                }
                offset += chunk;
            }
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let (outer, n, inner) = split_at_axis(graph.shape(*input), *axis);
            let mut gi = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                let b = (o * n + start) * inner;
                gi[b..b + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(grads, *input, gi);
        }
        Op::Relu(a) => {
            let gi = g
                .iter()
                .zip(val(*a).data())
                .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                .collect();
            accumulate(grads, *a, gi);
        }
        Op::Sine(a) => {
            let gi = g
                .iter()
                .zip(val(*a).data())
                .map(|(&x, &y)| x * y.cos())
                .collect();
            accumulate(grads, *a, gi);
        }
        Op::Mse(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let c = T::of(2.0 / ta.len() as f64) * g[0];
            let diff: Vec<T> = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| (x - y) * c)
                .collect();
            if needs(*b) {
                accumulate(grads, *b, diff.iter().map(|&x| -x).collect());
            }
            if needs(*a) {
                accumulate(grads, *a, diff);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_relu_sum_examples() {
        let mut g = Graph::new();
        let a = g.input("a", &[2, 2]).unwrap();
        let b = g.input("b", &[2, 1]).unwrap();
        let c = g.matmul(a, b).unwrap();
        let x = g.input("x", &[3]).unwrap();
        let r = g.relu(x);
        let o = g.input("o", &[3, 4]).unwrap();
        let s = g.sum(o, 0).unwrap();

        let (ta, tb) = (t(&[2, 2], &[1., 2., 3., 4.]), t(&[2, 1], &[1., 1.]));
        let tx = t(&[3], &[-1., 0., 2.]);
        let to = Tensor::ones(&[3, 4]);
        let mut bind = Bindings::new();
        bind.bind("a", &ta)
            .bind("b", &tb)
            .bind("x", &tx)
            .bind("o", &to);
        let ev = g.forward(&bind).unwrap();
        assert_eq!(ev.value(c).data(), &[3., 7.]);
        assert_eq!(ev.value(r).data(), &[0., 0., 2.]);
        assert_eq!(ev.value(s).data(), &[3., 3., 3., 3.]);
    }

    #[test]
    fn unbound_and_mismatched_leaves_error() {
        let mut g = Graph::new();
        let x = g.input("x", &[2]).unwrap();
        g.relu(x);
        let bind = Bindings::<f64>::new();
        assert!(matches!(g.forward(&bind), Err(Error::UnboundLeaf(n)) if n == "x"));
        let bad = Tensor::<f64>::zeros(&[3]);
        let mut bind = Bindings::new();
        bind.bind("x", &bad);
        let err = g.forward(&bind).err().unwrap().to_string();
        assert!(err.contains("leaf `x`"), "{err}");
    }

    #[test]
    fn construction_rejects_implicit_broadcast() {
        let mut g = Graph::new();
        let a = g.input("a", &[2, 3]).unwrap();
        let b = g.input("b", &[3]).unwrap();
        assert!(g.add(a, b).is_err());
        assert!(g.matmul(a, a).is_err());
        assert!(g.sum(b, 1).is_err());
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param("x", &[2]).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq, 0).unwrap();
        let tx = t(&[2], &[1., 2.]);
        let mut b = Bindings::new();
        b.bind("x", &tx);
        let (_, grads) = g.backward(&b, loss).unwrap();
        assert_eq!(grads["x"].data(), &[2., 4.]);
    }

    #[test]
    fn mse_of_linear_map_gradient() {
        // loss = (W x - y)^2 with W = 0, x = 1, y = 1 gives dW = -2
        let mut g = Graph::new();
        let w = g.param("w", &[1, 1]).unwrap();
        let x = g.input("x", &[1, 1]).unwrap();
        let y = g.input("y", &[1, 1]).unwrap();
        let p = g.matmul(x, w).unwrap();
        let loss = g.mse(p, y).unwrap();
        let (tw, tx, ty) = (t(&[1, 1], &[0.]), t(&[1, 1], &[1.]), t(&[1, 1], &[1.]));
        let mut b = Bindings::new();
        b.bind("w", &tw).bind("x", &tx).bind("y", &ty);
        let (_, grads) = g.backward(&b, loss).unwrap();
        assert_eq!(grads["w"].data(), &[-2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param("x", &[2]).unwrap();
        let tx = t(&[2], &[1., 2.]);
        let mut b = Bindings::new();
        b.bind("x", &tx);
        assert!(matches!(g.backward(&b, x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let mut g = Graph::new();
        let x = g.param("x", &[3]).unwrap();
        let m = g.max(x, 0).unwrap();
        let tx = t(&[3], &[1., 5., 5.]);
        let mut b = Bindings::new();
        b.bind("x", &tx);
        let (ev, grads) = g.backward(&b, m).unwrap();
        assert_eq!(ev.value(m).data(), &[5.]);
        assert_eq!(grads["x"].data(), &[0., 1., 0.]);
    }

    #[test]
    fn broadcast_then_sum_scales_by_length() {
        let mut g = Graph::new();
        let x = g.input("x", &[2, 3]).unwrap();
        let bc = g.broadcast(x, 1, 4).unwrap();
        let s = g.sum(bc, 1).unwrap();
        let tx = t(&[2, 3], &[1., -2., 3., 0.5, 7., -1.]);
        let mut b = Bindings::new();
        b.bind("x", &tx);
        let ev = g.forward(&b).unwrap();
        assert_eq!(ev.value(s), &tx.map(|v| 4.0 * v));
    }
}
