use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::weight_space::{Subspace, WeightSpaceSpec};

use super::plan::{plan_block, BlockPlan, PoolMode};
use super::{ParamKind, ParamSpec};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Ax {
    Batch,
    Chan,
    Pos(usize),
}

fn position(cur: &[Ax], a: Ax) -> usize {
    cur.iter().position(|&c| c == a).expect("axis is tracked")
}

pub(crate) fn pool(g: &mut Graph, x: NodeId, axis: usize, mode: PoolMode) -> Result<NodeId> {
    match mode {
        PoolMode::Sum => g.sum(x, axis),
        PoolMode::Max => g.max(x, axis),
    }
}

/// Equivariant map between two sub-spaces with `f_in` input and `f_out`
/// output channels. Each term of the plan owns a dense matrix of shape
/// `(f_in · Π free_in, f_out · Π free_out)`, features ordered channel first.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayer {
    pub plan: BlockPlan,
    pub f_in: usize,
    pub f_out: usize,
}

impl BlockLayer {
    pub fn new(
        spec: &WeightSpaceSpec,
        from: Subspace,
        to: Subspace,
        f_in: usize,
        f_out: usize,
    ) -> Self {
        BlockLayer {
            plan: plan_block(spec, from, to),
            f_in,
            f_out,
        }
    }

    pub fn from(&self) -> Subspace {
        self.plan.from
    }

    pub fn to(&self) -> Subspace {
        self.plan.to
    }

    pub fn param_count(&self) -> usize {
        self.plan.count * self.f_in * self.f_out
    }

    /// Term `mask` pools the shared axes whose bit is set.
    pub fn param_name(&self, prefix: &str, mask: usize) -> String {
        format!("{prefix}.{}>{}.{mask}", self.plan.from, self.plan.to)
    }

    pub fn param_specs(&self, spec: &WeightSpaceSpec, prefix: &str) -> Vec<ParamSpec> {
        let shape = vec![
            self.f_in * self.plan.features_in(spec),
            self.f_out * self.plan.features_out(spec),
        ];
        (0..self.plan.terms())
            .map(|mask| ParamSpec {
                name: self.param_name(prefix, mask),
                shape: shape.clone(),
                kind: ParamKind::Matrix,
            })
            .collect()
    }

    /// `x` has shape `(B, f_in, axes of from...)`; the result has shape
    /// `(B, f_out, axes of to...)`.
    pub fn build(
        &self,
        spec: &WeightSpaceSpec,
        g: &mut Graph,
        x: NodeId,
        mode: PoolMode,
        prefix: &str,
    ) -> Result<NodeId> {
        let plan = &self.plan;
        let in_shape = g.shape(x).to_vec();
        let mut want = vec![in_shape.first().copied().unwrap_or(0), self.f_in];
        want.extend(spec.subspace_shape(plan.from));
        if in_shape != want {
            return Err(Error::shape(
                format!("block {}->{}", plan.from, plan.to),
                format!("input shape {in_shape:?}, expected {want:?}"),
            ));
        }
        let batch = in_shape[0];
        let mut cur: Vec<Ax> = vec![Ax::Batch, Ax::Chan];
        cur.extend(plan.from.axes().into_iter().map(Ax::Pos));
        let mut node = x;

        for &p in &plan.pooled {
            let i = position(&cur, Ax::Pos(p));
            node = pool(g, node, i, mode)?;
            cur.remove(i);
        }

        let mut order = vec![Ax::Batch];
        order.extend(plan.shared.iter().map(|&p| Ax::Pos(p)));
        order.push(Ax::Chan);
        order.extend(plan.free_in.iter().map(|&p| Ax::Pos(p)));
        let perm: Vec<usize> = order.iter().map(|&a| position(&cur, a)).collect();
        node = g.permute(node, &perm)?;

        let sdims: Vec<usize> = plan.shared.iter().map(|&p| spec.dim(p)).collect();
        let fin = self.f_in * plan.features_in(spec);
        let fout = self.f_out * plan.features_out(spec);
        let mut shape = vec![batch];
        shape.extend(&sdims);
        shape.push(fin);
        node = g.reshape(node, &shape)?;

        let k = sdims.len();
        let mut terms = Vec::with_capacity(1 << k);
        for mask in 0..(1usize << k) {
            let mut t = node;
            for q in (0..k).rev() {
                if mask >> q & 1 == 1 {
                    t = pool(g, t, 1 + q, mode)?;
                }
            }
            let kept: Vec<usize> = (0..k)
                .filter(|q| mask >> q & 1 == 0)
                .map(|q| sdims[q])
                .collect();
            let rows = batch * kept.iter().product::<usize>();
            t = g.reshape(t, &[rows, fin])?;
            let w = g.param(&self.param_name(prefix, mask), &[fin, fout])?;
            t = g.matmul(t, w)?;
            let mut s = vec![batch];
            s.extend(&kept);
            s.push(fout);
            t = g.reshape(t, &s)?;
            for q in 0..k {
                if mask >> q & 1 == 1 {
                    t = g.broadcast(t, 1 + q, sdims[q])?;
                }
            }
            terms.push(t);
        }
        node = g.add_all(&terms)?;

        let mut shape = vec![batch];
        shape.extend(&sdims);
        shape.push(self.f_out);
        shape.extend(plan.free_out.iter().map(|&p| spec.dim(p)));
        node = g.reshape(node, &shape)?;
        let mut cur = vec![Ax::Batch];
        cur.extend(plan.shared.iter().map(|&p| Ax::Pos(p)));
        cur.push(Ax::Chan);
        cur.extend(plan.free_out.iter().map(|&p| Ax::Pos(p)));
        for &p in &plan.broadcast {
            node = g.broadcast(node, cur.len(), spec.dim(p))?;
            cur.push(Ax::Pos(p));
        }
        let mut order = vec![Ax::Batch, Ax::Chan];
        order.extend(plan.to.axes().into_iter().map(Ax::Pos));
        let perm: Vec<usize> = order.iter().map(|&a| position(&cur, a)).collect();
        g.permute(node, &perm)
    }
}

/// Bias constant on each orbit of `t`: one value per output channel and per
/// combination of free indices, broadcast over the set axes.
pub(crate) fn orbit_bias_spec(
    spec: &WeightSpaceSpec,
    t: Subspace,
    f_out: usize,
    prefix: &str,
) -> ParamSpec {
    let free: usize = t
        .axes()
        .into_iter()
        .filter(|&k| !spec.is_set_index(k))
        .map(|k| spec.dim(k))
        .product();
    ParamSpec {
        name: format!("{prefix}.bias.{t}"),
        shape: vec![f_out, free],
        kind: ParamKind::Bias,
    }
}

/// Adds the orbit bias of `t` to `x` of shape `(B, f_out, axes of t...)`.
pub(crate) fn add_orbit_bias(
    spec: &WeightSpaceSpec,
    g: &mut Graph,
    x: NodeId,
    t: Subspace,
    f_out: usize,
    prefix: &str,
) -> Result<NodeId> {
    let ps = orbit_bias_spec(spec, t, f_out, prefix);
    let b = g.param(&ps.name, &ps.shape)?;
    let axes = t.axes();
    let mut shape = vec![f_out];
    shape.extend(
        axes.iter()
            .filter(|&&k| !spec.is_set_index(k))
            .map(|&k| spec.dim(k)),
    );
    let mut node = g.reshape(b, &shape)?;
    for (i, &k) in axes.iter().enumerate() {
        if spec.is_set_index(k) {
            node = g.broadcast(node, 1 + i, spec.dim(k))?;
        }
    }
    let batch = g.shape(x)[0];
    node = g.broadcast(node, 0, batch)?;
    g.add(x, node)
}
