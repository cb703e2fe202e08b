use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::symmetry::orbit_count;
use crate::weight_space::WeightSpaceSpec;

use super::block::{add_orbit_bias, orbit_bias_spec, pool, BlockLayer};
use super::plan::PoolMode;
use super::{count_params, dense, dense_specs, weight_space_inputs, ParamKind, ParamSpec};

/// Affine equivariant map `V^{f_in} -> V^{f_out}`: every ordered pair of
/// sub-spaces gets its own block, block outputs are summed per target and
/// an orbit-constant bias is added.
#[derive(Clone, Debug, PartialEq)]
pub struct DwsLayer {
    pub spec: WeightSpaceSpec,
    pub f_in: usize,
    pub f_out: usize,
    pub pool: PoolMode,
    pub name: String,
    /// Row-major over (target, source) in canonical sub-space order.
    pub blocks: Vec<BlockLayer>,
}

impl DwsLayer {
    pub fn new(
        spec: &WeightSpaceSpec,
        f_in: usize,
        f_out: usize,
        pool: PoolMode,
        name: &str,
    ) -> Self {
        let subs = spec.subspaces();
        let blocks = subs
            .iter()
            .flat_map(|&t| subs.iter().map(move |&s| (s, t)))
            .map(|(s, t)| BlockLayer::new(spec, s, t, f_in, f_out))
            .collect();
        DwsLayer {
            spec: spec.clone(),
            f_in,
            f_out,
            pool,
            name: name.to_string(),
            blocks,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out: Vec<ParamSpec> = self
            .blocks
            .iter()
            .flat_map(|b| b.param_specs(&self.spec, &self.name))
            .collect();
        out.extend(
            self.spec
                .subspaces()
                .into_iter()
                .map(|t| orbit_bias_spec(&self.spec, t, self.f_out, &self.name)),
        );
        out
    }

    /// `f_in · f_out · Σ block counts + f_out · O`.
    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(BlockLayer::param_count)
            .sum::<usize>()
            + self.f_out * orbit_count(&self.spec)
    }

    /// `inputs` holds one node per sub-space in canonical order.
    pub fn build(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let subs = self.spec.subspaces();
        if inputs.len() != subs.len() {
            return Err(Error::shape(
                format!("layer `{}`", self.name),
                format!("{} inputs for {} sub-spaces", inputs.len(), subs.len()),
            ));
        }
        let n = subs.len();
        let mut outs = Vec::with_capacity(n);
        for (ti, &t) in subs.iter().enumerate() {
            let mut terms = Vec::with_capacity(n);
            for (si, block) in self.blocks[ti * n..(ti + 1) * n].iter().enumerate() {
                terms.push(block.build(&self.spec, g, inputs[si], self.pool, &self.name)?);
            }
            let sum = g.add_all(&terms)?;
            outs.push(add_orbit_bias(
                &self.spec, g, sum, t, self.f_out, &self.name,
            )?);
        }
        Ok(outs)
    }
}

/// Pools every sub-space over its set axes, concatenates the per-orbit
/// features (`O · f` of them) and applies an affine map to `k` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantHead {
    pub spec: WeightSpaceSpec,
    pub f: usize,
    pub k: usize,
    pub pool: PoolMode,
    pub name: String,
}

impl InvariantHead {
    pub fn new(spec: &WeightSpaceSpec, f: usize, k: usize, pool: PoolMode, name: &str) -> Self {
        InvariantHead {
            spec: spec.clone(),
            f,
            k,
            pool,
            name: name.to_string(),
        }
    }

    pub fn pooled_len(&self) -> usize {
        orbit_count(&self.spec) * self.f
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        dense_specs(&self.name, self.pooled_len(), self.k)
    }

    /// Invariant features `(B, O·f)`: per sub-space, channel-major then by
    /// free index.
    pub fn build_pooled(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<NodeId> {
        let mut parts = Vec::new();
        for (s, &x) in self.spec.subspaces().into_iter().zip(inputs) {
            let axes = s.axes();
            let mut node = x;
            for (i, &k) in axes.iter().enumerate().rev() {
                if self.spec.is_set_index(k) {
                    node = pool(g, node, 2 + i, self.pool)?;
                }
            }
            let shape = g.shape(node).to_vec();
            let width: usize = shape[1..].iter().product();
            parts.push(g.reshape(node, &[shape[0], width])?);
        }
        g.concat(&parts, 1)
    }

    pub fn build(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<NodeId> {
        let pooled = self.build_pooled(g, inputs)?;
        dense(g, pooled, &self.name, self.k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DwsNetConfig {
    /// Output channels of each equivariant layer.
    pub channels: Vec<usize>,
    pub pool: PoolMode,
    /// Width of the invariant head.
    pub head_dim: usize,
    /// Hidden widths of the ReLU readout after the head.
    pub readout: Vec<usize>,
    pub out_dim: usize,
}

impl Default for DwsNetConfig {
    fn default() -> Self {
        DwsNetConfig {
            channels: vec![8, 8],
            pool: PoolMode::Max,
            head_dim: 32,
            readout: vec![32],
            out_dim: 1,
        }
    }
}

/// Equivariant layers with ReLU in between, then an invariant head and a
/// ReLU readout.
#[derive(Clone, Debug, PartialEq)]
pub struct DwsNet {
    pub spec: WeightSpaceSpec,
    pub config: DwsNetConfig,
    pub layers: Vec<DwsLayer>,
    pub head: InvariantHead,
}

impl DwsNet {
    pub fn new(spec: &WeightSpaceSpec, config: DwsNetConfig) -> Result<Self> {
        if config.channels.is_empty()
            || config.channels.contains(&0)
            || config.head_dim == 0
            || config.out_dim == 0
        {
            return Err(Error::Config(format!("invalid network widths {config:?}")));
        }
        let mut f = 1;
        let mut layers = Vec::new();
        for (i, &c) in config.channels.iter().enumerate() {
            layers.push(DwsLayer::new(spec, f, c, config.pool, &format!("dws{i}")));
            f = c;
        }
        let head = InvariantHead::new(spec, f, config.head_dim, config.pool, "head");
        Ok(DwsNet {
            spec: spec.clone(),
            config,
            layers,
            head,
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out: Vec<ParamSpec> = self.layers.iter().flat_map(DwsLayer::param_specs).collect();
        out.extend(self.head.param_specs());
        let mut width = self.config.head_dim;
        for (i, &w) in self.config.readout.iter().enumerate() {
            out.extend(dense_specs(&format!("readout{i}"), width, w));
            width = w;
        }
        out.extend(dense_specs("out", width, self.config.out_dim));
        out
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.param_specs())
    }

    /// Equivariant trunk: features after the last layer's ReLU.
    pub fn build_trunk(&self, g: &mut Graph, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut xs = inputs.to_vec();
        for layer in &self.layers {
            xs = layer
                .build(g, &xs)?
                .into_iter()
                .map(|x| g.relu(x))
                .collect();
        }
        Ok(xs)
    }

    /// Graph for a batch of `batch` single-channel inputs; returns the
    /// `(B, out_dim)` prediction node.
    pub fn build(&self, g: &mut Graph, batch: usize) -> Result<NodeId> {
        let inputs = weight_space_inputs(g, &self.spec, batch, 1)?;
        let trunk = self.build_trunk(g, &inputs)?;
        let mut x = self.head.build(g, &trunk)?;
        for (i, &w) in self.config.readout.iter().enumerate() {
            x = g.relu(x);
            x = dense(g, x, &format!("readout{i}"), w)?;
        }
        x = g.relu(x);
        dense(g, x, "out", self.config.out_dim)
    }
}

impl ParamSpec {
    pub fn is_matrix(&self) -> bool {
        self.kind == ParamKind::Matrix
    }
}
