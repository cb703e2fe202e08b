//! Equivariant blocks, full weight-space layers, invariant heads and the
//! networks built from them. Everything is expressed as graph construction
//! so the same code serves verification, training and inference.

mod block;
mod dws;
mod plan;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Bindings, Graph, NodeId};
use crate::optim::ParamStore;
use crate::tensor::{Real, Tensor};
use crate::weight_space::{WeightSpaceSpec, WeightSpaceVector};

pub use block::BlockLayer;
pub use dws::{DwsLayer, DwsNet, DwsNetConfig, InvariantHead};
pub use plan::{plan_block, table_count, total_block_count, BlockPlan, PoolMode, Step};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Drawn at initialization.
    Matrix,
    /// Starts at zero.
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

pub fn count_params(specs: &[ParamSpec]) -> usize {
    specs
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum()
}

/// Matrices of shape `(a, b)` get normal entries with standard deviation
/// `mu · sqrt(2b/a) · sqrt(2/(a+b))`; biases are zero.
pub fn init_params<T: Real, R: Rng + ?Sized>(
    specs: &[ParamSpec],
    mu: f64,
    rng: &mut R,
) -> ParamStore<T> {
    let mut out = ParamStore::new();
    for p in specs {
        let n: usize = p.shape.iter().product();
        let data = match p.kind {
            ParamKind::Bias => vec![T::zero(); n],
            ParamKind::Matrix => {
                let (a, b) = (p.shape[0] as f64, p.shape[1] as f64);
                let std = mu * (2.0 * b / a).sqrt() * (2.0 / (a + b)).sqrt();
                (0..n)
                    .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            }
        };
        out.insert(
            p.name.clone(),
            Tensor::new(p.shape.clone(), data).expect("shape from spec"),
        );
    }
    out
}

/// Standard normal draws for every parameter; used by the verifier.
pub fn random_params<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> ParamStore<f64> {
    specs
        .iter()
        .map(|p| {
            let n: usize = p.shape.iter().product();
            let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            (
                p.name.clone(),
                Tensor::new(p.shape.clone(), data).expect("shape from spec"),
            )
        })
        .collect()
}

pub fn dense_specs(name: &str, a: usize, b: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec {
            name: format!("{name}.w"),
            shape: vec![a, b],
            kind: ParamKind::Matrix,
        },
        ParamSpec {
            name: format!("{name}.b"),
            shape: vec![b],
            kind: ParamKind::Bias,
        },
    ]
}

/// Affine map `(B, a) -> (B, b)` with parameters `{name}.w` and `{name}.b`.
pub fn dense(g: &mut Graph, x: NodeId, name: &str, out: usize) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(Error::shape(
            format!("dense `{name}`"),
            format!("expects (B, features), got {s:?}"),
        ));
    }
    let w = g.param(&format!("{name}.w"), &[s[1], out])?;
    let b = g.param(&format!("{name}.b"), &[out])?;
    let y = g.matmul(x, w)?;
    let bb = g.broadcast(b, 0, s[0])?;
    g.add(y, bb)
}

/// Graph leaves `in.W1, in.b1, ...` of shape `(B, f, axes...)`.
pub fn weight_space_inputs(
    g: &mut Graph,
    spec: &WeightSpaceSpec,
    batch: usize,
    f: usize,
) -> Result<Vec<NodeId>> {
    spec.subspaces()
        .into_iter()
        .map(|s| {
            let mut shape = vec![batch, f];
            shape.extend(spec.subspace_shape(s));
            g.input(&format!("in.{s}"), &shape)
        })
        .collect()
}

/// Stacks single-channel flat vectors into the per-sub-space input tensors.
pub fn batch_inputs<T: Real>(
    spec: &WeightSpaceSpec,
    rows: &[&[f64]],
) -> Result<Vec<(String, Tensor<T>)>> {
    let flat = spec.flat_dim();
    if let Some(r) = rows.iter().find(|r| r.len() != flat) {
        return Err(Error::shape(
            "batch",
            format!("row of length {}, expected {flat}", r.len()),
        ));
    }
    spec.subspaces()
        .into_iter()
        .map(|s| {
            let (off, len) = (spec.subspace_offset(s), spec.subspace_len(s));
            let mut data = Vec::with_capacity(rows.len() * len);
            for r in rows {
                data.extend(r[off..off + len].iter().map(|&x| T::of(x)));
            }
            let mut shape = vec![rows.len(), 1];
            shape.extend(spec.subspace_shape(s));
            Ok((format!("in.{s}"), Tensor::new(shape, data)?))
        })
        .collect()
}

/// Input tensors for one multi-channel vector (batch of one).
pub fn vector_inputs(v: &WeightSpaceVector) -> Vec<(String, Tensor<f64>)> {
    v.spec()
        .subspaces()
        .into_iter()
        .map(|s| {
            let t = v.sub(s);
            let mut shape = vec![1];
            shape.extend(t.shape());
            (
                format!("in.{s}"),
                t.clone().reshape(&shape).expect("same size"),
            )
        })
        .collect()
}

fn bind_all<'a>(
    b: &mut Bindings<'a, f64>,
    params: &'a ParamStore<f64>,
    inputs: Vec<(String, Tensor<f64>)>,
) {
    for (name, t) in params {
        b.bind(name.as_str(), t);
    }
    for (name, t) in inputs {
        b.bind_owned(name, t);
    }
}

/// Applies a single block to a sub-space tensor of shape `(f_in, axes...)`.
pub fn block_forward(
    spec: &WeightSpaceSpec,
    block: &BlockLayer,
    params: &ParamStore<f64>,
    mode: PoolMode,
    x: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let mut shape = vec![1];
    shape.extend(x.shape());
    let input = g.input("x", &shape)?;
    let out = block.build(spec, &mut g, input, mode, "block")?;
    let mut b = Bindings::new();
    bind_all(
        &mut b,
        params,
        vec![("x".to_string(), x.clone().reshape(&shape)?)],
    );
    let eval = g.forward(&b)?;
    let y = eval.value(out);
    y.clone().reshape(&y.shape()[1..])
}

/// Applies a full layer to a vector with `layer.f_in` channels.
pub fn dws_forward(
    layer: &DwsLayer,
    params: &ParamStore<f64>,
    v: &WeightSpaceVector,
) -> Result<WeightSpaceVector> {
    if v.channels() != layer.f_in {
        return Err(Error::shape(
            format!("layer `{}`", layer.name),
            format!(
                "input has {} channels, layer expects {}",
                v.channels(),
                layer.f_in
            ),
        ));
    }
    let spec = &layer.spec;
    let mut g = Graph::new();
    let inputs = weight_space_inputs(&mut g, spec, 1, layer.f_in)?;
    let outs = layer.build(&mut g, &inputs)?;
    let mut b = Bindings::new();
    bind_all(&mut b, params, vector_inputs(v));
    let eval = g.forward(&b)?;
    let m = spec.layers();
    let take = |id: NodeId| {
        let t = eval.value(id);
        t.clone().reshape(&t.shape()[1..])
    };
    let weights = (0..m)
        .map(|l| take(outs[2 * l]))
        .collect::<Result<Vec<_>>>()?;
    let biases = (0..m)
        .map(|l| take(outs[2 * l + 1]))
        .collect::<Result<Vec<_>>>()?;
    WeightSpaceVector::from_parts(spec, weights, biases)
}

pub fn invariant_forward(
    head: &InvariantHead,
    params: &ParamStore<f64>,
    v: &WeightSpaceVector,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let inputs = weight_space_inputs(&mut g, &head.spec, 1, head.f)?;
    let out = head.build(&mut g, &inputs)?;
    let mut b = Bindings::new();
    bind_all(&mut b, params, vector_inputs(v));
    let eval = g.forward(&b)?;
    Ok(eval.value(out).data().to_vec())
}

#[cfg(test)]
mod tests;
