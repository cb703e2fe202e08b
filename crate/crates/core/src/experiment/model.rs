use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ModelKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{batch_inputs, count_params, dense, dense_specs, DwsNet, ParamSpec};
use crate::tensor::{Real, Tensor};
use crate::weight_space::WeightSpaceSpec;

/// Fully connected ReLU network on the flattened weight vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpNet {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub out: usize,
}

impl MlpNet {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut a = self.input;
        for (i, &h) in self.hidden.iter().enumerate() {
            out.extend(dense_specs(&format!("fc{i}"), a, h));
            a = h;
        }
        out.extend(dense_specs("out", a, self.out));
        out
    }

    pub fn build(&self, g: &mut Graph, batch: usize) -> Result<NodeId> {
        let mut x = g.input("in.flat", &[batch, self.input])?;
        for (i, &h) in self.hidden.iter().enumerate() {
            x = dense(g, x, &format!("fc{i}"), h)?;
            x = g.relu(x);
        }
        dense(g, x, "out", self.out)
    }
}

/// Parameters of `input -> h -> h -> tail... -> 1`.
pub fn mlp_param_count(input: usize, h: usize, tail: &[usize]) -> usize {
    let mut widths = vec![input, h, h];
    widths.extend(tail);
    widths.push(1);
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Smallest width whose parameter count is closest to `target`; fails when
/// the best is more than 10% off.
pub fn solve_mlp_width(input: usize, tail: &[usize], target: usize) -> Result<usize> {
    let mut best = (usize::MAX, 0, 0);
    for h in 1..=target.max(1) {
        let p = mlp_param_count(input, h, tail);
        let diff = p.abs_diff(target);
        if diff < best.0 {
            best = (diff, h, p);
        }
        if p > target {
            break;
        }
    }
    let (diff, h, p) = best;
    if diff as f64 > 0.1 * target as f64 {
        return Err(Error::CapacityMismatch { target, closest: p });
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Dws(DwsNet),
    Mlp(MlpNet),
}

/// DWSNet from the config, or an MLP with the same depth whose two hidden
/// layers share a width chosen to match the DWSNet's parameter count.
pub fn build_model(
    kind: ModelKind,
    spec: &WeightSpaceSpec,
    config: &ExperimentConfig,
) -> Result<Model> {
    let dws = DwsNet::new(spec, config.network.clone())?;
    if kind == ModelKind::Dws {
        return Ok(Model::Dws(dws));
    }
    let mut tail = vec![config.network.head_dim];
    tail.extend(&config.network.readout);
    let input = spec.flat_dim();
    let h = solve_mlp_width(input, &tail, dws.param_count())?;
    let mut hidden = vec![h; config.network.channels.len()];
    hidden.extend(tail);
    Ok(Model::Mlp(MlpNet {
        input,
        hidden,
        out: config.network.out_dim,
    }))
}

impl Model {
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            Model::Dws(n) => n.param_specs(),
            Model::Mlp(n) => n.param_specs(),
        }
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.param_specs())
    }

    pub fn build(&self, g: &mut Graph, batch: usize) -> Result<NodeId> {
        match self {
            Model::Dws(n) => n.build(g, batch),
            Model::Mlp(n) => n.build(g, batch),
        }
    }

    /// Leaf bindings for a batch of flat single-channel vectors.
    pub fn inputs<T: Real>(
        &self,
        spec: &WeightSpaceSpec,
        rows: &[&[f64]],
    ) -> Result<Vec<(String, Tensor<T>)>> {
        match self {
            Model::Dws(_) => batch_inputs(spec, rows),
            Model::Mlp(n) => {
                let mut data = Vec::with_capacity(rows.len() * n.input);
                for r in rows {
                    if r.len() != n.input {
                        return Err(Error::shape(
                            "batch",
                            format!("row of length {}, expected {}", r.len(), n.input),
                        ));
                    }
                    data.extend(r.iter().map(|&x| T::of(x)));
                }
                Ok(vec![(
                    "in.flat".to_string(),
                    Tensor::new(vec![rows.len(), n.input], data)?,
                )])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{table_count, DwsNetConfig};
    use crate::symmetry::orbit_count;

    fn spec(d: &str) -> WeightSpaceSpec {
        WeightSpaceSpec::parse(d).unwrap()
    }

    /// Channel-mixing weights for every block, a bias per output channel and
    /// orbit, the head and the readout, all from the closed-form counts.
    fn analytic_dws_count(s: &WeightSpaceSpec, c: &DwsNetConfig) -> usize {
        let subs = s.subspaces();
        let blocks: usize = subs
            .iter()
            .flat_map(|&a| subs.iter().map(move |&b| table_count(s, a, b)))
            .sum();
        let o = orbit_count(s);
        let mut total = 0;
        let mut f = 1;
        for &ch in &c.channels {
            total += f * ch * blocks + ch * o;
            f = ch;
        }
        let mut width = c.head_dim;
        total += f * o * width + width;
        for &w in &c.readout {
            total += width * w + w;
            width = w;
        }
        total + width * c.out_dim + c.out_dim
    }

    #[test]
    fn dws_count_matches_closed_form() {
        let c = ExperimentConfig::default();
        for d in ["1,16,16,1", "2,3,3,2", "1,32,32,1"] {
            let s = spec(d);
            let m = build_model(ModelKind::Dws, &s, &c).unwrap();
            assert_eq!(m.param_count(), analytic_dws_count(&s, &c.network), "{d}");
        }
    }

    #[test]
    fn mlp_capacity_is_matched() {
        let s = spec("1,16,16,1");
        let c = ExperimentConfig::default();
        let target = build_model(ModelKind::Dws, &s, &c).unwrap().param_count();
        for kind in [ModelKind::Mlp, ModelKind::MlpPermAug] {
            let m = build_model(kind, &s, &c).unwrap();
            let p = m.param_count();
            assert!(
                (p as f64 - target as f64).abs() / target as f64 <= 0.1,
                "{p} vs {target}"
            );
            let Model::Mlp(net) = &m else { panic!() };
            assert_eq!(net.input, 321);
            assert_eq!(net.hidden.len(), 4);
            assert_eq!(&net.hidden[2..], &[32, 32]);
        }
        assert_eq!(
            build_model(ModelKind::Mlp, &s, &c).unwrap(),
            build_model(ModelKind::MlpPermAug, &s, &c).unwrap()
        );
    }

    #[test]
    fn width_search() {
        assert_eq!(mlp_param_count(10, 2, &[]), 10 * 2 + 2 + 2 * 2 + 2 + 2 + 1);
        let h = solve_mlp_width(10, &[], 1000).unwrap();
        let best = (1..200)
            .min_by_key(|&w| mlp_param_count(10, w, &[]).abs_diff(1000))
            .unwrap();
        assert_eq!(h, best);
        assert!(matches!(
            solve_mlp_width(1000, &[], 50),
            Err(Error::CapacityMismatch { target: 50, .. })
        ));
    }
}
