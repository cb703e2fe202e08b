//! Construction of the equivariant blocks between sub-spaces.
//!
//! Every axis of a sub-space is indexed by a layer position. Positions
//! `1..M-1` are set indices (permuted by the group); `0` and `M` are free.
//! A block `s -> t` is assembled from these rules:
//!
//! * a set position present in both `s` and `t` is shared; each shared axis
//!   contributes an identity term and a pool-then-broadcast term (DeepSets
//!   for one shared axis, Hartford for two);
//! * unshared set axes of the input are pooled;
//! * free axes of the input and output are absorbed into the feature
//!   dimension of a dense map;
//! * unshared set axes of the output are broadcast.
//!
//! The parameter count for one input and one output channel is therefore
//! `2^{#shared} · Π d(free in) · Π d(free out)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weight_space::{Subspace, WeightSpaceSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Sum,
    Max,
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolMode::Sum => "sum",
            PoolMode::Max => "max",
        })
    }
}

impl std::str::FromStr for PoolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PoolMode::Sum),
            "max" => Ok(PoolMode::Max),
            _ => Err(Error::Config(format!("unknown pooling mode `{s}`"))),
        }
    }
}

/// One primitive of a block. Axes are named by layer position; feature
/// sizes are for a single channel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Pool {
        axis: usize,
    },
    Dense {
        in_size: usize,
        out_size: usize,
    },
    DeepSets {
        axis: usize,
        in_features: usize,
        out_features: usize,
    },
    Hartford {
        axes: (usize, usize),
        in_features: usize,
        out_features: usize,
    },
    Broadcast {
        axis: usize,
        size: usize,
    },
}

impl Step {
    pub fn param_count(&self) -> usize {
        match *self {
            Step::Dense { in_size, out_size } => in_size * out_size,
            Step::DeepSets {
                in_features,
                out_features,
                ..
            } => 2 * in_features * out_features,
            Step::Hartford {
                in_features,
                out_features,
                ..
            } => 4 * in_features * out_features,
            Step::Pool { .. } | Step::Broadcast { .. } => 0,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Pool { axis } => write!(f, "POOL(d{axis})"),
            Step::Dense { in_size, out_size } => write!(f, "LIN({in_size},{out_size})"),
            Step::DeepSets {
                axis,
                in_features,
                out_features,
            } => write!(f, "DS[d{axis}]({in_features},{out_features})"),
            Step::Hartford {
                axes,
                in_features,
                out_features,
            } => write!(
                f,
                "HAR[d{},d{}]({in_features},{out_features})",
                axes.0, axes.1
            ),
            Step::Broadcast { axis, size } => write!(f, "BC(d{axis}={size})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub from: Subspace,
    pub to: Subspace,
    /// Set positions present in both sub-spaces, ascending.
    pub shared: Vec<usize>,
    /// Set positions of the input that are pooled away.
    pub pooled: Vec<usize>,
    /// Set positions of the output created by broadcasting.
    pub broadcast: Vec<usize>,
    /// Free positions of the input, in axis order.
    pub free_in: Vec<usize>,
    /// Free positions of the output, in axis order.
    pub free_out: Vec<usize>,
    pub steps: Vec<Step>,
    /// Parameters for one input and one output channel.
    pub count: usize,
}

pub fn plan_block(spec: &WeightSpaceSpec, from: Subspace, to: Subspace) -> BlockPlan {
    let ax_in = from.axes();
    let ax_out = to.axes();
    let set = |k: &usize| spec.is_set_index(*k);
    let mut shared: Vec<usize> = ax_in
        .iter()
        .filter(|k| set(k) && ax_out.contains(k))
        .copied()
        .collect();
    shared.sort_unstable();
    let pooled: Vec<usize> = ax_in
        .iter()
        .filter(|k| set(k) && !shared.contains(k))
        .copied()
        .collect();
    let broadcast: Vec<usize> = ax_out
        .iter()
        .filter(|k| set(k) && !shared.contains(k))
        .copied()
        .collect();
    let free_in: Vec<usize> = ax_in.iter().filter(|k| !set(k)).copied().collect();
    let free_out: Vec<usize> = ax_out.iter().filter(|k| !set(k)).copied().collect();
    let fi: usize = free_in.iter().map(|&k| spec.dim(k)).product();
    let fo: usize = free_out.iter().map(|&k| spec.dim(k)).product();

    let mut steps: Vec<Step> = pooled.iter().map(|&axis| Step::Pool { axis }).collect();
    steps.push(match shared.as_slice() {
        [] => Step::Dense {
            in_size: fi,
            out_size: fo,
        },
        &[axis] => Step::DeepSets {
            axis,
            in_features: fi,
            out_features: fo,
        },
        &[a, b] => Step::Hartford {
            axes: (b, a),
            in_features: fi,
            out_features: fo,
        },
        _ => unreachable!("a sub-space has at most two axes"),
    });
    steps.extend(broadcast.iter().map(|&axis| Step::Broadcast {
        axis,
        size: spec.dim(axis),
    }));
    let count = steps.iter().map(Step::param_count).sum();
    BlockPlan {
        from,
        to,
        shared,
        pooled,
        broadcast,
        free_in,
        free_out,
        steps,
        count,
    }
}

impl BlockPlan {
    /// Follows the working shape (set axes, feature size) through the steps
    /// and checks that each step accepts what the previous one produced.
    pub fn check_composition(&self, spec: &WeightSpaceSpec) -> Result<()> {
        let bad = |msg: String| Error::shape(format!("block {}->{}", self.from, self.to), msg);
        let mut axes: Vec<usize> = self
            .from
            .axes()
            .into_iter()
            .filter(|&k| spec.is_set_index(k))
            .collect();
        let mut features: usize = self.free_in.iter().map(|&k| spec.dim(k)).product();
        for step in &self.steps {
            match *step {
                Step::Pool { axis } => {
                    let i = axes
                        .iter()
                        .position(|&a| a == axis)
                        .ok_or_else(|| bad(format!("{step}: axis absent")))?;
                    axes.remove(i);
                }
                Step::Dense { in_size, out_size } => {
                    if in_size != features {
                        return Err(bad(format!("{step}: got {features} features")));
                    }
                    features = out_size;
                }
                Step::DeepSets {
                    axis,
                    in_features,
                    out_features,
                } => {
                    if !axes.contains(&axis) || in_features != features {
                        return Err(bad(format!(
                            "{step}: input axes {axes:?}, {features} features"
                        )));
                    }
                    features = out_features;
                }
                Step::Hartford {
                    axes: (a, b),
                    in_features,
                    out_features,
                } => {
                    if !axes.contains(&a) || !axes.contains(&b) || in_features != features {
                        return Err(bad(format!(
                            "{step}: input axes {axes:?}, {features} features"
                        )));
                    }
                    features = out_features;
                }
                Step::Broadcast { axis, size } => {
                    if axes.contains(&axis) || size != spec.dim(axis) {
                        return Err(bad(format!("{step}: axis already present or wrong size")));
                    }
                    axes.push(axis);
                }
            }
        }
        let mut want: Vec<usize> = self
            .to
            .axes()
            .into_iter()
            .filter(|&k| spec.is_set_index(k))
            .collect();
        want.sort_unstable();
        axes.sort_unstable();
        let fo: usize = self.free_out.iter().map(|&k| spec.dim(k)).product();
        if axes != want || features != fo {
            return Err(bad(format!(
                "ends with axes {axes:?} and {features} features"
            )));
        }
        Ok(())
    }

    /// Number of terms (one dense matrix each): `2^{#shared}`.
    pub fn terms(&self) -> usize {
        1 << self.shared.len()
    }

    pub fn features_in(&self, spec: &WeightSpaceSpec) -> usize {
        self.free_in.iter().map(|&k| spec.dim(k)).product()
    }

    pub fn features_out(&self, spec: &WeightSpaceSpec) -> usize {
        self.free_out.iter().map(|&k| spec.dim(k)).product()
    }

    pub fn describe(&self) -> String {
        self.steps
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

/// Parameter count of the block `from -> to` (one channel each way), read
/// row by row from the published block tables rather than derived.
pub fn table_count(spec: &WeightSpaceSpec, from: Subspace, to: Subspace) -> usize {
    use Subspace::{Bias as B, Weight as W};
    let m = spec.layers();
    let (d0, dm) = (spec.dim(0), spec.dim(m));
    match (from, to) {
        // weight to weight, W_j -> W_i
        (W(j), W(i)) => {
            if i == j {
                if i == 1 {
                    2 * d0 * d0
                } else if i == m {
                    2 * dm * dm
                } else {
                    4
                }
            } else if m == 2 {
                2 * d0 * dm
            } else if j == i + 1 {
                if i == 1 {
                    2 * d0
                } else if i == m - 1 {
                    2 * dm
                } else {
                    2
                }
            } else if i == j + 1 {
                if j == 1 {
                    2 * d0
                } else if i == m {
                    2 * dm
                } else {
                    2
                }
            } else if j > i {
                match (i == 1, j == m) {
                    (true, false) => d0,
                    (true, true) => d0 * dm,
                    (false, true) => dm,
                    (false, false) => 1,
                }
            } else {
                match (j == 1, i == m) {
                    (true, false) => d0,
                    (true, true) => d0 * dm,
                    (false, true) => dm,
                    (false, false) => 1,
                }
            }
        }
        // bias to bias, B_j -> B_i
        (B(j), B(i)) => {
            if i == j {
                if i < m {
                    2
                } else {
                    dm * dm
                }
            } else if i < j {
                if j == m {
                    dm
                } else {
                    1
                }
            } else if i == m {
                dm
            } else {
                1
            }
        }
        // weight to bias, W_j -> B_i
        (W(j), B(i)) => {
            if i == j {
                if i == 1 {
                    2 * d0
                } else if i < m {
                    2
                } else {
                    dm * dm
                }
            } else if j == i + 1 {
                if j < m {
                    2
                } else {
                    2 * dm
                }
            } else if j > i + 1 {
                if j < m {
                    1
                } else {
                    dm
                }
            } else if j == 1 {
                if i < m {
                    d0
                } else {
                    d0 * dm
                }
            } else if i == m {
                dm
            } else {
                1
            }
        }
        // bias to weight, B_j -> W_i
        (B(j), W(i)) => {
            if i == j {
                if i == 1 {
                    2 * d0
                } else if i < m {
                    2
                } else {
                    dm * dm
                }
            } else if i == j + 1 {
                if i < m {
                    2
                } else {
                    2 * dm
                }
            } else if j < i {
                if i < m {
                    1
                } else {
                    dm
                }
            } else {
                match (i == 1, j == m) {
                    (true, false) => d0,
                    (true, true) => dm * d0,
                    (false, true) => dm,
                    (false, false) => 1,
                }
            }
        }
    }
}

/// `Σ` of the block counts over all ordered sub-space pairs.
pub fn total_block_count(spec: &WeightSpaceSpec) -> usize {
    let subs = spec.subspaces();
    subs.iter()
        .flat_map(|&s| subs.iter().map(move |&t| (s, t)))
        .map(|(s, t)| plan_block(spec, s, t).count)
        .sum()
}
