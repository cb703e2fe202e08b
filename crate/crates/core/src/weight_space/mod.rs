//! The weight space of an M-layer MLP and the permutation action on it.
//!
//! A vector holds `W_m` with shape `(f, d_m, d_{m-1})` and `b_m` with shape
//! `(f, d_m)` for `m = 1..=M`. The canonical flat order is
//! `W_1, b_1, ..., W_M, b_M`; inside each sub-space the channel axis leads
//! and the rest is row-major.

mod action;
pub mod dataset;
mod normalize;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use action::{apply_action, permute_subspace, GroupElement, Permutation};
pub use normalize::{NormalizationStats, DEFAULT_STD_FLOOR};

/// Layer dimensions `d_0..d_M` of an MLP, with `M >= 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct WeightSpaceSpec {
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    dims: Vec<usize>,
}

impl TryFrom<SpecRepr> for WeightSpaceSpec {
    type Error = Error;
    fn try_from(r: SpecRepr) -> Result<Self> {
        WeightSpaceSpec::new(r.dims)
    }
}

impl From<WeightSpaceSpec> for SpecRepr {
    fn from(s: WeightSpaceSpec) -> Self {
        SpecRepr { dims: s.dims }
    }
}

/// One summand of the weight space: `Weight(m)` is `W_m`, `Bias(m)` is `b_m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subspace {
    Weight(usize),
    Bias(usize),
}

impl Subspace {
    pub fn layer(self) -> usize {
        match self {
            Subspace::Weight(m) | Subspace::Bias(m) => m,
        }
    }

    /// Layer positions indexing each non-channel axis.
    pub fn axes(self) -> Vec<usize> {
        match self {
            Subspace::Weight(m) => vec![m, m - 1],
            Subspace::Bias(m) => vec![m],
        }
    }
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subspace::Weight(m) => write!(f, "W{m}"),
            Subspace::Bias(m) => write!(f, "b{m}"),
        }
    }
}

impl FromStr for Subspace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad sub-space id `{s}` (expected W<m> or b<m>)"));
        let (head, rest) = s.split_at(1.min(s.len()));
        let m: usize = rest.parse().map_err(|_| bad())?;
        match head {
            "W" | "w" => Ok(Subspace::Weight(m)),
            "b" | "B" => Ok(Subspace::Bias(m)),
            _ => Err(bad()),
        }
    }
}

impl WeightSpaceSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 3 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layers (3 dims), got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidSpec(format!("zero dimension in {dims:?}")));
        }
        Ok(WeightSpaceSpec { dims })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let dims = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidSpec(format!("bad dimension `{t}` in `{text}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims)
    }

    /// Number of layers `M`.
    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// Hidden positions `1..M-1` are permuted by the group; `0` and `M` are fixed.
    pub fn is_set_index(&self, k: usize) -> bool {
        k >= 1 && k < self.layers()
    }

    /// Sub-spaces in canonical order `W_1, b_1, ..., W_M, b_M`.
    pub fn subspaces(&self) -> Vec<Subspace> {
        (1..=self.layers())
            .flat_map(|m| [Subspace::Weight(m), Subspace::Bias(m)])
            .collect()
    }

    pub fn contains(&self, s: Subspace) -> bool {
        (1..=self.layers()).contains(&s.layer())
    }

    pub fn subspace_shape(&self, s: Subspace) -> Vec<usize> {
        s.axes().into_iter().map(|k| self.dims[k]).collect()
    }

    /// Number of scalar coordinates of one channel of `s`.
    pub fn subspace_len(&self, s: Subspace) -> usize {
        self.subspace_shape(s).iter().product()
    }

    /// Offset of `s` inside a single-channel flat vector.
    pub fn subspace_offset(&self, s: Subspace) -> usize {
        self.subspaces()
            .into_iter()
            .take_while(|&t| t != s)
            .map(|t| self.subspace_len(t))
            .sum()
    }

    /// Total flat dimension of one channel, `Σ_m d_m d_{m-1} + d_m`.
    pub fn flat_dim(&self) -> usize {
        (1..=self.layers())
            .map(|m| self.dims[m] * self.dims[m - 1] + self.dims[m])
            .sum()
    }
}

impl fmt::Display for WeightSpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpaceVector {
    spec: WeightSpaceSpec,
    channels: usize,
    weights: Vec<Tensor<f64>>,
    biases: Vec<Tensor<f64>>,
}

impl WeightSpaceVector {
    pub fn zeros(spec: &WeightSpaceSpec, channels: usize) -> Self {
        let m = spec.layers();
        let weights = (1..=m)
            .map(|l| Tensor::zeros(&[channels, spec.dim(l), spec.dim(l - 1)]))
            .collect();
        let biases = (1..=m)
            .map(|l| Tensor::zeros(&[channels, spec.dim(l)]))
            .collect();
        WeightSpaceVector {
            spec: spec.clone(),
            channels,
            weights,
            biases,
        }
    }

    /// Standard normal entries.
    pub fn random(spec: &WeightSpaceSpec, channels: usize, rng: &mut impl Rng) -> Self {
        let mut v = Self::zeros(spec, channels);
        for t in v.weights.iter_mut().chain(v.biases.iter_mut()) {
            for x in t.data_mut() {
                *x = rng.sample(StandardNormal);
            }
        }
        v
    }

    pub fn from_parts(
        spec: &WeightSpaceSpec,
        weights: Vec<Tensor<f64>>,
        biases: Vec<Tensor<f64>>,
    ) -> Result<Self> {
        let m = spec.layers();
        if weights.len() != m || biases.len() != m {
            return Err(Error::shape(
                "weight-space vector",
                format!(
                    "expected {m} weights and biases, got {} and {}",
                    weights.len(),
                    biases.len()
                ),
            ));
        }
        let channels = weights[0].shape().first().copied().unwrap_or(0);
        for l in 1..=m {
            let ws = [channels, spec.dim(l), spec.dim(l - 1)];
            let bs = [channels, spec.dim(l)];
            if weights[l - 1].shape() != ws {
                return Err(Error::shape(
                    format!("W{l}"),
                    format!("expected {ws:?}, got {:?}", weights[l - 1].shape()),
                ));
            }
            if biases[l - 1].shape() != bs {
                return Err(Error::shape(
                    format!("b{l}"),
                    format!("expected {bs:?}, got {:?}", biases[l - 1].shape()),
                ));
            }
        }
        Ok(WeightSpaceVector {
            spec: spec.clone(),
            channels,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &WeightSpaceSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Sub-space tensor of shape `(f, axes...)`.
    pub fn sub(&self, s: Subspace) -> &Tensor<f64> {
        match s {
            Subspace::Weight(m) => &self.weights[m - 1],
            Subspace::Bias(m) => &self.biases[m - 1],
        }
    }

    pub fn sub_mut(&mut self, s: Subspace) -> &mut Tensor<f64> {
        match s {
            Subspace::Weight(m) => &mut self.weights[m - 1],
            Subspace::Bias(m) => &mut self.biases[m - 1],
        }
    }

    pub fn set_sub(&mut self, s: Subspace, t: Tensor<f64>) -> Result<()> {
        let mut want = vec![self.channels];
        want.extend(self.spec.subspace_shape(s));
        if t.shape() != want.as_slice() {
            return Err(Error::shape(
                s.to_string(),
                format!("expected {want:?}, got {:?}", t.shape()),
            ));
        }
        *self.sub_mut(s) = t;
        Ok(())
    }

    pub fn weight(&self, m: usize) -> &Tensor<f64> {
        &self.weights[m - 1]
    }

    pub fn bias(&self, m: usize) -> &Tensor<f64> {
        &self.biases[m - 1]
    }

    /// Flat vector in canonical order; length `f * flat_dim`.
    pub fn flatten(&self) -> Tensor<f64> {
        let mut out = Vec::with_capacity(self.channels * self.spec.flat_dim());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        Tensor::from_vec(out)
    }

    pub fn unflatten(spec: &WeightSpaceSpec, channels: usize, flat: &[f64]) -> Result<Self> {
        let want = channels * spec.flat_dim();
        if channels == 0 || flat.len() != want {
            return Err(Error::shape(
                "unflatten",
                format!(
                    "expected {want} values for {channels} channel(s) of [{spec}], got {}",
                    flat.len()
                ),
            ));
        }
        let mut v = Self::zeros(spec, channels);
        let mut pos = 0;
        for s in spec.subspaces() {
            let t = v.sub_mut(s);
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(v)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.spec != other.spec || self.channels != other.channels {
            return None;
        }
        self.spec
            .subspaces()
            .into_iter()
            .map(|s| self.sub(s).max_abs_diff(other.sub(s)))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|t| t.data())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}
