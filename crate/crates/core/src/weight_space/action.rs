use serde::{Deserialize, Serialize};

use super::{Subspace, WeightSpaceSpec, WeightSpaceVector};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A bijection on `0..n`; entry `i` is the image of `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn new(images: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; images.len()];
        for &i in &images {
            if i >= images.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation {
                    layer: 0,
                    message: format!("{images:?} is not a bijection"),
                });
            }
        }
        Ok(Permutation(images))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn images(&self) -> &[usize] {
        &self.0
    }

    /// `(self ∘ other)(i) = self(other(i))`
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation(other.0.iter().map(|&i| self.0[i]).collect())
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Permutation(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }

    /// Number of fixed points, i.e. the trace of the permutation matrix.
    pub fn fixed_points(&self) -> usize {
        self.0.iter().enumerate().filter(|(i, p)| i == *p).count()
    }
}

/// `(τ_1, ..., τ_{M-1})`, one permutation per hidden layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    perms: Vec<Permutation>,
}

impl GroupElement {
    pub fn identity(spec: &WeightSpaceSpec) -> Self {
        GroupElement {
            perms: (1..spec.layers())
                .map(|k| Permutation::identity(spec.dim(k)))
                .collect(),
        }
    }

    pub fn new(perms: Vec<Permutation>) -> Self {
        GroupElement { perms }
    }

    pub fn perms(&self) -> &[Permutation] {
        &self.perms
    }

    /// Permutation acting on layer position `k`, or `None` for the fixed positions.
    pub fn at(&self, k: usize) -> Option<&Permutation> {
        if k == 0 || k > self.perms.len() {
            None
        } else {
            Some(&self.perms[k - 1])
        }
    }

    pub fn check(&self, spec: &WeightSpaceSpec) -> Result<()> {
        if self.perms.len() != spec.layers() - 1 {
            return Err(Error::InvalidPermutation {
                layer: 0,
                message: format!(
                    "expected {} permutations, got {}",
                    spec.layers() - 1,
                    self.perms.len()
                ),
            });
        }
        for (k, p) in self.perms.iter().enumerate() {
            if p.len() != spec.dim(k + 1) {
                return Err(Error::InvalidPermutation {
                    layer: k + 1,
                    message: format!("length {} but d_{} = {}", p.len(), k + 1, spec.dim(k + 1)),
                });
            }
        }
        Ok(())
    }

    /// Group product: acting with `g.compose(h)` equals acting with `h` then `g`.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        GroupElement {
            perms: self
                .perms
                .iter()
                .zip(&other.perms)
                .map(|(a, b)| a.compose(b))
                .collect(),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            perms: self.perms.iter().map(Permutation::inverse).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perms.iter().all(Permutation::is_identity)
    }
}

/// Moves hidden neuron `i` of layer `k` to position `τ_k(i)`: rows of `W_k`
/// and entries of `b_k` follow `τ_k`, columns of `W_{k+1}` follow `τ_k`.
/// `b_M` and the input columns of `W_1` are untouched.
pub fn apply_action(g: &GroupElement, v: &WeightSpaceVector) -> Result<WeightSpaceVector> {
    let spec = v.spec();
    g.check(spec)?;
    let mut out = v.clone();
    for s in spec.subspaces() {
        out.set_sub(s, permute_subspace(g, s, v.sub(s)))?;
    }
    Ok(out)
}

/// Applies the action to one sub-space tensor of shape `(f, axes...)`.
pub fn permute_subspace(g: &GroupElement, s: Subspace, t: &Tensor<f64>) -> Tensor<f64> {
    let shape = t.shape();
    let f = shape[0];
    let mut out = Tensor::zeros(shape);
    let src = t.data();
    let dst = out.data_mut();
    match s {
        Subspace::Weight(m) => {
            let (rows, cols) = (shape[1], shape[2]);
            let (tr, tc) = (g.at(m), g.at(m - 1));
            for c in 0..f {
                for i in 0..rows {
                    let ni = tr.map_or(i, |p| p.apply(i));
                    for j in 0..cols {
                        let nj = tc.map_or(j, |p| p.apply(j));
                        dst[(c * rows + ni) * cols + nj] = src[(c * rows + i) * cols + j];
                    }
                }
            }
        }
        Subspace::Bias(m) => {
            let n = shape[1];
            let tr = g.at(m);
            for c in 0..f {
                for i in 0..n {
                    let ni = tr.map_or(i, |p| p.apply(i));
                    dst[c * n + ni] = src[c * n + i];
                }
            }
        }
    }
    out
}

impl WeightSpaceVector {
    pub fn act(&self, g: &GroupElement) -> Result<WeightSpaceVector> {
        apply_action(g, self)
    }
}
