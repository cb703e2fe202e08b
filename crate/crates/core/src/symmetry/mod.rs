//! Sampling, enumeration and explicit matrices for the hidden-neuron
//! permutation group `G = S_{d_1} x ... x S_{d_{M-1}}`.

mod orbits;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::weight_space::{GroupElement, Permutation, Subspace, WeightSpaceSpec};

pub use orbits::{brute_force_orbits, enumerate_orbits, orbit_count, orbit_normalization, Orbit};

/// Largest group that [`enumerate_group`] will walk.
pub const GROUP_LIMIT: u64 = 1_000_000;

/// Uniform element of `G`; each factor is an independent Fisher-Yates shuffle.
pub fn sample_group_element(spec: &WeightSpaceSpec, rng: &mut impl Rng) -> GroupElement {
    let perms = (1..spec.layers())
        .map(|k| {
            let mut p: Vec<usize> = (0..spec.dim(k)).collect();
            p.shuffle(rng);
            Permutation::new(p).expect("shuffle of identity is a permutation")
        })
        .collect();
    GroupElement::new(perms)
}

/// `|G|`, or `None` if it does not fit in a `u128`.
pub fn group_order(spec: &WeightSpaceSpec) -> Option<u128> {
    let mut n: u128 = 1;
    for k in 1..spec.layers() {
        for i in 2..=spec.dim(k) as u128 {
            n = n.checked_mul(i)?;
        }
    }
    Some(n)
}

fn checked_order(spec: &WeightSpaceSpec, limit: u64) -> Result<u64> {
    match group_order(spec) {
        Some(n) if n <= limit as u128 => Ok(n as u64),
        Some(n) => Err(Error::GroupTooLarge {
            size: n.to_string(),
            limit,
        }),
        None => Err(Error::GroupTooLarge {
            size: "more than 2^128".into(),
            limit,
        }),
    }
}

/// Every permutation of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Permutation> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![Permutation::new(cur.clone()).expect("identity")];
    // next_permutation
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n)
            .rev()
            .find(|&j| cur[j] > cur[i - 1])
            .expect("pivot exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(Permutation::new(cur.clone()).expect("permutation"));
    }
}

/// Iterator over all of `G`, built by [`enumerate_group`].
pub struct GroupIter {
    factors: Vec<Vec<Permutation>>,
    counter: Vec<usize>,
    done: bool,
}

impl Iterator for GroupIter {
    type Item = GroupElement;

    fn next(&mut self) -> Option<GroupElement> {
        if self.done {
            return None;
        }
        let g = GroupElement::new(
            self.factors
                .iter()
                .zip(&self.counter)
                .map(|(f, &i)| f[i].clone())
                .collect(),
        );
        self.done = true;
        for k in (0..self.counter.len()).rev() {
            self.counter[k] += 1;
            if self.counter[k] < self.factors[k].len() {
                self.done = false;
                break;
            }
            self.counter[k] = 0;
        }
        Some(g)
    }
}

/// Walks every element of `G` exactly once; refuses groups larger than [`GROUP_LIMIT`].
pub fn enumerate_group(spec: &WeightSpaceSpec) -> Result<GroupIter> {
    enumerate_group_with_limit(spec, GROUP_LIMIT)
}

pub fn enumerate_group_with_limit(spec: &WeightSpaceSpec, limit: u64) -> Result<GroupIter> {
    checked_order(spec, limit)?;
    let factors: Vec<Vec<Permutation>> = (1..spec.layers())
        .map(|k| all_permutations(spec.dim(k)))
        .collect();
    Ok(GroupIter {
        counter: vec![0; factors.len()],
        factors,
        done: false,
    })
}

/// Image of every coordinate of one channel of `s` under `g`:
/// `map[i]` is where coordinate `i` lands.
pub fn coordinate_map(spec: &WeightSpaceSpec, g: &GroupElement, s: Subspace) -> Vec<usize> {
    let image = |k: usize, i: usize| g.at(k).map_or(i, |p| p.apply(i));
    match s {
        Subspace::Weight(m) => {
            let (rows, cols) = (spec.dim(m), spec.dim(m - 1));
            let mut map = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for j in 0..cols {
                    map.push(image(m, i) * cols + image(m - 1, j));
                }
            }
            map
        }
        Subspace::Bias(m) => (0..spec.dim(m)).map(|i| image(m, i)).collect(),
    }
}

/// Coordinate map on the whole single-channel flat vector.
pub fn flat_coordinate_map(spec: &WeightSpaceSpec, g: &GroupElement) -> Vec<usize> {
    let mut out = Vec::with_capacity(spec.flat_dim());
    for s in spec.subspaces() {
        let off = spec.subspace_offset(s);
        out.extend(coordinate_map(spec, g, s).into_iter().map(|i| i + off));
    }
    out
}

/// `tr ρ_s(g)`: number of coordinates of `s` that `g` fixes. For `W_m`
/// this is `fix(τ_m)·fix(τ_{m-1})` with `fix = d` on the fixed positions.
pub fn trace(spec: &WeightSpaceSpec, g: &GroupElement, s: Subspace) -> u64 {
    let fix = |k: usize| g.at(k).map_or(spec.dim(k), |p| p.fixed_points()) as u64;
    match s {
        Subspace::Weight(m) => fix(m) * fix(m - 1),
        Subspace::Bias(m) => fix(m),
    }
}

/// Dense 0/1 permutation matrix acting on the vectorized sub-space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepresentationMatrix {
    pub subspace: Subspace,
    pub size: usize,
    /// Row-major `size x size` entries.
    pub entries: Vec<i64>,
}

impl RepresentationMatrix {
    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.entries[r * self.size + c]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|r| {
                self.entries[r * self.size..(r + 1) * self.size]
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| a as f64 * b)
                    .sum()
            })
            .collect()
    }

    pub fn matmul(&self, other: &RepresentationMatrix) -> RepresentationMatrix {
        let n = self.size;
        let mut entries = vec![0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a != 0 {
                    for j in 0..n {
                        entries[i * n + j] += a * other.get(k, j);
                    }
                }
            }
        }
        RepresentationMatrix {
            subspace: self.subspace,
            size: n,
            entries,
        }
    }

    pub fn trace(&self) -> i64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }
}

/// `R` with `vec(sub(g·v)) = R · vec(sub(v))` for a single channel.
pub fn representation_matrix(
    spec: &WeightSpaceSpec,
    g: &GroupElement,
    s: Subspace,
) -> RepresentationMatrix {
    let map = coordinate_map(spec, g, s);
    let n = map.len();
    let mut entries = vec![0; n * n];
    for (src, &dst) in map.iter().enumerate() {
        entries[dst * n + src] = 1;
    }
    RepresentationMatrix {
        subspace: s,
        size: n,
        entries,
    }
}
