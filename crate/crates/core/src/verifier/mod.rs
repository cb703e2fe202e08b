//! Independent checks of the layer constructions: equivariance residuals,
//! the character formula for the dimension of equivariant maps, an exact
//! null-space count, and a rank test of the block parametrizations.

pub mod elimination;
mod report;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Bindings, Graph};
use crate::layers::{block_forward, dws_forward, random_params, BlockLayer, DwsLayer, PoolMode};
use crate::optim::ParamStore;
use crate::symmetry::{
    coordinate_map, enumerate_group, group_order, sample_group_element, GROUP_LIMIT,
};
use crate::tensor::Tensor;
use crate::weight_space::{
    permute_subspace, GroupElement, Permutation, Subspace, WeightSpaceSpec, WeightSpaceVector,
};

use elimination::{Echelon, SparseRow};

pub use report::{verify_tables, PairRecord, VerificationReport, VerifyMode, VerifyOptions};

/// Largest number of unknowns accepted by [`dim_by_nullspace`].
pub const NULLSPACE_LIMIT: usize = 10_000;

/// A linear map with a notion of group action on its domain and codomain.
pub trait EquivariantMap {
    type In;
    type Out;
    fn spec(&self) -> &WeightSpaceSpec;
    /// Draws fresh parameters.
    fn resample(&mut self, rng: &mut dyn RngCore);
    fn sample_input(&self, rng: &mut dyn RngCore) -> Self::In;
    fn act_in(&self, g: &GroupElement, x: &Self::In) -> Self::In;
    fn act_out(&self, g: &GroupElement, y: &Self::Out) -> Self::Out;
    fn apply(&self, x: &Self::In) -> Result<Self::Out>;
    fn distance(a: &Self::Out, b: &Self::Out) -> f64;
}

/// `max ‖L(g·x) − g·L(x)‖_∞` over `trials` fresh draws of parameters, `g` and `x`.
pub fn check_equivariance<M: EquivariantMap>(
    map: &mut M,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        map.resample(rng);
        let g = sample_group_element(map.spec(), rng);
        let x = map.sample_input(rng);
        let lhs = map.apply(&map.act_in(&g, &x))?;
        let rhs = map.act_out(&g, &map.apply(&x)?);
        worst = worst.max(M::distance(&lhs, &rhs));
    }
    Ok(worst)
}

fn normal_tensor(shape: Vec<usize>, rng: &mut dyn RngCore) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape, data).expect("nonempty shape")
}

fn tensor_distance(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}

/// A block with random parameters.
pub struct RandomBlock {
    pub spec: WeightSpaceSpec,
    pub block: BlockLayer,
    pub mode: PoolMode,
    pub params: ParamStore<f64>,
}

impl RandomBlock {
    pub fn new(
        spec: &WeightSpaceSpec,
        from: Subspace,
        to: Subspace,
        f_in: usize,
        f_out: usize,
        mode: PoolMode,
    ) -> Self {
        RandomBlock {
            spec: spec.clone(),
            block: BlockLayer::new(spec, from, to, f_in, f_out),
            mode,
            params: ParamStore::new(),
        }
    }
}

impl EquivariantMap for RandomBlock {
    type In = Tensor<f64>;
    type Out = Tensor<f64>;
    fn spec(&self) -> &WeightSpaceSpec {
        &self.spec
    }
    fn resample(&mut self, rng: &mut dyn RngCore) {
        self.params = random_params(&self.block.param_specs(&self.spec, "block"), rng);
    }
    fn sample_input(&self, rng: &mut dyn RngCore) -> Tensor<f64> {
        let mut shape = vec![self.block.f_in];
        shape.extend(self.spec.subspace_shape(self.block.from()));
        normal_tensor(shape, rng)
    }
    fn act_in(&self, g: &GroupElement, x: &Tensor<f64>) -> Tensor<f64> {
        permute_subspace(g, self.block.from(), x)
    }
    fn act_out(&self, g: &GroupElement, y: &Tensor<f64>) -> Tensor<f64> {
        permute_subspace(g, self.block.to(), y)
    }
    fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        block_forward(&self.spec, &self.block, &self.params, self.mode, x)
    }
    fn distance(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        tensor_distance(a, b)
    }
}

/// A full layer with random parameters (biases included).
pub struct RandomLayer {
    pub layer: DwsLayer,
    pub params: ParamStore<f64>,
}

impl RandomLayer {
    pub fn new(spec: &WeightSpaceSpec, f_in: usize, f_out: usize, mode: PoolMode) -> Self {
        RandomLayer {
            layer: DwsLayer::new(spec, f_in, f_out, mode, "layer"),
            params: ParamStore::new(),
        }
    }
}

impl EquivariantMap for RandomLayer {
    type In = WeightSpaceVector;
    type Out = WeightSpaceVector;
    fn spec(&self) -> &WeightSpaceSpec {
        &self.layer.spec
    }
    fn resample(&mut self, rng: &mut dyn RngCore) {
        self.params = random_params(&self.layer.param_specs(), rng);
    }
    fn sample_input(&self, mut rng: &mut dyn RngCore) -> WeightSpaceVector {
        WeightSpaceVector::random(&self.layer.spec, self.layer.f_in, &mut rng)
    }
    fn act_in(&self, g: &GroupElement, x: &WeightSpaceVector) -> WeightSpaceVector {
        x.act(g).expect("element of this spec's group")
    }
    fn act_out(&self, g: &GroupElement, y: &WeightSpaceVector) -> WeightSpaceVector {
        y.act(g).expect("element of this spec's group")
    }
    fn apply(&self, x: &WeightSpaceVector) -> Result<WeightSpaceVector> {
        dws_forward(&self.layer, &self.params, x)
    }
    fn distance(a: &WeightSpaceVector, b: &WeightSpaceVector) -> f64 {
        a.max_abs_diff(b).unwrap_or(f64::INFINITY)
    }
}

/// Identity on a sub-space.
pub struct IdentityMap {
    pub spec: WeightSpaceSpec,
    pub subspace: Subspace,
}

impl EquivariantMap for IdentityMap {
    type In = Tensor<f64>;
    type Out = Tensor<f64>;
    fn spec(&self) -> &WeightSpaceSpec {
        &self.spec
    }
    fn resample(&mut self, _: &mut dyn RngCore) {}
    fn sample_input(&self, rng: &mut dyn RngCore) -> Tensor<f64> {
        let mut shape = vec![1];
        shape.extend(self.spec.subspace_shape(self.subspace));
        normal_tensor(shape, rng)
    }
    fn act_in(&self, g: &GroupElement, x: &Tensor<f64>) -> Tensor<f64> {
        permute_subspace(g, self.subspace, x)
    }
    fn act_out(&self, g: &GroupElement, y: &Tensor<f64>) -> Tensor<f64> {
        permute_subspace(g, self.subspace, y)
    }
    fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(x.clone())
    }
    fn distance(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        tensor_distance(a, b)
    }
}

/// Fixed-point count of `g` on the coordinates of `s`, read off the
/// coordinate permutation.
fn fixed_coordinates(spec: &WeightSpaceSpec, g: &GroupElement, s: Subspace) -> u64 {
    coordinate_map(spec, g, s)
        .into_iter()
        .enumerate()
        .filter(|(i, j)| i == j)
        .count() as u64
}

/// Exhaustive character sums over `G`.
#[derive(Clone, Debug)]
pub struct TraceTable {
    pub order: u64,
    pub subspaces: Vec<Subspace>,
    /// `Σ_g tr_s(g)`
    pub first: Vec<u128>,
    /// `Σ_g tr_s(g)·tr_t(g)`, row-major over `(s, t)`.
    pub second: Vec<u128>,
}

impl TraceTable {
    pub fn exhaustive(spec: &WeightSpaceSpec) -> Result<Self> {
        let subs = spec.subspaces();
        let n = subs.len();
        let mut first = vec![0u128; n];
        let mut second = vec![0u128; n * n];
        let mut order = 0u64;
        let mut tr = vec![0u64; n];
        for g in enumerate_group(spec)? {
            order += 1;
            for (i, &s) in subs.iter().enumerate() {
                tr[i] = fixed_coordinates(spec, &g, s);
                first[i] += tr[i] as u128;
            }
            for i in 0..n {
                for j in 0..n {
                    second[i * n + j] += (tr[i] * tr[j]) as u128;
                }
            }
        }
        Ok(TraceTable {
            order,
            subspaces: subs,
            first,
            second,
        })
    }

    fn exact_div(&self, x: u128) -> Result<u64> {
        let o = self.order as u128;
        if x % o != 0 {
            return Err(Error::InvalidSpec(format!(
                "character sum {x} not divisible by |G| = {o}"
            )));
        }
        Ok((x / o) as u64)
    }

    fn index(&self, s: Subspace) -> usize {
        self.subspaces
            .iter()
            .position(|&t| t == s)
            .expect("sub-space of this spec")
    }

    /// Dimension of equivariant maps `s -> t`.
    pub fn pair(&self, s: Subspace, t: Subspace) -> Result<u64> {
        let n = self.subspaces.len();
        self.exact_div(self.second[self.index(s) * n + self.index(t)])
    }

    /// Dimension of invariant linear functionals on `V`.
    pub fn invariant(&self) -> Result<u64> {
        self.exact_div(self.first.iter().sum())
    }

    /// Dimension of equivariant maps `V -> V`.
    pub fn total(&self) -> Result<u64> {
        self.exact_div(self.second.iter().sum())
    }
}

/// `(1/|G|) Σ_g tr ρ_s(g) · tr ρ_t(g)`, exact.
pub fn dim_by_trace(spec: &WeightSpaceSpec, from: Subspace, to: Subspace) -> Result<u64> {
    TraceTable::exhaustive(spec)?.pair(from, to)
}

/// `(1/|G|) Σ_g tr ρ(g)` on all of `V`: the number of independent invariant functionals.
pub fn invariant_dim_by_trace(spec: &WeightSpaceSpec) -> Result<u64> {
    TraceTable::exhaustive(spec)?.invariant()
}

/// Adjacent transpositions of each hidden layer. They generate `G`, and a
/// map commuting with every generator commutes with every product of
/// generators, so these constraints cut out exactly the equivariant maps.
pub fn generators(spec: &WeightSpaceSpec) -> Vec<GroupElement> {
    let mut out = Vec::new();
    for k in 1..spec.layers() {
        for i in 0..spec.dim(k).saturating_sub(1) {
            let mut g = GroupElement::identity(spec);
            let mut perms = g.perms().to_vec();
            let mut p: Vec<usize> = (0..spec.dim(k)).collect();
            p.swap(i, i + 1);
            perms[k - 1] = Permutation::new(p).expect("transposition");
            g = GroupElement::new(perms);
            out.push(g);
        }
    }
    out
}

/// Dimension of `{L : L·R_s(g) = R_t(g)·L for all generators g}`, by exact
/// integer elimination on the stacked constraints.
pub fn dim_by_nullspace(spec: &WeightSpaceSpec, from: Subspace, to: Subspace) -> Result<usize> {
    let (ns, nt) = (spec.subspace_len(from), spec.subspace_len(to));
    let unknowns = ns * nt;
    if unknowns > NULLSPACE_LIMIT {
        return Err(Error::SystemTooLarge {
            unknowns,
            limit: NULLSPACE_LIMIT,
        });
    }
    // Unknown L[i][j] (row i of the output, column j of the input) is index i*ns + j.
    // With R e_j = e_{map(j)}: (L R_s)[i][j] = L[i][map_s(j)] and
    // (R_t L)[i][j] = L[map_t^{-1}(i)][j].
    let mut ech = Echelon::new();
    for g in generators(spec) {
        let ms = coordinate_map(spec, &g, from);
        let mt = coordinate_map(spec, &g, to);
        let mut mt_inv = vec![0; nt];
        for (i, &j) in mt.iter().enumerate() {
            mt_inv[j] = i;
        }
        for i in 0..nt {
            for j in 0..ns {
                let mut row = SparseRow::new();
                *row.entry(i * ns + ms[j]).or_insert(0) += 1;
                *row.entry(mt_inv[i] * ns + j).or_insert(0) -= 1;
                ech.insert(row)?;
            }
        }
    }
    Ok(unknowns - ech.rank())
}

/// Matrix of a block with one channel each way, as a row-major integer
/// vector; the parameters must make every entry integral.
fn block_matrix(
    spec: &WeightSpaceSpec,
    block: &BlockLayer,
    params: &ParamStore<f64>,
) -> Result<Vec<i64>> {
    let ns = spec.subspace_len(block.from());
    let nt = spec.subspace_len(block.to());
    let mut g = Graph::new();
    let mut shape = vec![ns, 1];
    shape.extend(spec.subspace_shape(block.from()));
    let x = g.input("x", &shape)?;
    let out = block.build(spec, &mut g, x, PoolMode::Sum, "block")?;
    let mut eye = vec![0.0; ns * ns];
    for i in 0..ns {
        eye[i * ns + i] = 1.0;
    }
    let mut b = Bindings::new();
    for (n, t) in params {
        b.bind(n.as_str(), t);
    }
    b.bind_owned("x", Tensor::new(shape, eye)?);
    let eval = g.forward(&b)?;
    // output row c (a basis input) holds column c of the matrix
    let y = eval.value(out).data();
    let mut m = vec![0i64; nt * ns];
    for c in 0..ns {
        for r in 0..nt {
            let v = y[c * nt + r];
            if v.fract() != 0.0 || v.abs() > 1e15 {
                return Err(Error::InvalidSpec(format!("non-integral block entry {v}")));
            }
            m[r * ns + c] = v as i64;
        }
    }
    Ok(m)
}

/// Rank of `draws` random integer instantiations of the block `from -> to`.
pub fn basis_rank(
    spec: &WeightSpaceSpec,
    from: Subspace,
    to: Subspace,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    let block = BlockLayer::new(spec, from, to, 1, 1);
    let specs = block.param_specs(spec, "block");
    let mut ech = Echelon::new();
    for _ in 0..draws {
        let params: ParamStore<f64> = specs
            .iter()
            .map(|p| {
                let n: usize = p.shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-4i32..=4) as f64).collect();
                (
                    p.name.clone(),
                    Tensor::new(p.shape.clone(), data).expect("shape"),
                )
            })
            .collect();
        ech.insert(elimination::dense_row(&block_matrix(
            spec, &block, &params,
        )?))?;
    }
    Ok(ech.rank())
}

/// Whether every hidden dimension is at least 2; below that the two-term
/// set layers are redundant and counts exceed true dimensions.
pub fn is_non_degenerate(spec: &WeightSpaceSpec) -> bool {
    (1..spec.layers()).all(|k| spec.dim(k) >= 2)
}

/// `|G|` if it is at most the exhaustive limit.
pub fn exhaustive_order(spec: &WeightSpaceSpec) -> Option<u64> {
    group_order(spec)
        .filter(|&n| n <= GROUP_LIMIT as u128)
        .map(|n| n as u64)
}

#[cfg(test)]
mod tests;
