use super::*;
use crate::layers::plan_block;
use crate::symmetry::orbit_count;
use crate::weight_space::Subspace::{Bias as B, Weight as W};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(d: &str) -> WeightSpaceSpec {
    WeightSpaceSpec::parse(d).unwrap()
}

#[test]
fn trace_dimensions_match_tables() {
    let s = spec("2,3,3,2");
    assert_eq!(dim_by_trace(&s, W(2), W(2)).unwrap(), 4);
    assert_eq!(dim_by_trace(&s, B(3), B(3)).unwrap(), 4);
    assert_eq!(dim_by_trace(&s, B(1), B(2)).unwrap(), 1);
    assert_eq!(dim_by_trace(&s, W(1), W(1)).unwrap(), 8);
}

#[test]
fn nullspace_agrees_with_trace_on_all_pairs() {
    let s = spec("2,3,3,2");
    let table = TraceTable::exhaustive(&s).unwrap();
    assert_eq!(table.order, 36);
    assert_eq!(dim_by_nullspace(&s, W(1), W(1)).unwrap(), 8);
    for a in s.subspaces() {
        for b in s.subspaces() {
            assert_eq!(
                dim_by_nullspace(&s, a, b).unwrap() as u64,
                table.pair(a, b).unwrap(),
                "{a}->{b}"
            );
        }
    }
}

#[test]
fn trivial_group_leaves_everything_free() {
    let s = spec("2,1,1,3");
    assert_eq!(dim_by_nullspace(&s, W(1), B(3)).unwrap(), 2 * 3);
    assert_eq!(dim_by_trace(&s, W(1), B(3)).unwrap(), 6);
    assert_eq!(dim_by_nullspace(&s, W(3), W(1)).unwrap(), 3 * 2);
}

#[test]
fn nullspace_size_guard() {
    let s = spec("1,60,60,1");
    assert!(matches!(
        dim_by_nullspace(&s, W(2), W(2)),
        Err(Error::SystemTooLarge {
            unknowns: 12_960_000,
            ..
        })
    ));
}

#[test]
fn identity_has_zero_residual() {
    let s = spec("2,3,3,2");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sub in s.subspaces() {
        let mut id = IdentityMap {
            spec: s.clone(),
            subspace: sub,
        };
        assert_eq!(check_equivariance(&mut id, 5, &mut rng).unwrap(), 0.0);
    }
}

/// A dense map on the whole vectorized `W_1`, standing where a set layer belongs.
struct CorruptedBlock {
    spec: WeightSpaceSpec,
    matrix: Vec<f64>,
}

impl EquivariantMap for CorruptedBlock {
    type In = Tensor<f64>;
    type Out = Tensor<f64>;
    fn spec(&self) -> &WeightSpaceSpec {
        &self.spec
    }
    fn resample(&mut self, rng: &mut dyn RngCore) {
        let n = self.spec.subspace_len(W(1));
        self.matrix = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    }
    fn sample_input(&self, rng: &mut dyn RngCore) -> Tensor<f64> {
        let mut shape = vec![1];
        shape.extend(self.spec.subspace_shape(W(1)));
        normal_tensor(shape, rng)
    }
    fn act_in(&self, g: &GroupElement, x: &Tensor<f64>) -> Tensor<f64> {
        permute_subspace(g, W(1), x)
    }
    fn act_out(&self, g: &GroupElement, y: &Tensor<f64>) -> Tensor<f64> {
        permute_subspace(g, W(1), y)
    }
    fn apply(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let n = x.len();
        let y = (0..n)
            .map(|r| (0..n).map(|c| self.matrix[r * n + c] * x.data()[c]).sum())
            .collect();
        Tensor::new(x.shape().to_vec(), y)
    }
    fn distance(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        tensor_distance(a, b)
    }
}

#[test]
fn corrupted_block_is_caught() {
    let s = spec("2,3,3,2");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = CorruptedBlock {
        spec: s.clone(),
        matrix: Vec::new(),
    };
    assert!(check_equivariance(&mut bad, 10, &mut rng).unwrap() > 1e-3);
    let mut good = RandomBlock::new(&s, W(1), W(1), 1, 1, PoolMode::Sum);
    assert!(check_equivariance(&mut good, 10, &mut rng).unwrap() <= 1e-9);
}

#[test]
fn random_blocks_span_their_table_count() {
    let s = spec("2,3,3,2");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for a in s.subspaces() {
        for b in s.subspaces() {
            let count = plan_block(&s, a, b).count;
            assert_eq!(
                basis_rank(&s, a, b, 2 * count, &mut rng).unwrap(),
                count,
                "{a}->{b}"
            );
        }
    }
}

#[test]
fn invariant_dimension_is_orbit_count() {
    for d in ["2,3,3,2", "1,2,1", "3,2,2,4"] {
        let s = spec(d);
        assert_eq!(invariant_dim_by_trace(&s).unwrap(), orbit_count(&s) as u64);
    }
}

#[test]
fn generator_count() {
    assert_eq!(generators(&spec("3,4,5,4,3")).len(), 3 + 4 + 3);
    assert!(generators(&spec("3,1,1,3")).is_empty());
}

#[test]
fn small_specs_verify() {
    for d in ["1,2,1", "2,3,3,2"] {
        let r = verify_tables(&spec(d), &VerifyOptions::default()).unwrap();
        assert!(r.pass, "{r}");
        assert_eq!(r.pairs.len(), if d == "1,2,1" { 16 } else { 36 });
    }
}

#[test]
fn degenerate_spec_reports_but_does_not_compare() {
    let r = verify_tables(&spec("2,1,3,2"), &VerifyOptions::default()).unwrap();
    assert!(!r.non_degenerate);
    assert!(r.pass);
    assert!(r.pairs.iter().any(|p| p.analytic as u64 != p.trace));
}

#[test]
fn monte_carlo_mode_runs() {
    let opts = VerifyOptions {
        mode: VerifyMode::MonteCarlo(4000),
        ..Default::default()
    };
    let r = verify_tables(&spec("2,3,3,2"), &opts).unwrap();
    assert!(r.pairs.iter().all(|p| p.residual <= 1e-9));
    let json = serde_json::to_string(&r).unwrap();
    let back: VerificationReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
