mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwsnet::graph::{Graph, NodeId};
use dwsnet::layers::PoolMode;
use dwsnet::optim::ParamStore;
use dwsnet::tensor::Tensor;

use common::{dwsnet_grad_check, fd_check};

#[test]
fn dwsnet_gradient_matches_finite_differences() {
    for pool in [PoolMode::Max, PoolMode::Sum] {
        let r = dwsnet_grad_check("1,3,3,1", 4, pool, 7);
        assert!(r.max_rel <= 1e-4, "{pool:?}: {r:?}");
        assert!(r.checked > 1000);
    }
}

#[test]
fn dwsnet_gradient_on_wider_ends() {
    let r = dwsnet_grad_check("2,3,2", 2, PoolMode::Sum, 3);
    assert!(r.max_rel <= 1e-4, "{r:?}");
}

/// Shape-preserving ops applied to a running `(2, 3)` node.
#[derive(Clone, Copy, Debug)]
enum Step {
    AddParam,
    MulParam,
    MatMulParam,
    Relu,
    Sine,
    Scale,
    SumBroadcast,
    MaxBroadcast,
    Transpose,
    ConcatSlice,
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::AddParam),
        Just(Step::MulParam),
        Just(Step::MatMulParam),
        Just(Step::Relu),
        Just(Step::Sine),
        Just(Step::Scale),
        Just(Step::SumBroadcast),
        Just(Step::MaxBroadcast),
        Just(Step::Transpose),
        Just(Step::ConcatSlice),
    ]
}

fn build(steps: &[Step]) -> (Graph, NodeId, Vec<(String, Vec<usize>)>) {
    let mut g = Graph::new();
    let mut params = vec![("x0".to_string(), vec![2, 3])];
    let mut x = g.param("x0", &[2, 3]).unwrap();
    let mut param = |g: &mut Graph, shape: &[usize]| {
        let name = format!("p{}", params.len());
        params.push((name.clone(), shape.to_vec()));
        g.param(&name, shape).unwrap()
    };
    for (i, s) in steps.iter().enumerate() {
        x = match s {
            Step::AddParam => {
                let p = param(&mut g, &[2, 3]);
                g.add(x, p).unwrap()
            }
            Step::MulParam => {
                let p = param(&mut g, &[2, 3]);
                g.mul(x, p).unwrap()
            }
            Step::MatMulParam => {
                let p = param(&mut g, &[3, 3]);
                g.matmul(x, p).unwrap()
            }
            Step::Relu => g.relu(x),
            Step::Sine => g.sine(x),
            Step::Scale => g.scale(x, 0.5 + i as f64 * 0.1),
            Step::SumBroadcast => {
                let s = g.sum(x, 1).unwrap();
                let b = g.broadcast(s, 1, 3).unwrap();
                g.sub(x, b).unwrap()
            }
            Step::MaxBroadcast => {
                let m = g.max(x, 0).unwrap();
                let b = g.broadcast(m, 0, 2).unwrap();
                g.add(x, b).unwrap()
            }
            Step::Transpose => {
                let t = g.permute(x, &[1, 0]).unwrap();
                let r = g.reshape(t, &[3, 2]).unwrap();
                g.permute(r, &[1, 0]).unwrap()
            }
            Step::ConcatSlice => {
                let c = g.concat(&[x, x], 1).unwrap();
                let a = g.slice(c, 1, 1, 3).unwrap();
                g.add(a, x).unwrap()
            }
        };
    }
    let y = g.input("y", &[2, 3]).unwrap();
    let loss = g.mse(x, y).unwrap();
    (g, loss, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn random_graph_gradients(steps in prop::collection::vec(step(), 1..8), seed in any::<u64>()) {
        let (g, loss, shapes) = build(&steps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_tensor = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let params: ParamStore<f64> = shapes.iter().map(|(n, s)| (n.clone(), rand_tensor(s))).collect();
        let inputs = vec![("y".to_string(), rand_tensor(&[2, 3]))];
        let r = fd_check(&g, loss, &params, &inputs, 1e-6, 1e-4);
        prop_assert!(r.max_rel <= 1e-4, "{:?}: {:?}", steps, r);
    }
}
