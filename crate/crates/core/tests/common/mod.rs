//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwsnet::graph::{Bindings, Graph};
use dwsnet::layers::{batch_inputs, init_params, DwsNet, DwsNetConfig, PoolMode};
use dwsnet::optim::ParamStore;
use dwsnet::symmetry::sample_group_element;
use dwsnet::tensor::Tensor;
use dwsnet::weight_space::{WeightSpaceSpec, WeightSpaceVector};
use dwsnet::zoo::{mlp_forward, ActivationKind};

pub fn spec(dims: &str) -> WeightSpaceSpec {
    WeightSpaceSpec::parse(dims).unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel: f64,
    pub worst: String,
}

/// Compares backprop on an MSE loss against central differences for every
/// parameter entry. `floor` keeps near-zero entries from dominating.
pub fn fd_check(
    g: &Graph,
    loss: dwsnet::graph::NodeId,
    params: &ParamStore<f64>,
    inputs: &[(String, Tensor<f64>)],
    h: f64,
    floor: f64,
) -> GradCheck {
    let eval = |p: &ParamStore<f64>| {
        let mut b = Bindings::new();
        for (n, t) in p {
            b.bind(n.as_str(), t);
        }
        for (n, t) in inputs {
            b.bind(n.as_str(), t);
        }
        g.forward(&b).unwrap().value(loss).data()[0]
    };
    let grads = {
        let mut b = Bindings::new();
        for (n, t) in params {
            b.bind(n.as_str(), t);
        }
        for (n, t) in inputs {
            b.bind(n.as_str(), t);
        }
        g.backward(&b, loss).unwrap().1
    };
    let mut p = params.clone();
    let mut out = GradCheck {
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    for (name, t) in params {
        for i in 0..t.len() {
            let x0 = t.data()[i];
            p.get_mut(name).unwrap().data_mut()[i] = x0 + h;
            let up = eval(&p);
            p.get_mut(name).unwrap().data_mut()[i] = x0 - h;
            let down = eval(&p);
            p.get_mut(name).unwrap().data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(name).map_or(0.0, |gr| gr.data()[i]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = format!("{name}[{i}]: analytic {analytic:e}, numeric {numeric:e}");
            }
            out.checked += 1;
        }
    }
    out
}

/// DWSNet with `f` channels per equivariant layer, MSE loss on a random
/// batch, checked entry by entry.
pub fn dwsnet_grad_check(dims: &str, f: usize, pool: PoolMode, seed: u64) -> GradCheck {
    let s = spec(dims);
    let net = DwsNet::new(
        &s,
        DwsNetConfig {
            channels: vec![f, f],
            pool,
            head_dim: 8,
            readout: vec![8],
            out_dim: 1,
        },
    )
    .unwrap();
    let batch = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: ParamStore<f64> = init_params(&net.param_specs(), 1.0, &mut rng);
    // nonzero biases so their gradients are exercised away from the init
    for t in params.values_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
    }
    let rows: Vec<Vec<f64>> = (0..batch)
        .map(|_| {
            (0..s.flat_dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let mut inputs = batch_inputs::<f64>(&s, &refs).unwrap();
    let y: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();
    inputs.push(("y".into(), Tensor::new(vec![batch, 1], y).unwrap()));

    let mut g = Graph::new();
    let out = net.build(&mut g, batch).unwrap();
    let target = g.input("y", &[batch, 1]).unwrap();
    let loss = g.mse(out, target).unwrap();
    fd_check(&g, loss, &params, &inputs, 1e-6, 1e-6)
}

/// Largest deviation between an MLP and its permuted copy, evaluated on
/// random inputs, over `draws` random (spec, weights, g, x).
pub fn function_invariance(act: ActivationKind, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let m = rng.random_range(2..=4);
        let dims: Vec<usize> = (0..=m).map(|_| rng.random_range(1..=6)).collect();
        let s = WeightSpaceSpec::new(dims).unwrap();
        let v = WeightSpaceVector::random(&s, 1, &mut rng);
        let g = sample_group_element(&s, &mut rng);
        let gv = v.act(&g).unwrap();
        let x: Vec<f64> = (0..s.dim(0)).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = mlp_forward(&v, &x, act).unwrap();
        let b = mlp_forward(&gv, &x, act).unwrap();
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}
