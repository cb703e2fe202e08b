use super::*;
use crate::symmetry::{orbit_count, sample_group_element};
use crate::weight_space::Subspace::{Bias as B, Weight as W};
use crate::weight_space::{permute_subspace, WeightSpaceVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

fn sub_input(
    spec: &WeightSpaceSpec,
    s: crate::weight_space::Subspace,
    f: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<f64> {
    let mut shape = vec![f];
    shape.extend(spec.subspace_shape(s));
    rand_tensor(&shape, rng)
}

#[test]
fn zero_parameters_give_zero_output() {
    let spec = WeightSpaceSpec::parse("2,3,3,2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = BlockLayer::new(&spec, W(2), B(1), 2, 3);
    let params = init_params(&block.param_specs(&spec, "block"), 0.0, &mut rng);
    let x = sub_input(&spec, W(2), 2, &mut rng);
    let y = block_forward(&spec, &block, &params, PoolMode::Sum, &x).unwrap();
    assert_eq!(y.shape(), &[3, 3]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn interior_bias_deepsets_identity() {
    let spec = WeightSpaceSpec::parse("2,3,4,2").unwrap();
    let block = BlockLayer::new(&spec, B(2), B(2), 1, 1);
    let mut params = ParamStore::new();
    params.insert(
        block.param_name("block", 0),
        Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
    );
    params.insert(
        block.param_name("block", 1),
        Tensor::new(vec![1, 1], vec![0.0]).unwrap(),
    );
    let x = Tensor::new(vec![1, 4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
    assert_eq!(
        block_forward(&spec, &block, &params, PoolMode::Sum, &x).unwrap(),
        x
    );
    // a_2 alone broadcasts the sum
    params.insert(
        block.param_name("block", 0),
        Tensor::new(vec![1, 1], vec![0.0]).unwrap(),
    );
    params.insert(
        block.param_name("block", 1),
        Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
    );
    let y = block_forward(&spec, &block, &params, PoolMode::Sum, &x).unwrap();
    assert_eq!(y.data(), &[9.0; 4]);
}

#[test]
fn last_bias_block_is_dense_matrix() {
    let spec = WeightSpaceSpec::parse("2,3,3").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (f, fo) = (2, 3);
    let block = BlockLayer::new(&spec, B(2), B(2), f, fo);
    let params = random_params(&block.param_specs(&spec, "block"), &mut rng);
    let x = sub_input(&spec, B(2), f, &mut rng);
    let y = block_forward(&spec, &block, &params, PoolMode::Sum, &x).unwrap();
    // feature index = channel * d_M + row
    let a = &params[&block.param_name("block", 0)];
    let d = 3;
    for co in 0..fo {
        for r in 0..d {
            let mut want = 0.0;
            for ci in 0..f {
                for rr in 0..d {
                    want += x.data()[ci * d + rr] * a.data()[(ci * d + rr) * (fo * d) + co * d + r];
                }
            }
            assert!((y.data()[co * d + r] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn every_block_is_equivariant_and_linear() {
    for dims in ["2,3,3,2", "1,2,1", "2,3,4,2,2"] {
        let spec = WeightSpaceSpec::parse(dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in spec.subspaces() {
            for t in spec.subspaces() {
                let block = BlockLayer::new(&spec, s, t, 2, 2);
                for mode in [PoolMode::Sum, PoolMode::Max] {
                    let params = random_params(&block.param_specs(&spec, "block"), &mut rng);
                    for _ in 0..5 {
                        let g = sample_group_element(&spec, &mut rng);
                        let x = sub_input(&spec, s, 2, &mut rng);
                        let y = block_forward(&spec, &block, &params, mode, &x).unwrap();
                        let gy = block_forward(
                            &spec,
                            &block,
                            &params,
                            mode,
                            &permute_subspace(&g, s, &x),
                        )
                        .unwrap();
                        let res = gy.max_abs_diff(&permute_subspace(&g, t, &y)).unwrap();
                        assert!(res <= 1e-9, "{dims} {s}->{t} {mode}: {res}");
                    }
                    if mode == PoolMode::Sum {
                        let x = sub_input(&spec, s, 2, &mut rng);
                        let z = sub_input(&spec, s, 2, &mut rng);
                        let comb = Tensor::new(
                            x.shape().to_vec(),
                            x.data()
                                .iter()
                                .zip(z.data())
                                .map(|(a, b)| 1.5 * a - 0.5 * b)
                                .collect(),
                        )
                        .unwrap();
                        let fx = block_forward(&spec, &block, &params, mode, &x).unwrap();
                        let fz = block_forward(&spec, &block, &params, mode, &z).unwrap();
                        let fc = block_forward(&spec, &block, &params, mode, &comb).unwrap();
                        for ((c, a), b) in fc.data().iter().zip(fx.data()).zip(fz.data()) {
                            assert!((c - (1.5 * a - 0.5 * b)).abs() <= 1e-10);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn layer_counts_and_param_names_agree_with_graph() {
    let spec = WeightSpaceSpec::parse("2,3,3,2").unwrap();
    let layer = DwsLayer::new(&spec, 3, 4, PoolMode::Sum, "l");
    let specs = layer.param_specs();
    assert_eq!(count_params(&specs), layer.param_count());
    let subs = spec.subspaces();
    let table: usize = subs
        .iter()
        .flat_map(|&s| subs.iter().map(move |&t| (s, t)))
        .map(|(s, t)| table_count(&spec, s, t))
        .sum();
    assert_eq!(layer.param_count(), 12 * table + 4 * 9);
    let mut g = Graph::new();
    let inputs = weight_space_inputs(&mut g, &spec, 2, 3).unwrap();
    layer.build(&mut g, &inputs).unwrap();
    let mut from_graph: Vec<(String, Vec<usize>)> = g
        .params()
        .into_iter()
        .map(|(n, s)| (n.to_string(), s.to_vec()))
        .collect();
    let mut declared: Vec<(String, Vec<usize>)> =
        specs.into_iter().map(|p| (p.name, p.shape)).collect();
    from_graph.sort();
    declared.sort();
    assert_eq!(from_graph, declared);
}

#[test]
fn layer_is_equivariant_with_bias() {
    let spec = WeightSpaceSpec::parse("2,3,4,2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = DwsLayer::new(&spec, 2, 3, PoolMode::Sum, "l");
    for _ in 0..10 {
        let params = random_params(&layer.param_specs(), &mut rng);
        let g = sample_group_element(&spec, &mut rng);
        let v = WeightSpaceVector::random(&spec, 2, &mut rng);
        let lhs = dws_forward(&layer, &params, &v.act(&g).unwrap()).unwrap();
        let rhs = dws_forward(&layer, &params, &v).unwrap().act(&g).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-9);
        assert_eq!(lhs.channels(), 3);
    }
    let zero = init_params::<f64, _>(&layer.param_specs(), 0.0, &mut rng);
    let out = dws_forward(&layer, &zero, &WeightSpaceVector::zeros(&spec, 2)).unwrap();
    assert_eq!(out.max_abs(), 0.0);
    assert!(dws_forward(&layer, &zero, &WeightSpaceVector::zeros(&spec, 1)).is_err());
}

#[test]
fn invariant_head_properties() {
    let spec = WeightSpaceSpec::parse("2,3,3,2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let head = InvariantHead::new(&spec, 3, 5, PoolMode::Sum, "head");
    assert_eq!(head.pooled_len(), 9 * 3);
    assert_eq!(orbit_count(&spec), 9);
    let params = random_params(&head.param_specs(), &mut rng);
    for _ in 0..20 {
        let v = WeightSpaceVector::random(&spec, 3, &mut rng);
        let g = sample_group_element(&spec, &mut rng);
        let a = invariant_forward(&head, &params, &v).unwrap();
        let b = invariant_forward(&head, &params, &v.act(&g).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
    let zero = init_params::<f64, _>(&head.param_specs(), 0.0, &mut rng);
    let out =
        invariant_forward(&head, &zero, &WeightSpaceVector::random(&spec, 3, &mut rng)).unwrap();
    assert!(out.iter().all(|&x| x == 0.0));
}

#[test]
fn init_statistics() {
    let specs = vec![ParamSpec {
        name: "w".into(),
        shape: vec![64, 64],
        kind: ParamKind::Matrix,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(init_params::<f64, _>(&specs, 0.0, &mut rng)["w"]
        .data()
        .iter()
        .all(|&x| x == 0.0));
    let mu = 0.7;
    let mut sq = 0.0f64;
    let mut n = 0.0;
    for _ in 0..10 {
        for &x in init_params::<f64, _>(&specs, mu, &mut rng)["w"].data() {
            sq += x * x;
            n += 1.0;
        }
    }
    let std = (sq / n).sqrt();
    let want = mu * (2.0f64 / 64.0).sqrt();
    assert!((std / want - 1.0).abs() < 0.2, "{std} vs {want}");
    let a = init_params::<f64, _>(&specs, mu, &mut ChaCha8Rng::seed_from_u64(9));
    let b = init_params::<f64, _>(&specs, mu, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);

    // in = 64, out = 16
    let rect = vec![ParamSpec {
        name: "w".into(),
        shape: vec![64, 16],
        kind: ParamKind::Matrix,
    }];
    let w = init_params::<f64, _>(&rect, mu, &mut rng);
    let d = w["w"].data();
    let std = (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt();
    let want = mu * (2.0f64 * 16.0 / 64.0).sqrt() * (2.0f64 / 80.0).sqrt();
    assert!((std / want - 1.0).abs() < 0.1, "{std} vs {want}");
}

#[test]
fn network_output_is_invariant() {
    let spec = WeightSpaceSpec::parse("1,3,3,1").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for pool in [PoolMode::Sum, PoolMode::Max] {
        let net = DwsNet::new(
            &spec,
            DwsNetConfig {
                channels: vec![4, 4],
                pool,
                ..Default::default()
            },
        )
        .unwrap();
        let params = init_params::<f64, _>(&net.param_specs(), 1.0, &mut rng);
        let mut g = Graph::new();
        let out = net.build(&mut g, 3).unwrap();
        let vs: Vec<WeightSpaceVector> = (0..3)
            .map(|_| WeightSpaceVector::random(&spec, 1, &mut rng))
            .collect();
        let run = |vs: &[WeightSpaceVector]| {
            let flats: Vec<Vec<f64>> = vs.iter().map(|v| v.flatten().into_data()).collect();
            let rows: Vec<&[f64]> = flats.iter().map(|r| r.as_slice()).collect();
            let mut b = Bindings::new();
            for (n, t) in &params {
                b.bind(n.as_str(), t);
            }
            for (n, t) in batch_inputs::<f64>(&spec, &rows).unwrap() {
                b.bind_owned(n, t);
            }
            g.forward(&b).unwrap().value(out).data().to_vec()
        };
        let base = run(&vs);
        let moved: Vec<WeightSpaceVector> = vs
            .iter()
            .map(|v| v.act(&sample_group_element(&spec, &mut rng)).unwrap())
            .collect();
        for (a, b) in base.iter().zip(run(&moved)) {
            assert!((a - b).abs() <= 1e-8, "{pool}: {a} vs {b}");
        }
    }
}
