use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{mlp_forward, ActivationKind, ZooConfig};
use crate::error::{Error, Result};
use crate::graph::{Bindings, Graph, NodeId};
use crate::optim::{AdamConfig, OptimizerState, ParamStore};
use crate::symmetry::orbit_normalization;
use crate::tensor::Tensor;
use crate::weight_space::dataset::{Dataset, Manifest, NetworkRecord, Splits};
use crate::weight_space::{WeightSpaceSpec, WeightSpaceVector, DEFAULT_STD_FLOOR};

/// Default frequency scale of the first sine layer during fitting. It is
/// folded into the exported `W_1` and `b_1`, so stored networks use plain `sin`.
pub const OMEGA0: f64 = 3.0;

/// `x -> amplitude · sin(frequency · x)` sampled on an even grid over `[-pi, pi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SineTask {
    pub frequency: f64,
    pub amplitude: f64,
    pub grid: Vec<f64>,
}

impl SineTask {
    pub fn new(frequency: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config("grid needs at least two points".into()));
        }
        let step = 2.0 * PI / (points - 1) as f64;
        Ok(SineTask {
            frequency,
            amplitude: 1.0,
            grid: (0..points).map(|i| -PI + step * i as f64).collect(),
        })
    }

    pub fn target(&self, x: f64) -> f64 {
        self.amplitude * (self.frequency * x).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InrFit {
    pub vector: WeightSpaceVector,
    /// Mean squared error on the grid after the last step.
    pub loss: f64,
}

fn inr_graph(spec: &WeightSpaceSpec, n: usize, omega0: f64) -> Result<(Graph, NodeId, NodeId)> {
    let mut g = Graph::new();
    let mut h = g.input("x", &[n, 1])?;
    let m = spec.layers();
    for l in 1..=m {
        let w = g.param(&format!("w{l}"), &[spec.dim(l - 1), spec.dim(l)])?;
        let b = g.param(&format!("b{l}"), &[spec.dim(l)])?;
        let z = g.matmul(h, w)?;
        let bb = g.broadcast(b, 0, n)?;
        h = g.add(z, bb)?;
        if l == 1 {
            h = g.scale(h, omega0);
        }
        if l < m {
            h = g.sine(h);
        }
    }
    let y = g.input("y", &[n, 1])?;
    let loss = g.mse(h, y)?;
    Ok((g, h, loss))
}

/// First layer `U(-1/d_0, 1/d_0)`, later layers `U(±sqrt(6/n))`, biases `U(±1/sqrt(n))`.
fn siren_init(spec: &WeightSpaceSpec, rng: &mut impl Rng) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for l in 1..=spec.layers() {
        let (a, b) = (spec.dim(l - 1), spec.dim(l));
        let n = a as f64;
        let wb = if l == 1 { 1.0 / n } else { (6.0 / n).sqrt() };
        let bb = 1.0 / n.sqrt();
        let w = (0..a * b).map(|_| rng.random_range(-wb..wb)).collect();
        let bias = (0..b).map(|_| rng.random_range(-bb..bb)).collect();
        p.insert(format!("w{l}"), Tensor::new(vec![a, b], w).expect("shape"));
        p.insert(format!("b{l}"), Tensor::new(vec![b], bias).expect("shape"));
    }
    p
}

fn export(spec: &WeightSpaceSpec, p: &ParamStore<f64>, omega0: f64) -> Result<WeightSpaceVector> {
    let m = spec.layers();
    let mut weights = Vec::with_capacity(m);
    let mut biases = Vec::with_capacity(m);
    for l in 1..=m {
        let (a, b) = (spec.dim(l - 1), spec.dim(l));
        let s = if l == 1 { omega0 } else { 1.0 };
        let w = p[&format!("w{l}")].data();
        let wt = (0..b)
            .flat_map(|i| (0..a).map(move |j| s * w[j * b + i]))
            .collect();
        weights.push(Tensor::new(vec![1, b, a], wt)?);
        biases.push(Tensor::new(
            vec![1, b],
            p[&format!("b{l}")].data().iter().map(|x| s * x).collect(),
        )?);
    }
    WeightSpaceVector::from_parts(spec, weights, biases)
}

/// Fits a SIREN to `task` by full-batch Adam on the grid MSE; the first
/// layer's pre-activation is scaled by `omega0`.
pub fn train_inr(
    task: &SineTask,
    spec: &WeightSpaceSpec,
    steps: usize,
    lr: f64,
    omega0: f64,
    seed: u64,
) -> Result<InrFit> {
    let d = spec.dims();
    if d[0] != 1 || d[d.len() - 1] != 1 {
        return Err(Error::Config(format!(
            "INR architecture must map 1 -> 1, got [{spec}]"
        )));
    }
    let n = task.grid.len();
    let (g, _, loss) = inr_graph(spec, n, omega0)?;
    let x = Tensor::new(vec![n, 1], task.grid.clone())?;
    let y = Tensor::new(
        vec![n, 1],
        task.grid.iter().map(|&t| task.target(t)).collect(),
    )?;
    let mut params = siren_init(spec, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut opt = OptimizerState::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut last = f64::NAN;
    for step in 0..=steps {
        let mut b = Bindings::new();
        b.bind("x", &x).bind("y", &y);
        for (k, v) in &params {
            b.bind(k.as_str(), v);
        }
        let (eval, grads) = if step < steps {
            let (e, gr) = g.backward(&b, loss)?;
            (e, Some(gr))
        } else {
            (g.forward(&b)?, None)
        };
        last = eval.value(loss).data()[0];
        if !last.is_finite() {
            return Err(Error::Diverged {
                seed,
                message: format!("INR loss is {last} at step {step}"),
            });
        }
        drop(eval);
        drop(b);
        if let Some(gr) = grads {
            opt.step(&mut params, &gr).map_err(|e| Error::Diverged {
                seed,
                message: e.to_string(),
            })?;
        }
    }
    Ok(InrFit {
        vector: export(spec, &params, omega0)?,
        loss: last,
    })
}

/// Largest absolute deviation of the stored network from the target on the grid.
pub fn max_fit_error(v: &WeightSpaceVector, task: &SineTask) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &x in &task.grid {
        let y = mlp_forward(v, &[x], ActivationKind::Sine)?[0];
        worst = worst.max((y - task.target(x)).abs());
    }
    Ok(worst)
}

/// Fits `config.count` INRs with independent seeds and frequencies
/// `U(freq_lo, freq_hi)`. Fits above the error threshold are listed in the
/// manifest and replaced by fresh draws; if `count` extra attempts are not
/// enough, the training split absorbs the shortfall.
pub fn generate_sine_dataset(config: &ZooConfig) -> Result<Dataset> {
    config.validate()?;
    let spec = &config.arch;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    let mut worst_kept: f64 = 0.0;
    // rejected fits are replaced by fresh draws, up to `count` extra attempts
    let max_attempts = 2 * config.count;
    let mut attempts = 0;
    while records.len() < config.count && attempts < max_attempts {
        let i = attempts;
        attempts += 1;
        let seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let freq = rng.random_range(config.freq_lo..config.freq_hi);
        let task = SineTask::new(freq, config.grid)?;
        let fit = match train_inr(&task, spec, config.steps, config.lr, config.omega0, seed) {
            Ok(f) => f,
            Err(Error::Diverged { message, .. }) => {
                excluded.push(
                    json!({"attempt": i, "seed": seed, "frequency": freq, "reason": message}),
                );
                continue;
            }
            Err(e) => return Err(e),
        };
        let err = max_fit_error(&fit.vector, &task)?;
        if err > config.threshold {
            log::debug!("INR attempt {i} (frequency {freq:.3}) dropped: max error {err:.3}");
            excluded.push(json!({"attempt": i, "seed": seed, "frequency": freq, "max_error": err}));
            continue;
        }
        worst_kept = worst_kept.max(err);
        records.push(NetworkRecord::from_vector(&fit.vector, freq, seed));
        if records.len() % 50 == 0 {
            log::info!("fitted {}/{} INRs", records.len(), config.count);
        }
    }
    let [_, n_val, n_test] = config.splits;
    let kept = records.len();
    if kept < n_val + n_test + 1 {
        return Err(Error::Dataset(format!(
            "only {kept} of {attempts} fits met the threshold {}",
            config.threshold
        )));
    }
    let n_train = kept - n_val - n_test;
    let splits = Splits {
        train: (0..n_train).collect(),
        val: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..kept).collect(),
    };
    let rows: Vec<Vec<f64>> = splits.train.iter().map(|&i| records[i].flat()).collect();
    let normalization =
        orbit_normalization(spec, rows.iter().map(Vec::as_slice), DEFAULT_STD_FLOOR)?;
    let meta = json!({
        "task": "sine_frequency",
        "activation": ActivationKind::Sine,
        "omega0": config.omega0,
        "omega0_folded_into_first_layer": true,
        "amplitude": 1.0,
        "grid": config.grid,
        "freq_range": [config.freq_lo, config.freq_hi],
        "steps": config.steps,
        "lr": config.lr,
        "seed": config.seed,
        "requested_splits": config.splits,
        "fit_threshold": config.threshold,
        "max_kept_error": worst_kept,
        "attempts": attempts,
        "excluded": excluded,
        "normalization": "train-split statistics pooled per orbit, applied before augmentation",
    });
    Ok(Dataset {
        manifest: Manifest {
            splits,
            normalization,
            spec: spec.clone(),
            meta,
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: &str) -> WeightSpaceSpec {
        WeightSpaceSpec::parse(d).unwrap()
    }

    #[test]
    fn grid_covers_the_interval() {
        let t = SineTask::new(2.0, 5).unwrap();
        assert_eq!(t.grid.len(), 5);
        assert_eq!(t.grid[0], -PI);
        assert!((t.grid[4] - PI).abs() < 1e-15);
        assert!(t.grid.windows(2).all(|w| w[0] < w[1]));
        assert!(SineTask::new(1.0, 1).is_err());
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let s = spec("1,8,8,1");
        let t = SineTask::new(1.0, 32).unwrap();
        let fit = train_inr(&t, &s, 0, 1e-3, OMEGA0, 5).unwrap();
        let init = export(
            &s,
            &siren_init(&s, &mut ChaCha8Rng::seed_from_u64(5)),
            OMEGA0,
        )
        .unwrap();
        assert_eq!(fit.vector, init);
    }

    #[test]
    fn folded_export_matches_the_training_graph() {
        let s = spec("1,8,8,1");
        let t = SineTask::new(3.0, 64).unwrap();
        let fit = train_inr(&t, &s, 25, 1e-3, OMEGA0, 9).unwrap();
        let mse = t
            .grid
            .iter()
            .map(|&x| {
                let y = mlp_forward(&fit.vector, &[x], ActivationKind::Sine).unwrap()[0];
                (y - t.target(x)).powi(2)
            })
            .sum::<f64>()
            / t.grid.len() as f64;
        assert!(
            (mse - fit.loss).abs() <= 1e-12 * fit.loss.max(1.0),
            "{mse} vs {}",
            fit.loss
        );
    }

    #[test]
    fn same_seed_same_fit() {
        let s = spec("1,6,6,1");
        let t = SineTask::new(2.5, 40).unwrap();
        let a = train_inr(&t, &s, 30, 1e-3, OMEGA0, 3).unwrap();
        let b = train_inr(&t, &s, 30, 1e-3, OMEGA0, 3).unwrap();
        assert_eq!(a, b);
        let c = train_inr(&t, &s, 30, 1e-3, OMEGA0, 4).unwrap();
        assert_ne!(a.vector, c.vector);
    }

    /// Pilot runs at the desk defaults reached 1.0e-3 for this task.
    #[test]
    fn desk_fit_reaches_target_quality() {
        let c = ZooConfig::default();
        let t = SineTask::new(1.0, c.grid).unwrap();
        let fit = train_inr(&t, &c.arch, c.steps, c.lr, c.omega0, 1).unwrap();
        assert!(fit.loss <= 1e-2, "loss {}", fit.loss);
        assert!(max_fit_error(&fit.vector, &t).unwrap() <= c.threshold);
    }

    #[test]
    fn rejects_non_scalar_architectures() {
        let t = SineTask::new(1.0, 8).unwrap();
        assert!(train_inr(&t, &spec("2,4,1"), 1, 1e-3, OMEGA0, 0).is_err());
    }

    fn tiny_config() -> ZooConfig {
        ZooConfig {
            count: 10,
            arch: spec("1,4,1"),
            grid: 16,
            steps: 20,
            splits: [6, 2, 2],
            threshold: 1e3,
            ..ZooConfig::default()
        }
    }

    #[test]
    fn small_dataset_is_well_formed() {
        let c = tiny_config();
        let ds = generate_sine_dataset(&c).unwrap();
        assert_eq!(ds.records.len(), 10);
        ds.manifest.splits.check_disjoint(10).unwrap();
        assert_eq!(ds.manifest.splits.train.len(), 6);
        assert!(ds
            .records
            .iter()
            .all(|r| r.label > c.freq_lo && r.label < c.freq_hi));
        let seeds: std::collections::BTreeSet<u64> = ds.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 10);
        assert_eq!(ds.manifest.normalization.mean.len(), c.arch.flat_dim());
        assert_eq!(ds.manifest.meta["omega0"], c.omega0);
    }

    #[test]
    fn poor_fits_are_excluded() {
        let c = ZooConfig {
            threshold: 1e-9,
            ..tiny_config()
        };
        assert!(matches!(generate_sine_dataset(&c), Err(Error::Dataset(_))));
        let c = ZooConfig {
            threshold: 0.9,
            steps: 0,
            ..tiny_config()
        };
        match generate_sine_dataset(&c) {
            Ok(ds) => {
                let dropped = ds.manifest.meta["excluded"].as_array().unwrap().len();
                let attempts = ds.manifest.meta["attempts"].as_u64().unwrap() as usize;
                assert_eq!(dropped + ds.records.len(), attempts);
                assert!(attempts <= 20);
                assert_eq!(ds.manifest.splits.train.len(), ds.records.len() - 4);
                assert!(dropped == 0 || attempts > 10 || ds.records.len() < 10);
            }
            Err(Error::Dataset(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
}
