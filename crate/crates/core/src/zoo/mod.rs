//! Input networks: evaluating an MLP stored as a weight-space vector,
//! fitting sine-wave INRs and assembling them into datasets.

mod config;
mod inr;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weight_space::WeightSpaceVector;

pub use config::ZooConfig;
pub use inr::{generate_sine_dataset, max_fit_error, train_inr, InrFit, SineTask, OMEGA0};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Sine,
    None,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Sine => x.sin(),
            ActivationKind::None => x,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Sine => "sine",
            ActivationKind::None => "none",
        })
    }
}

impl FromStr for ActivationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ActivationKind::Relu),
            "sine" => Ok(ActivationKind::Sine),
            "none" => Ok(ActivationKind::None),
            _ => Err(Error::Config(format!("unknown activation `{s}`"))),
        }
    }
}

/// Evaluates the network held in channel 0 of `v` at `x`. Hidden layers apply
/// `act`; the last layer is affine.
pub fn mlp_forward(v: &WeightSpaceVector, x: &[f64], act: ActivationKind) -> Result<Vec<f64>> {
    mlp_forward_with(v, x, act, false)
}

/// As [`mlp_forward`], optionally applying `act` after the last layer too.
pub fn mlp_forward_with(
    v: &WeightSpaceVector,
    x: &[f64],
    act: ActivationKind,
    final_activation: bool,
) -> Result<Vec<f64>> {
    let spec = v.spec();
    if v.channels() != 1 {
        return Err(Error::shape(
            "mlp_forward",
            format!("expects one channel, got {}", v.channels()),
        ));
    }
    if x.len() != spec.dim(0) {
        return Err(Error::shape(
            "mlp_forward",
            format!("input of length {}, expected {}", x.len(), spec.dim(0)),
        ));
    }
    let m = spec.layers();
    let mut h = x.to_vec();
    for l in 1..=m {
        let (rows, cols) = (spec.dim(l), spec.dim(l - 1));
        let w = v.weight(l).data();
        let b = v.bias(l).data();
        h = (0..rows)
            .map(|i| {
                let z = b[i] + (0..cols).map(|j| w[i * cols + j] * h[j]).sum::<f64>();
                if l < m || final_activation {
                    act.apply(z)
                } else {
                    z
                }
            })
            .collect();
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::sample_group_element;
    use crate::tensor::Tensor;
    use crate::weight_space::WeightSpaceSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let spec = WeightSpaceSpec::parse("3,4,2").unwrap();
        let v = WeightSpaceVector::zeros(&spec, 1);
        assert_eq!(
            mlp_forward(&v, &[1.0, -2.0, 3.0], ActivationKind::Relu).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn hand_computed_output() {
        let spec = WeightSpaceSpec::parse("1,1,1").unwrap();
        let w = vec![
            Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap(),
            Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap(),
        ];
        let b = vec![
            Tensor::new(vec![1, 1], vec![0.0]).unwrap(),
            Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
        ];
        let v = WeightSpaceVector::from_parts(&spec, w, b).unwrap();
        assert_eq!(
            mlp_forward(&v, &[1.0], ActivationKind::Relu).unwrap(),
            vec![7.0]
        );
        assert_eq!(
            mlp_forward(&v, &[-1.0], ActivationKind::Relu).unwrap(),
            vec![1.0]
        );
        let y = mlp_forward_with(&v, &[1.0], ActivationKind::Sine, true).unwrap()[0];
        assert_eq!(y, (3.0 * 2f64.sin() + 1.0).sin());
    }

    #[test]
    fn shape_errors() {
        let spec = WeightSpaceSpec::parse("2,3,1").unwrap();
        let v = WeightSpaceVector::zeros(&spec, 1);
        assert!(mlp_forward(&v, &[1.0], ActivationKind::Relu).is_err());
        let v2 = WeightSpaceVector::zeros(&spec, 2);
        assert!(mlp_forward(&v2, &[1.0, 2.0], ActivationKind::Relu).is_err());
    }

    #[test]
    fn permuted_networks_compute_the_same_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = WeightSpaceSpec::parse("3,5,4,2").unwrap();
        for act in [ActivationKind::Relu, ActivationKind::Sine] {
            for _ in 0..20 {
                let v = WeightSpaceVector::random(&spec, 1, &mut rng);
                let g = sample_group_element(&spec, &mut rng);
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a = mlp_forward(&v, &x, act).unwrap();
                let b = mlp_forward(&v.act(&g).unwrap(), &x, act).unwrap();
                for (p, q) in a.iter().zip(&b) {
                    assert!((p - q).abs() <= 1e-12, "{act}: {p} vs {q}");
                }
            }
        }
    }

    #[test]
    fn activation_names_round_trip() {
        for a in [
            ActivationKind::Relu,
            ActivationKind::Sine,
            ActivationKind::None,
        ] {
            assert_eq!(a.to_string().parse::<ActivationKind>().unwrap(), a);
        }
        assert!("tanh".parse::<ActivationKind>().is_err());
    }
}
