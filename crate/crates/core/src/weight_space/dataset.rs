//! On-disk datasets of MLP weight vectors.
//!
//! A dataset directory holds `networks.jsonl` (one [`NetworkRecord`] per
//! line) and `manifest.json` ([`Manifest`]).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NormalizationStats, WeightSpaceSpec, WeightSpaceVector};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORDS_FILE: &str = "networks.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub dims: Vec<usize>,
    /// Row-major `W_m`, one list per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub label: f64,
    pub seed: u64,
}

impl NetworkRecord {
    pub fn from_vector(v: &WeightSpaceVector, label: f64, seed: u64) -> Self {
        let m = v.spec().layers();
        NetworkRecord {
            dims: v.spec().dims().to_vec(),
            weights: (1..=m).map(|l| v.weight(l).data().to_vec()).collect(),
            biases: (1..=m).map(|l| v.bias(l).data().to_vec()).collect(),
            label,
            seed,
        }
    }

    pub fn to_vector(&self) -> Result<WeightSpaceVector> {
        let spec = WeightSpaceSpec::new(self.dims.clone())?;
        let m = spec.layers();
        if self.weights.len() != m || self.biases.len() != m {
            return Err(Error::Dataset(format!(
                "record (seed {}) has {} weights / {} biases for {m} layers",
                self.seed,
                self.weights.len(),
                self.biases.len()
            )));
        }
        let weights = (1..=m)
            .map(|l| {
                Tensor::new(
                    vec![1, spec.dim(l), spec.dim(l - 1)],
                    self.weights[l - 1].clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = (1..=m)
            .map(|l| Tensor::new(vec![1, spec.dim(l)], self.biases[l - 1].clone()))
            .collect::<Result<Vec<_>>>()?;
        WeightSpaceVector::from_parts(&spec, weights, biases)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn check_disjoint(&self, total: usize) -> Result<()> {
        let mut seen = vec![false; total];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= total {
                return Err(Error::Dataset(format!(
                    "split index {i} out of range ({total} records)"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Dataset(format!(
                    "record {i} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub splits: Splits,
    pub normalization: NormalizationStats,
    pub spec: WeightSpaceSpec,
    /// Generation settings and provenance (activation, first-layer frequency
    /// scale, fit threshold, excluded fits, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<NetworkRecord>,
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RECORDS_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let mpath = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let path = dir.join(RECORDS_FILE);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: NetworkRecord = serde_json::from_str(&line)?;
            if r.dims != manifest.spec.dims() {
                return Err(Error::Dataset(format!(
                    "record dims {:?} differ from manifest spec [{}]",
                    r.dims, manifest.spec
                )));
            }
            records.push(r);
        }
        manifest.splits.check_disjoint(records.len())?;
        if manifest.normalization.mean.len() != manifest.spec.flat_dim() {
            return Err(Error::Dataset(
                "normalization length does not match spec".into(),
            ));
        }
        Ok(Dataset { manifest, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn record_vector_round_trip() {
        let spec = WeightSpaceSpec::parse("1,4,3,1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = WeightSpaceVector::random(&spec, 1, &mut rng);
        let r = NetworkRecord::from_vector(&v, 2.5, 9);
        assert_eq!(r.to_vector().unwrap(), v);
        assert_eq!(r.flat(), v.flatten().into_data());
    }

    #[test]
    fn dataset_files_round_trip() {
        let spec = WeightSpaceSpec::parse("1,2,1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<_> = (0..4)
            .map(|i| {
                NetworkRecord::from_vector(
                    &WeightSpaceVector::random(&spec, 1, &mut rng),
                    i as f64,
                    i,
                )
            })
            .collect();
        let norm = NormalizationStats::compute(
            records
                .iter()
                .map(|r| r.flat())
                .collect::<Vec<_>>()
                .iter()
                .map(|r| r.as_slice()),
            1e-8,
        )
        .unwrap();
        let ds = Dataset {
            manifest: Manifest {
                splits: Splits {
                    train: vec![0, 1],
                    val: vec![2],
                    test: vec![3],
                },
                normalization: norm,
                spec,
                meta: serde_json::json!({"note": "x"}),
            },
            records,
        };
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.manifest, ds.manifest);
    }

    #[test]
    fn overlapping_splits_rejected() {
        let s = Splits {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        assert!(s.check_disjoint(3).is_err());
    }
}
