use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train_model, ExperimentConfig, ModelKind, Precision, Predictor, RunReport};
use crate::error::{Error, Result};
use crate::weight_space::dataset::Dataset;

/// One line of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub kind: ModelKind,
    pub size: usize,
    pub seed: u64,
    pub lr: f64,
    pub test_mse: f64,
    pub params: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct CurveRun {
    pub row: CurveRow,
    pub report: RunReport,
    pub predictor: Predictor,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveSummary {
    pub kind: ModelKind,
    pub size: usize,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

/// Trains every `kind` on the first `size` training records for each size,
/// with seeds `config.seed .. config.seed + seeds`.
pub fn run_curve(
    dataset: &Dataset,
    config: &ExperimentConfig,
    sizes: &[usize],
    kinds: &[ModelKind],
    seeds: usize,
    precision: Precision,
) -> Result<Vec<CurveRun>> {
    let available = dataset.manifest.splits.train.len();
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > available) {
        return Err(Error::Config(format!(
            "train size {s} not available (training split has {available})"
        )));
    }
    let mut out = Vec::new();
    for &size in sizes {
        for &kind in kinds {
            for k in 0..seeds as u64 {
                let cfg = ExperimentConfig {
                    seed: config.seed + k,
                    train_size: Some(size),
                    ..config.clone()
                };
                let (report, predictor) = train_model(kind, dataset, &cfg, precision)?;
                log::info!(
                    "{kind} size {size} seed {}: test MSE {:.4e} (lr {}, {:.1}s)",
                    cfg.seed,
                    report.test_mse,
                    report.selected_lr,
                    report.seconds
                );
                out.push(CurveRun {
                    row: CurveRow {
                        kind,
                        size,
                        seed: cfg.seed,
                        lr: report.selected_lr,
                        test_mse: report.test_mse,
                        params: report.params,
                        seconds: report.seconds,
                    },
                    report,
                    predictor,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Dataset(format!("{}: {e}", path.display()))
    }
}

/// Mean and spread of the test MSE per (kind, size).
pub fn summarize(rows: &[CurveRow]) -> Vec<CurveSummary> {
    let mut groups: BTreeMap<(ModelKind, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.kind, r.size)).or_default().push(r.test_mse);
    }
    groups
        .into_iter()
        .map(|((kind, size), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            CurveSummary {
                kind,
                size,
                runs: v.len(),
                mean,
                std,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: ModelKind, size: usize, seed: u64, mse: f64) -> CurveRow {
        CurveRow {
            kind,
            size,
            seed,
            lr: 5e-4,
            test_mse: mse,
            params: 6713,
            seconds: 1.25,
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![
            row(ModelKind::Dws, 50, 0, 0.1 + 0.2),
            row(ModelKind::MlpPermAug, 400, 2, 1.0 / 3.0),
            row(ModelKind::Mlp, 100, 1, 5e-324),
        ];
        write_curve_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("kind,size,seed,lr,test_mse,params,seconds\n"));
        assert!(text.contains("mlp-perm-aug,400,2,"));
        assert_eq!(read_curve_csv(&path).unwrap(), rows);
    }

    #[test]
    fn summary_statistics() {
        let rows = vec![
            row(ModelKind::Dws, 50, 0, 1.0),
            row(ModelKind::Dws, 50, 1, 3.0),
            row(ModelKind::Mlp, 50, 0, 2.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].kind, s[0].runs, s[0].mean), (ModelKind::Dws, 2, 2.0));
        assert!((s[0].std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1].std, 0.0);
    }
}
