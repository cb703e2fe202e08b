use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{build_model, ExperimentConfig, Model, ModelKind, Precision};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Bindings, Graph, NodeId};
use crate::layers::init_params;
use crate::optim::{AdamConfig, OptimizerState, ParamStore};
use crate::symmetry::{orbit_normalization, sample_group_element};
use crate::tensor::{Real, Tensor};
use crate::weight_space::dataset::Dataset;
use crate::weight_space::{
    NormalizationStats, WeightSpaceSpec, WeightSpaceVector, DEFAULT_STD_FLOOR,
};

/// Largest batch used when only predicting.
const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrTrace {
    pub lr: f64,
    /// Mean standardized training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE in label units: before training, then after each epoch.
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: ModelKind,
    pub seed: u64,
    pub train_size: usize,
    pub precision: Precision,
    pub params: usize,
    pub traces: Vec<LrTrace>,
    pub selected_lr: f64,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub test_mse: f64,
    /// Wall-clock; the only field that varies between identical runs.
    pub seconds: f64,
}

/// A trained model together with everything needed to map raw weight
/// vectors to labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub kind: ModelKind,
    pub spec: WeightSpaceSpec,
    pub config: ExperimentConfig,
    pub model: Model,
    pub params: ParamStore<f64>,
    pub normalization: NormalizationStats,
    pub label_mean: f64,
    pub label_std: f64,
    pub precision: Precision,
}

struct Cache {
    graphs: HashMap<usize, (Graph, NodeId, NodeId)>,
}

impl Cache {
    fn get(&mut self, model: &Model, batch: usize) -> Result<&(Graph, NodeId, NodeId)> {
        if !self.graphs.contains_key(&batch) {
            let mut g = Graph::new();
            let out = model.build(&mut g, batch)?;
            let y = g.input("y", &[batch, 1])?;
            let loss = g.mse(out, y)?;
            self.graphs.insert(batch, (g, out, loss));
        }
        Ok(&self.graphs[&batch])
    }
}

/// Standardized predictions for normalized rows.
fn predict_rows<T: Real>(
    cache: &mut Cache,
    model: &Model,
    spec: &WeightSpaceSpec,
    params: &ParamStore<T>,
    rows: &[&[f64]],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_BATCH) {
        let inputs = model.inputs::<T>(spec, chunk)?;
        let y = Tensor::<T>::zeros(&[chunk.len(), 1]);
        let (g, pred, _) = cache.get(model, chunk.len())?;
        let mut b = Bindings::new();
        b.bind("y", &y);
        for (k, v) in params {
            b.bind(k.as_str(), v);
        }
        for (k, v) in &inputs {
            b.bind(k.as_str(), v);
        }
        let eval = g.forward(&b)?;
        out.extend(eval.value(*pred).data().iter().map(|x| x.as_f64()));
    }
    Ok(out)
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len().max(1) as f64
}

struct Split {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl Split {
    fn refs(&self) -> Vec<&[f64]> {
        self.rows.iter().map(Vec::as_slice).collect()
    }
}

struct Prepared {
    spec: WeightSpaceSpec,
    normalization: NormalizationStats,
    label_mean: f64,
    label_std: f64,
    train: Split,
    val: Split,
    test: Split,
}

fn prepare(dataset: &Dataset, train_size: Option<usize>) -> Result<Prepared> {
    let m = &dataset.manifest;
    m.splits.check_disjoint(dataset.records.len())?;
    let n = train_size.unwrap_or(m.splits.train.len());
    if n == 0 || n > m.splits.train.len() {
        return Err(Error::Config(format!(
            "train size {n} not available (training split has {})",
            m.splits.train.len()
        )));
    }
    if m.splits.val.is_empty() || m.splits.test.is_empty() {
        return Err(Error::Dataset(
            "validation and test splits must be non-empty".into(),
        ));
    }
    let raw = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        idx.iter()
            .map(|&i| (dataset.records[i].flat(), dataset.records[i].label))
            .unzip()
    };
    let (train_raw, train_labels) = raw(&m.splits.train[..n]);
    let normalization = orbit_normalization(
        &m.spec,
        train_raw.iter().map(Vec::as_slice),
        DEFAULT_STD_FLOOR,
    )?;
    let label_mean = train_labels.iter().sum::<f64>() / n as f64;
    let label_var = train_labels
        .iter()
        .map(|y| (y - label_mean) * (y - label_mean))
        .sum::<f64>()
        / n as f64;
    let label_std = label_var.sqrt().max(DEFAULT_STD_FLOOR);
    let split = |rows: Vec<Vec<f64>>, labels: Vec<f64>| Split {
        rows: rows.iter().map(|r| normalization.normalize(r)).collect(),
        labels,
    };
    let (vr, vl) = raw(&m.splits.val);
    let (tr, tl) = raw(&m.splits.test);
    Ok(Prepared {
        spec: m.spec.clone(),
        label_mean,
        label_std,
        train: split(train_raw, train_labels),
        val: split(vr, vl),
        test: split(tr, tl),
        normalization,
    })
}

/// Outcome of one learning rate: its trace and the best parameters seen.
fn train_one_lr<T: Real>(
    kind: ModelKind,
    model: &Model,
    data: &Prepared,
    config: &ExperimentConfig,
    lr_index: usize,
    cache: &mut Cache,
) -> Result<(LrTrace, ParamStore<T>)> {
    let lr = config.lrs[lr_index];
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: ParamStore<T> =
        init_params(&model.param_specs(), config.init_scale, &mut init_rng);
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(1 + lr_index as u64);
    let mut opt = OptimizerState::new(
        AdamConfig {
            lr,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        },
        &params,
    );
    let val_refs = data.val.refs();
    let val_mse = |cache: &mut Cache, p: &ParamStore<T>| -> Result<f64> {
        let z = predict_rows(cache, model, &data.spec, p, &val_refs)?;
        let pred: Vec<f64> = z
            .iter()
            .map(|z| z * data.label_std + data.label_mean)
            .collect();
        Ok(mse(&pred, &data.val.labels))
    };
    let mut trace = LrTrace {
        lr,
        train_loss: Vec::new(),
        val_mse: vec![val_mse(cache, &params)?],
        best_epoch: 0,
        best_val_mse: 0.0,
        diverged: None,
    };
    trace.best_val_mse = trace.val_mse[0];
    let mut best = params.clone();
    let n = data.train.rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut data_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    let r = &data.train.rows[i];
                    if kind == ModelKind::MlpPermAug {
                        let g = sample_group_element(&data.spec, &mut data_rng);
                        let v = WeightSpaceVector::unflatten(&data.spec, 1, r)
                            .expect("row length checked");
                        v.act(&g)
                            .expect("element of the spec's group")
                            .flatten()
                            .into_data()
                    } else {
                        r.clone()
                    }
                })
                .collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let inputs = model.inputs::<T>(&data.spec, &refs)?;
            let y: Vec<T> = batch
                .iter()
                .map(|&i| T::of((data.train.labels[i] - data.label_mean) / data.label_std))
                .collect();
            let y = Tensor::new(vec![batch.len(), 1], y)?;
            let (g, _, loss) = cache.get(model, batch.len())?;
            let mut b = Bindings::new();
            for (k, v) in &params {
                b.bind(k.as_str(), v);
            }
            for (k, v) in &inputs {
                b.bind(k.as_str(), v);
            }
            b.bind("y", &y);
            let (eval, grads) = g.backward(&b, *loss)?;
            let l = eval.value(*loss).data()[0].as_f64();
            drop(eval);
            drop(b);
            let step = if l.is_finite() {
                opt.step(&mut params, &grads)
            } else {
                Err(Error::NonFinite("loss".into()))
            };
            if let Err(e) = step {
                trace.diverged = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
            total += l * batch.len() as f64;
        }
        trace.train_loss.push(total / n as f64);
        let v = val_mse(cache, &params)?;
        if !v.is_finite() {
            trace.diverged = Some(format!("epoch {epoch}: validation MSE is {v}"));
            break;
        }
        trace.val_mse.push(v);
        if v < trace.best_val_mse {
            trace.best_val_mse = v;
            trace.best_epoch = epoch;
            best = params.clone();
        }
    }
    log::debug!(
        "{kind} lr {lr}: best val {:.4e} at epoch {}{}",
        trace.best_val_mse,
        trace.best_epoch,
        trace
            .diverged
            .as_deref()
            .map(|d| format!(" (diverged: {d})"))
            .unwrap_or_default()
    );
    Ok((trace, best))
}

fn train_typed<T: Real>(
    kind: ModelKind,
    dataset: &Dataset,
    config: &ExperimentConfig,
    precision: Precision,
) -> Result<(RunReport, Predictor)> {
    config.validate()?;
    let start = Instant::now();
    let data = prepare(dataset, config.train_size)?;
    let model = build_model(kind, &data.spec, config)?;
    let mut cache = Cache {
        graphs: HashMap::new(),
    };
    let mut traces: Vec<LrTrace> = Vec::new();
    let mut chosen: Option<(usize, ParamStore<T>)> = None;
    for li in 0..config.lrs.len() {
        let (trace, best) = train_one_lr::<T>(kind, &model, &data, config, li, &mut cache)?;
        let improves = chosen
            .as_ref()
            .is_none_or(|(ci, _)| trace.best_val_mse < traces[*ci].best_val_mse);
        if trace.diverged.is_none() && improves {
            chosen = Some((li, best));
        }
        traces.push(trace);
    }
    let Some((li, params)) = chosen else {
        return Err(Error::Diverged {
            seed: config.seed,
            message: format!("every learning rate in {:?} failed", config.lrs),
        });
    };
    let z = predict_rows(&mut cache, &model, &data.spec, &params, &data.test.refs())?;
    let pred: Vec<f64> = z
        .iter()
        .map(|z| z * data.label_std + data.label_mean)
        .collect();
    let test_mse = mse(&pred, &data.test.labels);
    let report = RunReport {
        kind,
        seed: config.seed,
        train_size: data.train.rows.len(),
        precision,
        params: model.param_count(),
        selected_lr: traces[li].lr,
        best_epoch: traces[li].best_epoch,
        val_mse: traces[li].best_val_mse,
        traces,
        test_mse,
        seconds: start.elapsed().as_secs_f64(),
    };
    let predictor = Predictor {
        kind,
        spec: data.spec,
        config: config.clone(),
        model,
        params: params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        normalization: data.normalization,
        label_mean: data.label_mean,
        label_std: data.label_std,
        precision,
    };
    Ok((report, predictor))
}

/// Searches the learning-rate grid, keeping the epoch with the lowest
/// validation MSE for each rate, picks the rate with the lowest of those and
/// evaluates it once on the test split.
pub fn train_model(
    kind: ModelKind,
    dataset: &Dataset,
    config: &ExperimentConfig,
    precision: Precision,
) -> Result<(RunReport, Predictor)> {
    match precision {
        Precision::F32 => train_typed::<f32>(kind, dataset, config, precision),
        Precision::F64 => train_typed::<f64>(kind, dataset, config, precision),
    }
}

impl Predictor {
    /// Label predictions for raw (unnormalized) flat weight vectors.
    pub fn predict(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let normalized: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                if r.len() == self.spec.flat_dim() {
                    Ok(self.normalization.normalize(r))
                } else {
                    Err(Error::shape(
                        "predict",
                        format!(
                            "row of length {}, expected {}",
                            r.len(),
                            self.spec.flat_dim()
                        ),
                    ))
                }
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
        let mut cache = Cache {
            graphs: HashMap::new(),
        };
        let z = match self.precision {
            Precision::F64 => {
                predict_rows(&mut cache, &self.model, &self.spec, &self.params, &refs)?
            }
            Precision::F32 => {
                let p: ParamStore<f32> = self
                    .params
                    .iter()
                    .map(|(k, v)| (k.clone(), v.cast()))
                    .collect();
                predict_rows(&mut cache, &self.model, &self.spec, &p, &refs)?
            }
        };
        Ok(z.iter()
            .map(|z| z * self.label_std + self.label_mean)
            .collect())
    }

    pub fn predict_vectors(&self, vs: &[WeightSpaceVector]) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = vs.iter().map(|v| v.flatten().into_data()).collect();
        self.predict(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>())
    }

    /// Test-split MSE of this predictor on `dataset`.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<f64> {
        if dataset.manifest.spec != self.spec {
            return Err(Error::Dataset(format!(
                "dataset spec [{}] differs from the model's [{}]",
                dataset.manifest.spec, self.spec
            )));
        }
        let test = &dataset.manifest.splits.test;
        let rows: Vec<Vec<f64>> = test.iter().map(|&i| dataset.records[i].flat()).collect();
        let labels: Vec<f64> = test.iter().map(|&i| dataset.records[i].label).collect();
        let pred = self.predict(&rows.iter().map(Vec::as_slice).collect::<Vec<_>>())?;
        Ok(mse(&pred, &labels))
    }

    pub fn header(&self) -> serde_json::Value {
        json!({
            "format": "dwsnet-checkpoint",
            "kind": self.kind,
            "spec": self.spec,
            "config": self.config,
            "precision": self.precision,
            "normalization": self.normalization,
            "label_mean": checkpoint::format_f64(self.label_mean),
            "label_std": checkpoint::format_f64(self.label_std),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.header(), &self.params)
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let (header, params) = checkpoint::from_str::<f64>(text)?;
        let field = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header is missing `{k}`")))
        };
        let number = |k: &str| -> Result<f64> {
            field(k)?
                .as_str()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("`{k}` is not a number")))
        };
        let kind: ModelKind = serde_json::from_value(field("kind")?)?;
        let spec: WeightSpaceSpec = serde_json::from_value(field("spec")?)?;
        let config: ExperimentConfig = serde_json::from_value(field("config")?)?;
        let model = build_model(kind, &spec, &config)?;
        for p in model.param_specs() {
            match params.get(&p.name) {
                Some(t) if t.shape() == p.shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "`{}` has shape {:?}, model expects {:?}",
                        p.name,
                        t.shape(),
                        p.shape
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter `{}`", p.name))),
            }
        }
        Ok(Predictor {
            kind,
            spec,
            config,
            model,
            params,
            normalization: serde_json::from_value(field("normalization")?)?,
            label_mean: number("label_mean")?,
            label_std: number("label_std")?,
            precision: serde_json::from_value(field("precision")?)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}
