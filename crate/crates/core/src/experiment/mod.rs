//! Training harness for the sine-frequency regression comparison: model
//! construction, learning-rate search with early stopping, checkpoints and
//! train-size curves.

mod curve;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::layers::{DwsNetConfig, PoolMode};

pub use curve::{
    read_curve_csv, run_curve, summarize, write_curve_csv, CurveRow, CurveRun, CurveSummary,
};
pub use model::{build_model, mlp_param_count, solve_mlp_width, MlpNet, Model};
pub use train::{train_model, LrTrace, Predictor, RunReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "dws")]
    Dws,
    #[serde(rename = "mlp")]
    Mlp,
    #[serde(rename = "mlp-perm-aug")]
    MlpPermAug,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Dws, ModelKind::Mlp, ModelKind::MlpPermAug];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Dws => "dws",
            ModelKind::Mlp => "mlp",
            ModelKind::MlpPermAug => "mlp-perm-aug",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dws" | "dwsnet" => Ok(ModelKind::Dws),
            "mlp" => Ok(ModelKind::Mlp),
            "mlp-perm-aug" => Ok(ModelKind::MlpPermAug),
            _ => Err(Error::Config(format!(
                "unknown model kind `{s}` (dws, mlp, mlp-perm-aug)"
            ))),
        }
    }
}

/// Element type for training and inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub const ENV: &'static str = "DWS_PRECISION";

    /// Reads `DWS_PRECISION`; unset means `f64`.
    pub fn from_env() -> Result<Self> {
        match std::env::var(Self::ENV) {
            Ok(v) => v.parse(),
            Err(std::env::VarError::NotPresent) => Ok(Precision::F64),
            Err(e) => Err(Error::Config(format!("{}: {e}", Self::ENV))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!(
                "precision must be f32 or f64, got `{s}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lrs: Vec<f64>,
    pub weight_decay: f64,
    pub seed: u64,
    /// Leading part of the training split to use; all of it when `None`.
    pub train_size: Option<usize>,
    pub network: DwsNetConfig,
    /// Scale of the initial weight draws.
    pub init_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            epochs: 100,
            batch_size: 32,
            lrs: vec![5e-3, 1e-3, 5e-4, 1e-4],
            weight_decay: 5e-4,
            seed: 0,
            train_size: None,
            network: DwsNetConfig::default(),
            init_scale: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 11] = [
        "epochs",
        "batch",
        "lrs",
        "weight_decay",
        "seed",
        "train_size",
        "channels",
        "pool",
        "head_dim",
        "readout",
        "init_scale",
    ];

    /// Flat `key = value` text; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&Self::KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.get("epochs")? {
            c.epochs = v;
        }
        if let Some(v) = kv.get("batch")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.get_list("lrs")? {
            c.lrs = v;
        }
        if let Some(v) = kv.get("weight_decay")? {
            c.weight_decay = v;
        }
        if let Some(v) = kv.get("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.get("train_size")? {
            c.train_size = Some(v);
        }
        if let Some(v) = kv.get_list("channels")? {
            c.network.channels = v;
        }
        if let Some(v) = kv.get::<PoolMode>("pool")? {
            c.network.pool = v;
        }
        if let Some(v) = kv.get("head_dim")? {
            c.network.head_dim = v;
        }
        if let Some(v) = kv.get::<String>("readout")? {
            c.network.readout = if v.is_empty() {
                Vec::new()
            } else {
                crate::config::parse_list(&v)
                    .map_err(|_| Error::Config(format!("`readout`: cannot parse `{v}`")))?
            };
        }
        if let Some(v) = kv.get("init_scale")? {
            c.init_scale = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() {
            return Err(Error::Config("learning-rate grid is empty".into()));
        }
        if self.lrs.iter().any(|&lr| !(lr > 0.0) || !lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rates must be positive: {:?}",
                self.lrs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.train_size == Some(0) {
            return Err(Error::Config("train_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::Config(
                "weight_decay must be >= 0 and init_scale > 0".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let lrs: Vec<String> = self.lrs.iter().map(ToString::to_string).collect();
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "batch = {}", self.batch_size)?;
        writeln!(f, "lrs = {}", lrs.join(","))?;
        writeln!(f, "weight_decay = {}", self.weight_decay)?;
        writeln!(f, "seed = {}", self.seed)?;
        if let Some(n) = self.train_size {
            writeln!(f, "train_size = {n}")?;
        }
        writeln!(f, "channels = {}", join(&self.network.channels))?;
        writeln!(f, "pool = {}", self.network.pool)?;
        writeln!(f, "head_dim = {}", self.network.head_dim)?;
        writeln!(f, "readout = {}", join(&self.network.readout))?;
        writeln!(f, "init_scale = {}", self.init_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        assert_eq!(
            ExperimentConfig::parse("").unwrap(),
            ExperimentConfig::default()
        );
        let mut c = ExperimentConfig::default();
        c.epochs = 3;
        c.lrs = vec![1e-2];
        c.train_size = Some(50);
        c.network.pool = PoolMode::Sum;
        c.network.readout = Vec::new();
        assert_eq!(ExperimentConfig::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ExperimentConfig::parse("batch = 0").is_err());
        assert!(ExperimentConfig::parse("lrs = ").is_err());
        assert!(ExperimentConfig::parse("lrs = -1").is_err());
        assert!(ExperimentConfig::parse("momentum = 0.9").is_err());
    }

    #[test]
    fn kinds_and_precisions_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
        assert_eq!("f32".parse::<Precision>().unwrap(), Precision::F32);
        assert!("f16".parse::<Precision>().is_err());
    }
}
