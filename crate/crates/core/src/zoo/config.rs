use std::fmt;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::weight_space::WeightSpaceSpec;

/// Settings for a sine-INR dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ZooConfig {
    pub count: usize,
    pub arch: WeightSpaceSpec,
    pub grid: usize,
    pub freq_lo: f64,
    pub freq_hi: f64,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Train, validation and test sizes.
    pub splits: [usize; 3],
    /// Fits whose largest absolute error on the grid exceeds this are dropped.
    pub threshold: f64,
    /// First-layer frequency scale used while fitting.
    pub omega0: f64,
}

impl Default for ZooConfig {
    /// Desk scale.
    fn default() -> Self {
        ZooConfig {
            count: 500,
            arch: WeightSpaceSpec::new(vec![1, 16, 16, 1]).expect("valid"),
            grid: 512,
            freq_lo: 0.5,
            freq_hi: 10.0,
            steps: 1000,
            lr: 1e-3,
            seed: 0,
            splits: [400, 50, 50],
            threshold: 0.3,
            omega0: super::OMEGA0,
        }
    }
}

impl ZooConfig {
    pub const KEYS: [&'static str; 11] = [
        "count",
        "arch",
        "grid",
        "freq_lo",
        "freq_hi",
        "steps",
        "lr",
        "seed",
        "splits",
        "threshold",
        "omega0",
    ];

    /// 1000 INRs of width 32 on a 2000-point grid.
    pub fn full_scale() -> Self {
        ZooConfig {
            count: 1000,
            arch: WeightSpaceSpec::new(vec![1, 32, 32, 1]).expect("valid"),
            grid: 2000,
            splits: [800, 100, 100],
            ..Self::default()
        }
    }

    /// Missing keys keep their desk-scale defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&Self::KEYS)?;
        let mut c = Self::default();
        if let Some(v) = kv.get("count")? {
            c.count = v;
        }
        if let Some(v) = kv.get_list::<usize>("arch")? {
            c.arch = WeightSpaceSpec::new(v)?;
        }
        if let Some(v) = kv.get("grid")? {
            c.grid = v;
        }
        if let Some(v) = kv.get("freq_lo")? {
            c.freq_lo = v;
        }
        if let Some(v) = kv.get("freq_hi")? {
            c.freq_hi = v;
        }
        if let Some(v) = kv.get("steps")? {
            c.steps = v;
        }
        if let Some(v) = kv.get("lr")? {
            c.lr = v;
        }
        if let Some(v) = kv.get("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.get_list::<usize>("splits")? {
            c.splits = v
                .try_into()
                .map_err(|_| Error::Config("`splits` needs three sizes: train,val,test".into()))?;
        }
        if let Some(v) = kv.get("threshold")? {
            c.threshold = v;
        }
        if let Some(v) = kv.get("omega0")? {
            c.omega0 = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.arch.dims();
        if d[0] != 1 || d[d.len() - 1] != 1 {
            return Err(Error::Config(format!(
                "INR architecture must map 1 -> 1, got [{}]",
                self.arch
            )));
        }
        if !(self.freq_lo < self.freq_hi) {
            return Err(Error::Config(format!(
                "freq_lo {} must be below freq_hi {}",
                self.freq_lo, self.freq_hi
            )));
        }
        if self.grid < 2 {
            return Err(Error::Config("grid needs at least two points".into()));
        }
        if self.splits.iter().sum::<usize>() != self.count {
            return Err(Error::Config(format!(
                "splits {:?} do not add up to count {}",
                self.splits, self.count
            )));
        }
        if !(self.lr > 0.0) || !(self.threshold > 0.0) || !(self.omega0 > 0.0) {
            return Err(Error::Config(
                "lr, threshold and omega0 must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ZooConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [tr, va, te] = self.splits;
        writeln!(f, "count = {}", self.count)?;
        writeln!(f, "arch = {}", self.arch)?;
        writeln!(f, "grid = {}", self.grid)?;
        writeln!(f, "freq_lo = {}", self.freq_lo)?;
        writeln!(f, "freq_hi = {}", self.freq_hi)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "splits = {tr},{va},{te}")?;
        writeln!(f, "threshold = {}", self.threshold)?;
        writeln!(f, "omega0 = {}", self.omega0)
    }
}
