use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STD_FLOOR: f64 = 1e-8;

/// Per-coordinate mean and standard deviation over a training split, in flat order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Population statistics of `rows`. Standard deviations below `floor`
    /// are raised to it; with `floor == 0` a zero deviation is an error.
    pub fn compute<'a>(rows: impl IntoIterator<Item = &'a [f64]>, floor: f64) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let Some(first) = rows.first() else {
            return Err(Error::Dataset(
                "cannot compute statistics of an empty split".into(),
            ));
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dataset("rows of unequal length".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(d);
        for (i, v) in var.into_iter().enumerate() {
            let s = (v / n).sqrt();
            if s < floor {
                std.push(floor);
            } else if s == 0.0 {
                return Err(Error::ZeroStd(i));
            } else {
                std.push(s);
            }
        }
        Ok(NormalizationStats { mean, std })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }
}
