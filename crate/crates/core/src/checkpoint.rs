//! JSON checkpoints: parameter name -> {shape, row-major values}.
//!
//! Values are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Serialize)]
struct TensorOut<'a> {
    shape: &'a [usize],
    values: Box<RawValue>,
}

#[derive(Deserialize)]
struct TensorIn {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct FileOut<'a> {
    header: &'a serde_json::Value,
    params: BTreeMap<&'a str, TensorOut<'a>>,
}

#[derive(Deserialize)]
struct FileIn {
    #[serde(default)]
    header: serde_json::Value,
    params: BTreeMap<String, TensorIn>,
}

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn values_json<T: Real>(t: &Tensor<T>) -> Result<Box<RawValue>> {
    let mut s = String::with_capacity(t.len() * 24 + 2);
    s.push('[');
    for (i, v) in t.data().iter().enumerate() {
        let v = v.as_f64();
        if !v.is_finite() {
            return Err(Error::Checkpoint(format!("non-finite value {v}")));
        }
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v:.16e}").expect("write to string");
    }
    s.push(']');
    Ok(RawValue::from_string(s)?)
}

pub fn to_string<T: Real>(header: &serde_json::Value, params: &ParamStore<T>) -> Result<String> {
    let mut out = BTreeMap::new();
    for (name, t) in params {
        out.insert(
            name.as_str(),
            TensorOut {
                shape: t.shape(),
                values: values_json(t)?,
            },
        );
    }
    Ok(serde_json::to_string_pretty(&FileOut {
        header,
        params: out,
    })?)
}

pub fn from_str<T: Real>(text: &str) -> Result<(serde_json::Value, ParamStore<T>)> {
    let file: FileIn = serde_json::from_str(text)?;
    let mut params = ParamStore::new();
    for (name, t) in file.params {
        let tensor = Tensor::new(t.shape, t.values.into_iter().map(T::of).collect())
            .map_err(|e| Error::Checkpoint(format!("parameter `{name}`: {e}")))?;
        params.insert(name, tensor);
    }
    Ok((file.header, params))
}

pub fn save<T: Real>(
    path: &Path,
    header: &serde_json::Value,
    params: &ParamStore<T>,
) -> Result<()> {
    std::fs::write(path, to_string(header, params)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<(serde_json::Value, ParamStore<T>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let mut p = ParamStore::new();
            p.insert("a.b".to_string(), Tensor::from_vec(vals.clone()));
            let text = to_string(&serde_json::json!({"kind": "test"}), &p).unwrap();
            let (h, back) = from_str::<f64>(&text).unwrap();
            prop_assert_eq!(h["kind"].as_str(), Some("test"));
            let bits: Vec<u64> = back["a.b"].data().iter().map(|x| x.to_bits()).collect();
            let want: Vec<u64> = vals.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits, want);
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        let mut p = ParamStore::new();
        p.insert(
            "w".into(),
            Tensor::new(vec![1, 2], vec![0.1, -3.0]).unwrap(),
        );
        let text = to_string(&serde_json::Value::Null, &p).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("-3.0000000000000000e0"), "{text}");
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = ParamStore::new();
        p.insert("w".into(), Tensor::from_vec(vec![f64::INFINITY]));
        assert!(to_string(&serde_json::Value::Null, &p).is_err());
    }
}
