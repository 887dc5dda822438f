//! JSON space files.
//!
//! ```json
//! {"name": "K3", "weights": ["1/3", "1/3", "1/3"], "gauge": [[0,1,1],[1,0,1],[1,1,0]]}
//! ```
//!
//! Weights may be numbers or rational strings `"k/N"`. When every weight is
//! a string the space keeps exact rational weights. The writer emits every
//! gauge entry with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_rational::Rational64;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::spaces::FiniteSpace;

fn parse_rational(s: &str) -> Result<Rational64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("invalid rational weight {s:?}"));
    match s.split_once('/') {
        Some((num, den)) => {
            let num: i64 = num.trim().parse().map_err(|_| bad())?;
            let den: i64 = den.trim().parse().map_err(|_| bad())?;
            if den <= 0 {
                return Err(bad());
            }
            Ok(Rational64::new(num, den))
        }
        None => Ok(Rational64::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// Parses a space from its JSON text.
pub fn space_from_json_str(text: &str) -> Result<FiniteSpace> {
    let value: Value = serde_json::from_str(text)?;
    space_from_json(&value)
}

pub fn space_from_json(value: &Value) -> Result<FiniteSpace> {
    let obj = value.as_object().ok_or_else(|| Error::Parse("space must be a JSON object".into()))?;
    let weights = obj
        .get("weights")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("missing array \"weights\"".into()))?;
    let rows = obj
        .get("gauge")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("missing array \"gauge\"".into()))?;
    let n = rows.len();
    let mut gauge = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| Error::Parse(format!("gauge row {i} is not an array")))?;
        if row.len() != n {
            return Err(Error::Shape(format!("gauge row {i} has {} entries, expected {n}", row.len())));
        }
        for (j, x) in row.iter().enumerate() {
            gauge[(i, j)] = x.as_f64().ok_or_else(|| Error::Parse(format!("gauge entry ({i},{j}) is not a number")))?;
        }
    }
    let space = if weights.iter().all(Value::is_string) {
        let exact = weights.iter().map(|w| parse_rational(w.as_str().unwrap())).collect::<Result<Vec<_>>>()?;
        FiniteSpace::with_rational_weights(gauge, exact)?
    } else {
        let approx = weights
            .iter()
            .map(|w| match w {
                Value::Number(x) => x.as_f64().ok_or_else(|| Error::Parse("weight out of range".into())),
                Value::String(s) => parse_rational(s).map(crate::spaces::ratio_to_f64),
                _ => Err(Error::Parse("weights must be numbers or rational strings".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        FiniteSpace::new(gauge, approx)?
    };
    Ok(match obj.get("name").and_then(Value::as_str) {
        Some(name) => space.named(name),
        None => space,
    })
}

pub fn read_space(path: impl AsRef<Path>) -> Result<FiniteSpace> {
    space_from_json_str(&std::fs::read_to_string(path)?)
}

/// Formats a float with 17 significant digits as a JSON number.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0.0".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Serializes a space to JSON text.
pub fn space_to_json_string(space: &FiniteSpace) -> String {
    let mut out = String::from("{");
    if let Some(name) = space.name() {
        let _ = write!(out, "\"name\":{},", Value::String(name.to_string()));
    }
    out.push_str("\"weights\":[");
    let weights: Vec<String> = match space.exact_weights() {
        Some(exact) => exact.iter().map(|w| format!("\"{}/{}\"", w.numer(), w.denom())).collect(),
        None => space.weights().iter().map(|&w| fmt_f64(w)).collect(),
    };
    out.push_str(&weights.join(","));
    out.push_str("],\"gauge\":[");
    let n = space.n();
    let rows: Vec<String> = (0..n)
        .map(|i| format!("[{}]", (0..n).map(|j| fmt_f64(space.d(i, j))).collect::<Vec<_>>().join(",")))
        .collect();
    out.push_str(&rows.join(","));
    out.push_str("]}");
    out
}

pub fn write_space(path: impl AsRef<Path>, space: &FiniteSpace) -> Result<()> {
    std::fs::write(path, space_to_json_string(space) + "\n")?;
    Ok(())
}
