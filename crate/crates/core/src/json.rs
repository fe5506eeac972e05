//! JSON lines with fixed float formatting, and the problem file format.
//!
//! A problem file looks like
//!
//! ```json
//! {"n": 2,
//!  "quadratic_f": {"Q": [[2, 0], [0, 2]], "c": [2, -2], "r": 2},
//!  "linear_h": {"A": [], "b": []},
//!  "linear_g": {"A": [[0, 1]], "b": [-1]},
//!  "coordinate_F1": [0],
//!  "coordinate_F2": [1]}
//! ```
//!
//! with `f = ½ xᵀQx + cᵀx + r`, `h = A x - b`, `g = A x - b` and zero-based
//! coordinate indices. Every key except `n` and `quadratic_f` is optional.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::problem::{MpocProblem, SmoothMap};

/// One JSON record on a single line. Keys are sorted and floats printed
/// with 17 significant digits, so identical runs give identical bytes.
pub fn to_line<T: Serialize>(record: &T) -> String {
    let value = serde_json::to_value(record).expect("records serialize to JSON values");
    let mut out = String::new();
    write_value(&mut out, &value);
    out
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let _ = write!(out, "{:.16e}", n.as_f64().unwrap_or(f64::NAN));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_value(out, item);
            }
            out.push('}');
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Quadratic {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(default)]
    r: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Linear {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    n: usize,
    quadratic_f: Quadratic,
    linear_h: Option<Linear>,
    linear_g: Option<Linear>,
    #[serde(rename = "coordinate_F1", default)]
    coordinate_f1: Vec<usize>,
    #[serde(rename = "coordinate_F2", default)]
    coordinate_f2: Vec<usize>,
}

fn matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::ProblemFile(format!("{what}: row {i} has {} entries, expected {cols}", r.len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn linear(l: Option<Linear>, n: usize, what: &str) -> Result<SmoothMap> {
    let Some(l) = l else { return Ok(SmoothMap::empty(n)) };
    let a = matrix(&l.a, n, what)?;
    if l.b.len() != a.nrows() {
        return Err(Error::ProblemFile(format!("{what}: b has {} entries, A has {} rows", l.b.len(), a.nrows())));
    }
    Ok(SmoothMap::affine(a, -DVector::from_vec(l.b)))
}

fn coordinates(idx: &[usize], n: usize, what: &str) -> Result<SmoothMap> {
    if let Some(&i) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::ProblemFile(format!("{what}: index {i} out of range for n = {n}")));
    }
    Ok(SmoothMap::coordinates(n, idx))
}

fn parse_document(text: &str) -> Result<ProblemFile> {
    serde_json::from_str(text).map_err(|e| Error::ProblemFile(format!("line {} column {}: {e}", e.line(), e.column())))
}

fn objective(q: Quadratic, n: usize) -> Result<SmoothMap> {
    if q.c.len() != n {
        return Err(Error::ProblemFile(format!("quadratic_f: c has {} entries, expected {n}", q.c.len())));
    }
    if q.q.len() != n {
        return Err(Error::ProblemFile(format!("quadratic_f: Q has {} rows, expected {n}", q.q.len())));
    }
    Ok(SmoothMap::quadratic(matrix(&q.q, n, "quadratic_f.Q")?, DVector::from_vec(q.c), q.r))
}

pub fn parse_problem(text: &str) -> Result<MpocProblem> {
    let doc = parse_document(text)?;
    let n = doc.n;
    if doc.coordinate_f1.len() != doc.coordinate_f2.len() {
        return Err(Error::ProblemFile(format!(
            "coordinate_F1 has {} indices, coordinate_F2 has {}",
            doc.coordinate_f1.len(),
            doc.coordinate_f2.len()
        )));
    }
    MpocProblem::new(
        objective(doc.quadratic_f, n)?,
        linear(doc.linear_h, n, "linear_h")?,
        linear(doc.linear_g, n, "linear_g")?,
        coordinates(&doc.coordinate_f1, n, "coordinate_F1")?,
        coordinates(&doc.coordinate_f2, n, "coordinate_F2")?,
    )
}

/// The objective of a problem file; constraint keys are ignored.
pub fn parse_objective(text: &str) -> Result<SmoothMap> {
    let doc = parse_document(text)?;
    objective(doc.quadratic_f, doc.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    const SADDLE: &str = r#"{"n": 2,
        "quadratic_f": {"Q": [[2, 0], [0, 2]], "c": [2, -2], "r": 2},
        "coordinate_F1": [0], "coordinate_F2": [1]}"#;

    #[test]
    fn file_matches_catalog_fixture() {
        let p = parse_problem(SADDLE).unwrap();
        let q = catalog::saddle();
        for x in [[0.3, -0.7], [-1.0, 0.0], [2.0, 1.5]] {
            let x = DVector::from_column_slice(&x);
            assert!((p.objective(&x) - q.objective(&x)).abs() < 1e-14);
            assert_eq!(p.f2().value(&x), q.f2().value(&x));
        }
    }

    #[test]
    fn linear_maps_are_ax_minus_b() {
        let p = parse_problem(
            r#"{"n": 2, "quadratic_f": {"Q": [[0,0],[0,0]], "c": [0,0]},
                "linear_h": {"A": [[1, 1]], "b": [1]}, "linear_g": {"A": [[1, 0]], "b": [-2]}}"#,
        )
        .unwrap();
        let x = DVector::from_column_slice(&[0.5, 0.25]);
        assert!((p.h().value(&x)[0] + 0.25).abs() < 1e-15);
        assert!((p.g().value(&x)[0] - 2.5).abs() < 1e-15);
        assert_eq!(p.num_pairs(), 0);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_problem("{\"n\": 2,\n \"quadratic_f\": [}").unwrap_err();
        assert!(e.to_string().contains("line 2 column"), "{e}");
    }

    #[test]
    fn shape_errors_are_reported() {
        let bad_row = r#"{"n": 2, "quadratic_f": {"Q": [[1], [0, 1]], "c": [0, 0]}}"#;
        assert!(parse_problem(bad_row).unwrap_err().to_string().contains("row 0"));
        let bad_idx = r#"{"n": 2, "quadratic_f": {"Q": [[1,0],[0,1]], "c": [0,0]}, "coordinate_F1": [2], "coordinate_F2": [1]}"#;
        assert!(parse_problem(bad_idx).unwrap_err().to_string().contains("index 2"));
        let unknown = r#"{"n": 2, "quadratic_f": {"Q": [[1,0],[0,1]], "c": [0,0]}, "extra": 1}"#;
        assert!(parse_problem(unknown).is_err());
    }

    #[test]
    fn lines_are_deterministic() {
        #[derive(Serialize)]
        struct R {
            a: f64,
            b: Vec<f64>,
            k: usize,
            s: &'static str,
            none: Option<f64>,
        }
        let r = R {
            a: 0.1,
            b: vec![-2.0, 1e-300],
            k: 3,
            s: "x\"y",
            none: None,
        };
        assert_eq!(
            to_line(&r),
            r#"{"a":1.0000000000000001e-1,"b":[-2.0000000000000000e0,1.0000000000000000e-300],"k":3,"none":null,"s":"x\"y"}"#
        );
        let back: serde_json::Value = serde_json::from_str(&to_line(&r)).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }
}
