//! Named fixture problems and their known T-stationary points.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::{MpocProblem, SmoothMap};

/// Expected behaviour of a documented point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExpectedKind {
    NondegenerateLocalMin,
    NondegenerateSaddle,
    Degenerate,
    /// T-stationary, classification not recorded.
    Stationary,
}

#[derive(Clone, Debug, Serialize)]
pub struct DocumentedPoint {
    pub x: Vec<f64>,
    pub kind: ExpectedKind,
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: String,
    pub problem: MpocProblem,
    pub stationary_points: Vec<DocumentedPoint>,
}

/// `min ½ xᵀQx + cᵀx + r` on R² with the single pair `x1·x2 = 0, x2 >= 0`.
fn planar_pair(c: [f64; 2], r: f64) -> MpocProblem {
    let f = SmoothMap::quadratic(DMatrix::identity(2, 2) * 2.0, DVector::from_column_slice(&c), r);
    MpocProblem::new(
        f,
        SmoothMap::empty(2),
        SmoothMap::empty(2),
        SmoothMap::coordinates(2, &[0]),
        SmoothMap::coordinates(2, &[1]),
    )
    .expect("fixture dimensions are consistent")
}

/// `min (x1+1)² + (x2-1)²` s.t. `x1·x2 = 0, x2 >= 0`.
pub fn saddle() -> MpocProblem {
    planar_pair([2.0, -2.0], 2.0)
}

/// `min x1² + x2²` s.t. `x1·x2 = 0, x2 >= 0`.
pub fn instability() -> MpocProblem {
    planar_pair([0.0, 0.0], 0.0)
}

/// `min (x1+ε)² + (x2-ε)²` s.t. `x1·x2 = 0, x2 >= 0`.
pub fn instability_perturbed(eps: f64) -> MpocProblem {
    planar_pair([2.0 * eps, -2.0 * eps], 2.0 * eps * eps)
}

fn point(x: [f64; 2], kind: ExpectedKind) -> DocumentedPoint {
    DocumentedPoint { x: x.to_vec(), kind }
}

/// Built-in fixtures plus user-registered entries.
#[derive(Default)]
pub struct Catalog {
    user: BTreeMap<String, CatalogEntry>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, problem: MpocProblem, stationary_points: Vec<DocumentedPoint>) {
        let name = name.into();
        self.user.insert(
            name.clone(),
            CatalogEntry {
                name,
                problem,
                stationary_points,
            },
        );
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "instability".to_string(),
            "instability_perturbed(eps)".to_string(),
            "saddle".to_string(),
        ];
        names.extend(self.user.keys().cloned());
        names
    }

    pub fn lookup(&self, name: &str) -> Result<CatalogEntry> {
        use ExpectedKind::*;
        let name = name.trim();
        if let Some(entry) = self.user.get(name) {
            return Ok(entry.clone());
        }
        let entry = match name {
            "saddle" => CatalogEntry {
                name: name.into(),
                problem: saddle(),
                stationary_points: vec![
                    point([-1.0, 0.0], NondegenerateLocalMin),
                    point([0.0, 1.0], NondegenerateLocalMin),
                    point([0.0, 0.0], NondegenerateSaddle),
                ],
            },
            "instability" => CatalogEntry {
                name: name.into(),
                problem: instability(),
                stationary_points: vec![point([0.0, 0.0], Degenerate)],
            },
            _ => match parse_perturbed(name) {
                Some(eps) => CatalogEntry {
                    name: name.into(),
                    problem: instability_perturbed(eps),
                    stationary_points: vec![
                        point([0.0, 0.0], Stationary),
                        point([0.0, eps], Stationary),
                        point([-eps, 0.0], Stationary),
                    ],
                },
                None => {
                    return Err(Error::UnknownProblem {
                        name: name.into(),
                        available: self.names().join(", "),
                    })
                }
            },
        };
        Ok(entry)
    }
}

fn parse_perturbed(name: &str) -> Option<f64> {
    let arg = name.strip_prefix("instability_perturbed(")?.strip_suffix(')')?;
    let eps: f64 = arg.trim().parse().ok()?;
    eps.is_finite().then_some(eps)
}

/// Looks up a built-in entry.
pub fn catalog(name: &str) -> Result<CatalogEntry> {
    Catalog::new().lookup(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn saddle_matches_its_formula() {
        let e = catalog("saddle").unwrap();
        let p = &e.problem;
        assert_eq!((p.n(), p.num_pairs(), p.num_eq(), p.num_ineq()), (2, 1, 0, 0));
        let x = v(&[0.3, -0.8]);
        let expected = (0.3f64 + 1.0).powi(2) + (-0.8f64 - 1.0).powi(2);
        assert!((p.objective(&x) - expected).abs() < 1e-14);
        assert_eq!(p.f1().value(&x)[0], 0.3);
        assert_eq!(p.f2().value(&x)[0], -0.8);
    }

    #[test]
    fn instability_matches_its_formula() {
        let p = catalog("instability").unwrap().problem;
        let x = v(&[0.5, 2.0]);
        assert!((p.objective(&x) - 4.25).abs() < 1e-14);
    }

    #[test]
    fn perturbed_entry_parses_epsilon() {
        let e = catalog("instability_perturbed(0.1)").unwrap();
        let x = v(&[0.2, -0.3]);
        let expected = (0.2f64 + 0.1).powi(2) + (-0.3f64 - 0.1).powi(2);
        assert!((e.problem.objective(&x) - expected).abs() < 1e-14);
        assert_eq!(e.stationary_points[1].x, vec![0.0, 0.1]);
    }

    #[test]
    fn unknown_name_lists_entries() {
        let err = catalog("nope").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("saddle") && msg.contains("instability"), "{msg}");
    }

    #[test]
    fn user_entries_shadow_nothing_and_resolve() {
        let mut c = Catalog::new();
        c.register("mine", instability(), vec![]);
        assert!(c.lookup("mine").is_ok());
        assert!(c.names().contains(&"mine".to_string()));
    }
}
