//! LICQ and T-stationarity certification.
//!
//! The active gradients are stacked in a fixed order which is also the layout
//! of [`MultiplierSet::stacked`]:
//!
//! | block | rows                | multiplier |
//! |-------|---------------------|------------|
//! | 1     | `Dh_i`, all `i`     | `lambda`   |
//! | 2     | `Dg_j`, `j ∈ J0`    | `mu`       |
//! | 3     | `DF1_m`, `m ∈ a01`  | `sigma1`   |
//! | 4     | `DF2_m`, `m ∈ a10`  | `sigma2`   |
//! | 5     | `DF1_m`, `m ∈ a00`  | `rho1`     |
//! | 6     | `DF2_m`, `m ∈ a00`  | `rho2`     |

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{active_sets, ActivePattern, MpocProblem, Tolerances};

/// Active constraint gradients as rows, in multiplier order.
pub fn active_gradients(problem: &MpocProblem, x: &DVector<f64>, pattern: &ActivePattern) -> DMatrix<f64> {
    let n = problem.n();
    let dh = problem.h().jacobian(x);
    let dg = problem.g().jacobian(x);
    let df1 = problem.f1().jacobian(x);
    let df2 = problem.f2().jacobian(x);
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(pattern.active_count(problem.num_eq()));
    rows.extend((0..dh.nrows()).map(|i| dh.row(i).transpose()));
    rows.extend(pattern.j0.iter().map(|&j| dg.row(j).transpose()));
    rows.extend(pattern.a01.iter().map(|&m| df1.row(m).transpose()));
    rows.extend(pattern.a10.iter().map(|&m| df2.row(m).transpose()));
    rows.extend(pattern.a00.iter().map(|&m| df1.row(m).transpose()));
    rows.extend(pattern.a00.iter().map(|&m| df2.row(m).transpose()));
    linalg::stack_rows(&rows, n)
}

/// Multipliers of the T-stationarity gradient decomposition. Each vector is
/// aligned with the corresponding index list of the pattern it was computed
/// for (`lambda` with all equalities).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiplierSet {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    pub residual_norm: f64,
    /// False when the active gradients are rank deficient and the
    /// minimum-norm solution was returned.
    pub unique: bool,
}

impl MultiplierSet {
    pub fn zeros(num_eq: usize, pattern: &ActivePattern) -> Self {
        Self {
            lambda: vec![0.0; num_eq],
            mu: vec![0.0; pattern.j0.len()],
            sigma1: vec![0.0; pattern.a01.len()],
            sigma2: vec![0.0; pattern.a10.len()],
            rho1: vec![0.0; pattern.a00.len()],
            rho2: vec![0.0; pattern.a00.len()],
            residual_norm: 0.0,
            unique: true,
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.lambda
                .iter()
                .chain(&self.mu)
                .chain(&self.sigma1)
                .chain(&self.sigma2)
                .chain(&self.rho1)
                .chain(&self.rho2)
                .copied(),
        )
    }

    pub fn len(&self) -> usize {
        self.lambda.len() + self.mu.len() + self.sigma1.len() + self.sigma2.len() + self.rho1.len() + self.rho2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_stacked(num_eq: usize, pattern: &ActivePattern, w: &DVector<f64>, residual_norm: f64, unique: bool) -> Self {
        let mut it = w.iter().copied();
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let k00 = pattern.a00.len();
        Self {
            lambda: take(num_eq),
            mu: take(pattern.j0.len()),
            sigma1: take(pattern.a01.len()),
            sigma2: take(pattern.a10.len()),
            rho1: take(k00),
            rho2: take(k00),
            residual_norm,
            unique,
        }
    }

    /// `‖Df(x)ᵀ - Aᵀw‖₂` for these multipliers at `x`.
    pub fn residual_at(&self, problem: &MpocProblem, x: &DVector<f64>, pattern: &ActivePattern) -> f64 {
        let a = active_gradients(problem, x, pattern);
        (problem.objective_gradient(x) - a.transpose() * self.stacked()).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LicqReport {
    pub holds: bool,
    pub min_singular_value: f64,
    pub active_gradient_count: usize,
}

/// Linear independence of the active gradients, judged by the smallest
/// singular value of the stacked rows against `tol.eigen_singularity`.
pub fn licq_check(problem: &MpocProblem, x: &DVector<f64>, pattern: &ActivePattern, tol: &Tolerances) -> Result<LicqReport> {
    problem.check_dim(x, "licq_check")?;
    let a = active_gradients(problem, x, pattern);
    let count = a.nrows();
    let sv = linalg::row_singular_values(&a);
    // An empty stack is vacuously independent.
    let min_sv = sv.first().copied().unwrap_or(f64::INFINITY);
    Ok(LicqReport {
        holds: count <= problem.n() && min_sv > tol.eigen_singularity,
        min_singular_value: if count == 0 { 0.0 } else { min_sv },
        active_gradient_count: count,
    })
}

/// Least-squares multipliers for `Df(x)ᵀ = Aᵀw`, minimum norm when the
/// active gradients are dependent.
pub fn solve_multipliers(problem: &MpocProblem, x: &DVector<f64>, pattern: &ActivePattern) -> Result<MultiplierSet> {
    problem.check_dim(x, "solve_multipliers")?;
    let grad = problem.objective_gradient(x);
    let a = active_gradients(problem, x, pattern);
    if a.nrows() == 0 {
        let mut m = MultiplierSet::zeros(problem.num_eq(), pattern);
        m.residual_norm = grad.norm();
        return Ok(m);
    }
    let at = a.transpose();
    let w = linalg::lstsq_min_norm(&at, &grad);
    let residual = (&grad - &at * &w).norm();
    let sv = linalg::row_singular_values(&a);
    let sigma_max = sv.last().copied().unwrap_or(0.0);
    let cutoff = (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * sigma_max.max(1.0);
    let unique = a.nrows() <= problem.n() && sv[0] > cutoff;
    Ok(MultiplierSet::from_stacked(problem.num_eq(), pattern, &w, residual, unique))
}

/// Failed clause of the T-stationarity conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConditionTag {
    GradResidual,
    MuSign,
    RhoSign,
}

/// Sign and residual clauses violated by `multipliers`.
pub fn violated_conditions(multipliers: &MultiplierSet, tol: &Tolerances) -> Vec<ConditionTag> {
    let mut out = Vec::new();
    if !(multipliers.residual_norm <= tol.stationarity_residual) {
        out.push(ConditionTag::GradResidual);
    }
    if multipliers.mu.iter().any(|&mu| mu < -tol.multiplier_zero) {
        out.push(ConditionTag::MuSign);
    }
    let rho_ok = multipliers
        .rho1
        .iter()
        .zip(&multipliers.rho2)
        .all(|(&r1, &r2)| r1.abs() <= tol.multiplier_zero || r2 <= tol.multiplier_zero);
    if !rho_ok {
        out.push(ConditionTag::RhoSign);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityCertificate {
    pub point: Vec<f64>,
    pub pattern: ActivePattern,
    pub multipliers: MultiplierSet,
    pub licq: LicqReport,
    pub is_t_stationary: bool,
    pub violated_conditions: Vec<ConditionTag>,
}

/// Certifies T-stationarity at a feasible point. Without LICQ the
/// certificate still carries minimum-norm multipliers, flagged through
/// `licq.holds = false`.
pub fn t_stationarity_check(problem: &MpocProblem, x: &DVector<f64>, tol: &Tolerances) -> Result<StationarityCertificate> {
    tol.validate()?;
    let pattern = active_sets(problem, x, tol)?;
    certify_with_pattern(problem, x, pattern, tol)
}

pub(crate) fn certify_with_pattern(
    problem: &MpocProblem,
    x: &DVector<f64>,
    pattern: ActivePattern,
    tol: &Tolerances,
) -> Result<StationarityCertificate> {
    let licq = licq_check(problem, x, &pattern, tol)?;
    let multipliers = solve_multipliers(problem, x, &pattern)?;
    let violated = violated_conditions(&multipliers, tol);
    Ok(StationarityCertificate {
        point: x.iter().copied().collect(),
        pattern,
        multipliers,
        licq,
        is_t_stationary: violated.is_empty(),
        violated_conditions: violated,
    })
}

/// Convenience wrapper rejecting non-T-stationary points.
pub fn require_t_stationary(cert: &StationarityCertificate) -> Result<()> {
    if cert.is_t_stationary {
        Ok(())
    } else {
        Err(Error::NotTStationary(format!("violated {:?}", cert.violated_conditions)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::problem::SmoothMap;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn pattern_at(p: &MpocProblem, x: &[f64]) -> ActivePattern {
        active_sets(p, &v(x), &Tolerances::default()).unwrap()
    }

    #[test]
    fn licq_examples() {
        let tol = Tolerances::default();
        let p = catalog::saddle();
        let r = licq_check(&p, &v(&[0.0, 0.0]), &pattern_at(&p, &[0.0, 0.0]), &tol).unwrap();
        assert!(r.holds);
        assert!((r.min_singular_value - 1.0).abs() < 1e-14);
        assert_eq!(r.active_gradient_count, 2);

        let r = licq_check(&p, &v(&[0.0, 1.0]), &pattern_at(&p, &[0.0, 1.0]), &tol).unwrap();
        assert!(r.holds);
        assert!((r.min_singular_value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn licq_fails_on_repeated_gradient() {
        // h(x) = x1 and F1(x) = x1 at the origin: rows (1,0), (1,0).
        let f = SmoothMap::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), 0.0);
        let p = MpocProblem::new(
            f,
            SmoothMap::coordinates(2, &[0]),
            SmoothMap::empty(2),
            SmoothMap::coordinates(2, &[0]),
            SmoothMap::affine(DMatrix::zeros(1, 2), DVector::from_element(1, 1.0)),
        )
        .unwrap();
        let tol = Tolerances::default();
        let pat = pattern_at(&p, &[0.0, 0.0]);
        assert_eq!(pat.a01, vec![0]);
        let r = licq_check(&p, &v(&[0.0, 0.0]), &pat, &tol).unwrap();
        assert!(!r.holds);
        assert!(r.min_singular_value < 1e-15);
        let m = solve_multipliers(&p, &v(&[0.0, 0.0]), &pat).unwrap();
        assert!(!m.unique);
    }

    #[test]
    fn multiplier_examples() {
        let p = catalog::saddle();
        let m = solve_multipliers(&p, &v(&[0.0, 0.0]), &pattern_at(&p, &[0.0, 0.0])).unwrap();
        assert!((m.rho1[0] - 2.0).abs() < 1e-12);
        assert!((m.rho2[0] + 2.0).abs() < 1e-12);
        assert!(m.residual_norm < 1e-12);

        let m = solve_multipliers(&p, &v(&[0.0, 1.0]), &pattern_at(&p, &[0.0, 1.0])).unwrap();
        assert!((m.sigma1[0] - 2.0).abs() < 1e-12);
        assert!(m.residual_norm < 1e-12);

        let p = catalog::instability();
        let m = solve_multipliers(&p, &v(&[0.0, 0.0]), &pattern_at(&p, &[0.0, 0.0])).unwrap();
        assert_eq!(m.rho1, vec![0.0]);
        assert_eq!(m.rho2, vec![0.0]);
        assert_eq!(m.residual_norm, 0.0);
    }

    #[test]
    fn empty_stack_returns_gradient_norm() {
        let f = SmoothMap::quadratic(DMatrix::identity(2, 2), v(&[3.0, 4.0]), 0.0);
        let p = MpocProblem::new(f, SmoothMap::empty(2), SmoothMap::empty(2), SmoothMap::empty(2), SmoothMap::empty(2)).unwrap();
        let pat = pattern_at(&p, &[0.0, 0.0]);
        let m = solve_multipliers(&p, &v(&[0.0, 0.0]), &pat).unwrap();
        assert!(m.is_empty());
        assert!((m.residual_norm - 5.0).abs() < 1e-14);
    }

    #[test]
    fn t_stationarity_examples() {
        let tol = Tolerances::default();
        let c = t_stationarity_check(&catalog::saddle(), &v(&[0.0, 0.0]), &tol).unwrap();
        assert!(c.is_t_stationary);
        let c = t_stationarity_check(&catalog::instability(), &v(&[0.0, 0.0]), &tol).unwrap();
        assert!(c.is_t_stationary);

        // Df(0.5, 0) = (3, -2); only the row (0, 1) is active, leaving residual 3.
        let c = t_stationarity_check(&catalog::saddle(), &v(&[0.5, 0.0]), &tol).unwrap();
        assert!(!c.is_t_stationary);
        assert_eq!(c.pattern.a10, vec![0]);
        assert!((c.multipliers.sigma2[0] + 2.0).abs() < 1e-12);
        assert!((c.multipliers.residual_norm - 3.0).abs() < 1e-12);
        assert_eq!(c.violated_conditions, vec![ConditionTag::GradResidual]);
    }

    #[test]
    fn rho_sign_violation_is_tagged() {
        // f = x1 + x2 at the origin: rho1 = 1 != 0 and rho2 = 1 > 0.
        let f = SmoothMap::quadratic(DMatrix::zeros(2, 2), v(&[1.0, 1.0]), 0.0);
        let p = MpocProblem::new(f, SmoothMap::empty(2), SmoothMap::empty(2), SmoothMap::coordinates(2, &[0]), SmoothMap::coordinates(2, &[1])).unwrap();
        let c = t_stationarity_check(&p, &v(&[0.0, 0.0]), &Tolerances::default()).unwrap();
        assert!(!c.is_t_stationary);
        assert_eq!(c.violated_conditions, vec![ConditionTag::RhoSign]);
    }

    #[test]
    fn mu_sign_violation_is_tagged() {
        // min x1 s.t. -x1 >= 0 at x1 = 0: Df = 1 = mu * (-1) -> mu = -1.
        let f = SmoothMap::quadratic(DMatrix::zeros(1, 1), v(&[1.0]), 0.0);
        let g = SmoothMap::affine(DMatrix::from_element(1, 1, -1.0), DVector::zeros(1));
        let p = MpocProblem::new(f, SmoothMap::empty(1), g, SmoothMap::empty(1), SmoothMap::empty(1)).unwrap();
        let c = t_stationarity_check(&p, &v(&[0.0]), &Tolerances::default()).unwrap();
        assert_eq!(c.violated_conditions, vec![ConditionTag::MuSign]);
    }

    #[test]
    fn infeasible_point_rejected() {
        let r = t_stationarity_check(&catalog::saddle(), &v(&[1.0, 1.0]), &Tolerances::default());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }
}
