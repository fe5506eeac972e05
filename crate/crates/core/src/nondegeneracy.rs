//! Second-order data at T-stationary points: Lagrangian Hessian, tangent
//! space of the local manifold `M(x̄)`, ND1–ND4 and the T-index.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::linalg;
use crate::problem::{ActivePattern, MpocProblem, Tolerances};
use crate::stationarity::{active_gradients, t_stationarity_check, MultiplierSet, StationarityCertificate};

/// Hessian of `L = f - Σλh - Σμg - Σσ1 F1 - Σσ2 F2 - Σ(ϱ1 F1 + ϱ2 F2)` over
/// the active index sets of `pattern`.
pub fn lagrangian_hessian(
    problem: &MpocProblem,
    x: &DVector<f64>,
    pattern: &ActivePattern,
    multipliers: &MultiplierSet,
) -> DMatrix<f64> {
    let mut hess = problem.f().hessian(x, 0);
    for (i, &lam) in multipliers.lambda.iter().enumerate() {
        hess -= problem.h().hessian(x, i) * lam;
    }
    for (&j, &mu) in pattern.j0.iter().zip(&multipliers.mu) {
        hess -= problem.g().hessian(x, j) * mu;
    }
    for (&m, &s) in pattern.a01.iter().zip(&multipliers.sigma1) {
        hess -= problem.f1().hessian(x, m) * s;
    }
    for (&m, &s) in pattern.a10.iter().zip(&multipliers.sigma2) {
        hess -= problem.f2().hessian(x, m) * s;
    }
    for ((&m, &r1), &r2) in pattern.a00.iter().zip(&multipliers.rho1).zip(&multipliers.rho2) {
        hess -= problem.f1().hessian(x, m) * r1;
        hess -= problem.f2().hessian(x, m) * r2;
    }
    (&hess + hess.transpose()) * 0.5
}

/// Orthonormal basis of `T_x̄ M(x̄)` as columns.
#[derive(Clone, Debug)]
pub struct TangentBasis {
    pub basis: DMatrix<f64>,
    pub p_eff: usize,
}

pub fn tangent_basis(problem: &MpocProblem, x: &DVector<f64>, pattern: &ActivePattern) -> TangentBasis {
    let a = active_gradients(problem, x, pattern);
    let basis = linalg::null_space(&a);
    let basis = if basis.nrows() == 0 { DMatrix::zeros(problem.n(), 0) } else { basis };
    TangentBasis {
        p_eff: basis.ncols(),
        basis,
    }
}

/// `Bᵀ H B`.
pub fn restricted_hessian(hessian: &DMatrix<f64>, basis: &TangentBasis) -> DMatrix<f64> {
    let b = &basis.basis;
    b.transpose() * hessian * b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    NondegenerateLocalMin,
    NondegenerateSaddle,
    Degenerate,
}

#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyReport {
    pub nd1_licq: bool,
    pub nd2_strict_complementarity: bool,
    pub nd3_biactive_multipliers: bool,
    pub nd4_hessian_nonsingular: bool,
    pub restricted_hessian_eigenvalues: Vec<f64>,
    pub qi: usize,
    pub bi: usize,
    /// Only defined for nondegenerate points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ti: Option<usize>,
    pub classification: Classification,
}

impl NondegeneracyReport {
    pub fn is_nondegenerate(&self) -> bool {
        self.nd1_licq && self.nd2_strict_complementarity && self.nd3_biactive_multipliers && self.nd4_hessian_nonsingular
    }

    /// Names of the failed conditions, e.g. `["ND1", "ND4"]`.
    pub fn failed(&self) -> Vec<&'static str> {
        [
            ("ND1", self.nd1_licq),
            ("ND2", self.nd2_strict_complementarity),
            ("ND3", self.nd3_biactive_multipliers),
            ("ND4", self.nd4_hessian_nonsingular),
        ]
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name)
        .collect()
    }
}

/// ND1–ND4 and indices from a T-stationary certificate.
pub fn nondegeneracy_report(problem: &MpocProblem, cert: &StationarityCertificate, tol: &Tolerances) -> NondegeneracyReport {
    let x = DVector::from_column_slice(&cert.point);
    let m = &cert.multipliers;
    let z = tol.multiplier_zero;

    let nd1 = cert.licq.holds;
    let nd2 = m.mu.iter().all(|&mu| mu > z);
    let nd3 = m.rho1.iter().zip(&m.rho2).all(|(&r1, &r2)| r1.abs() > z && r2 < -z);

    let hess = lagrangian_hessian(problem, &x, &cert.pattern, m);
    let basis = tangent_basis(problem, &x, &cert.pattern);
    let eig = linalg::sym_eigenvalues(&restricted_hessian(&hess, &basis));
    let nd4 = eig.iter().all(|e| e.abs() > tol.eigen_singularity);

    let qi = eig.iter().filter(|&&e| e < -tol.eigen_singularity).count();
    let bi = m.rho2.iter().filter(|&&r| r < -z).count();
    let nondegenerate = nd1 && nd2 && nd3 && nd4;
    let ti = nondegenerate.then_some(qi + bi);
    let classification = match ti {
        Some(0) => Classification::NondegenerateLocalMin,
        Some(_) => Classification::NondegenerateSaddle,
        None => Classification::Degenerate,
    };
    NondegeneracyReport {
        nd1_licq: nd1,
        nd2_strict_complementarity: nd2,
        nd3_biactive_multipliers: nd3,
        nd4_hessian_nonsingular: nd4,
        restricted_hessian_eigenvalues: eig,
        qi,
        bi,
        ti,
        classification,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PointClassification {
    pub certificate: StationarityCertificate,
    /// Absent when the point is not T-stationary.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<NondegeneracyReport>,
}

/// Certifies T-stationarity and, when it holds, evaluates nondegeneracy and
/// the T-index.
pub fn classify_point(problem: &MpocProblem, x: &DVector<f64>, tol: &Tolerances) -> Result<PointClassification> {
    let certificate = t_stationarity_check(problem, x, tol)?;
    let report = certificate
        .is_t_stationary
        .then(|| nondegeneracy_report(problem, &certificate, tol));
    Ok(PointClassification { certificate, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::problem::{active_sets, SmoothMap};
    use crate::stationarity::solve_multipliers;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn hessian_of_affine_constraints_is_objective_hessian() {
        let p = catalog::saddle();
        let x = v(&[-1.0, 0.0]);
        let pat = active_sets(&p, &x, &Tolerances::default()).unwrap();
        let m = solve_multipliers(&p, &x, &pat).unwrap();
        assert!((m.sigma2[0] + 2.0).abs() < 1e-12);
        let h = lagrangian_hessian(&p, &x, &pat, &m);
        assert_eq!(h, DMatrix::identity(2, 2) * 2.0);

        let p = catalog::instability();
        let x = v(&[0.0, 0.0]);
        let pat = active_sets(&p, &x, &Tolerances::default()).unwrap();
        let m = solve_multipliers(&p, &x, &pat).unwrap();
        assert_eq!(lagrangian_hessian(&p, &x, &pat, &m), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn hessian_with_curved_equality() {
        // h1 = x1² - x2 with λ = 3: D²f - 3·diag(2, 0).
        let f = SmoothMap::quadratic(DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 6.0]), DVector::zeros(2), 0.0);
        let h = SmoothMap::new(
            2,
            1,
            |x| DVector::from_element(1, x[0] * x[0] - x[1]),
            |x| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], -1.0]),
            |_, _| DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
        );
        let p = MpocProblem::new(f, h, SmoothMap::empty(2), SmoothMap::empty(2), SmoothMap::empty(2)).unwrap();
        let x = v(&[1.0, 1.0]);
        let pat = active_sets(&p, &x, &Tolerances::default()).unwrap();
        let mut m = MultiplierSet::zeros(1, &pat);
        m.lambda[0] = 3.0;
        let got = lagrangian_hessian(&p, &x, &pat, &m);
        let expected = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, 6.0]);
        assert!((got - expected).norm() < 1e-14);
    }

    #[test]
    fn tangent_basis_examples() {
        let p = catalog::saddle();
        let tol = Tolerances::default();
        let x = v(&[0.0, 0.0]);
        let b = tangent_basis(&p, &x, &active_sets(&p, &x, &tol).unwrap());
        assert_eq!(b.p_eff, 0);

        let x = v(&[-1.0, 0.0]);
        let b = tangent_basis(&p, &x, &active_sets(&p, &x, &tol).unwrap());
        assert_eq!(b.p_eff, 1);
        assert!((b.basis[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!(b.basis[(1, 0)].abs() < 1e-14);

        let f = SmoothMap::quadratic(DMatrix::identity(3, 3), DVector::zeros(3), 0.0);
        let p = MpocProblem::new(f, SmoothMap::empty(3), SmoothMap::empty(3), SmoothMap::empty(3), SmoothMap::empty(3)).unwrap();
        let x = v(&[0.1, 0.2, 0.3]);
        let b = tangent_basis(&p, &x, &active_sets(&p, &x, &tol).unwrap());
        assert_eq!(b.p_eff, 3);
        assert!((b.basis.transpose() * &b.basis - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn restricted_hessian_examples() {
        let b = TangentBasis { basis: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), p_eff: 1 };
        assert_eq!(restricted_hessian(&(DMatrix::identity(2, 2) * 2.0), &b), DMatrix::from_element(1, 1, 2.0));

        let b = TangentBasis { basis: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), p_eff: 1 };
        let h = DMatrix::from_diagonal(&v(&[1.0, -3.0]));
        assert_eq!(restricted_hessian(&h, &b), DMatrix::from_element(1, 1, -3.0));

        let b = TangentBasis { basis: DMatrix::zeros(2, 0), p_eff: 0 };
        let r = restricted_hessian(&h, &b);
        assert_eq!(r.shape(), (0, 0));
        assert!(linalg::sym_eigenvalues(&r).is_empty());
    }

    #[test]
    fn classify_saddle_points() {
        let p = catalog::saddle();
        let tol = Tolerances::default();

        let c = classify_point(&p, &v(&[0.0, 0.0]), &tol).unwrap();
        let r = c.report.unwrap();
        assert!(r.is_nondegenerate());
        assert_eq!((r.qi, r.bi, r.ti), (0, 1, Some(1)));
        assert_eq!(r.classification, Classification::NondegenerateSaddle);

        for x in [[-1.0, 0.0], [0.0, 1.0]] {
            let r = classify_point(&p, &v(&x), &tol).unwrap().report.unwrap();
            assert_eq!((r.qi, r.bi, r.ti), (0, 0, Some(0)));
            assert_eq!(r.classification, Classification::NondegenerateLocalMin);
        }
    }

    #[test]
    fn classify_instability_is_degenerate() {
        let c = classify_point(&catalog::instability(), &v(&[0.0, 0.0]), &Tolerances::default()).unwrap();
        let r = c.report.unwrap();
        assert!(!r.nd3_biactive_multipliers);
        assert_eq!(r.classification, Classification::Degenerate);
        assert_eq!(r.ti, None);
        assert_eq!(r.failed(), vec!["ND3"]);
    }

    #[test]
    fn non_stationary_point_has_no_report() {
        let c = classify_point(&catalog::saddle(), &v(&[0.5, 0.0]), &Tolerances::default()).unwrap();
        assert!(!c.certificate.is_t_stationary);
        assert!(c.report.is_none());
    }
}
