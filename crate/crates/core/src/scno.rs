//! Sparsity constrained optimization `min f(x) s.t. ‖x‖₀ <= s` and its
//! continuous relaxation
//!
//! ```text
//! min f(x)  s.t.  Σ y_i >= n - s,  0 <= y_i <= 1,  x_i·y_i = 0
//! ```
//!
//! posed as an MPOC over `z = (x, y)` with pairs `F1_i = x_i`, `F2_i = y_i`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::nondegeneracy::{classify_point, Classification};
use crate::problem::{feasibility_check, MpocProblem, SmoothMap, Tolerances};
use crate::stationarity::t_stationarity_check;

#[derive(Clone, Debug)]
pub struct ScnoProblem {
    n: usize,
    f: SmoothMap,
    s: usize,
}

impl ScnoProblem {
    pub fn new(f: SmoothMap, s: usize) -> Result<Self> {
        let n = f.input_dim();
        if f.output_dim() != 1 {
            return Err(Error::Dimension {
                context: "objective output",
                expected: 1,
                got: f.output_dim(),
            });
        }
        if n == 0 || s >= n {
            return Err(Error::InvalidParameter(format!("sparsity level must satisfy 0 <= s <= n-1, got s = {s}, n = {n}")));
        }
        Ok(Self { n, f, s })
    }

    /// `f(x) = ½ xᵀQx + cᵀx`.
    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>, s: usize) -> Result<Self> {
        if q.shape() != (c.len(), c.len()) {
            return Err(Error::Dimension {
                context: "quadratic objective",
                expected: c.len(),
                got: q.nrows(),
            });
        }
        Self::new(SmoothMap::quadratic(q, c, 0.0), s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn f(&self) -> &SmoothMap {
        &self.f
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                context: "SCNO point",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self.f.gradient(x, 0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedPoint {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl RelaxedPoint {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        Self { x, y }
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(y))
    }

    /// `z = (x, y)`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.x.len() + self.y.len());
        z.rows_mut(0, self.x.len()).copy_from(&self.x);
        z.rows_mut(self.x.len(), self.y.len()).copy_from(&self.y);
        z
    }
}

/// Index sets of a relaxed point. `I01 ⊆ I0≠` and `I00 ∪ I0≠ = I0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RelaxIndexSets {
    pub i00: Vec<usize>,
    pub i01: Vec<usize>,
    pub i0neq: Vec<usize>,
    pub i1: Vec<usize>,
}

impl RelaxIndexSets {
    pub fn i0(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.i00.iter().chain(&self.i0neq).copied().collect();
        v.sort_unstable();
        v
    }
}

/// Zero tests use `tol.activity`.
pub fn relax_index_sets(point: &RelaxedPoint, tol: &Tolerances) -> RelaxIndexSets {
    let act = tol.activity;
    let mut sets = RelaxIndexSets {
        i00: vec![],
        i01: vec![],
        i0neq: vec![],
        i1: vec![],
    };
    for i in 0..point.x.len() {
        let (x, y) = (point.x[i], point.y[i]);
        if x.abs() > act {
            sets.i1.push(i);
        } else if y.abs() <= act {
            sets.i00.push(i);
        } else {
            sets.i0neq.push(i);
            if (y - 1.0).abs() <= act {
                sets.i01.push(i);
            }
        }
    }
    sets
}

/// Indices with `|x_i| > tol.activity`.
pub fn support(x: &DVector<f64>, tol: &Tolerances) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i].abs() > tol.activity).collect()
}

/// `f` composed with the projection `(x, y) -> x`.
fn lift(f: &SmoothMap, n: usize) -> SmoothMap {
    let (fv, fj, fh) = (f.clone(), f.clone(), f.clone());
    let head = move |z: &DVector<f64>| z.rows(0, n).into_owned();
    SmoothMap::new(
        2 * n,
        1,
        move |z| fv.value(&head(z)),
        move |z| {
            let mut j = DMatrix::zeros(1, 2 * n);
            j.view_mut((0, 0), (1, n)).copy_from(&fj.jacobian(&head(z)));
            j
        },
        move |z, _| {
            let mut h = DMatrix::zeros(2 * n, 2 * n);
            h.view_mut((0, 0), (n, n)).copy_from(&fh.hessian(&head(z), 0));
            h
        },
    )
}

/// The relaxation as an MPOC over `R^{2n}`. Inequalities are
/// `[Σy - (n-s); 1 - y_1; ...; 1 - y_n]`; `y >= 0` is carried by `F2 >= 0`.
pub fn build_relaxation(scno: &ScnoProblem) -> Result<MpocProblem> {
    let n = scno.n;
    let mut a = DMatrix::zeros(n + 1, 2 * n);
    let mut b = DVector::zeros(n + 1);
    for i in 0..n {
        a[(0, n + i)] = 1.0;
        a[(1 + i, n + i)] = -1.0;
        b[1 + i] = 1.0;
    }
    b[0] = -((n - scno.s) as f64);
    let x_idx: Vec<usize> = (0..n).collect();
    let y_idx: Vec<usize> = (n..2 * n).collect();
    MpocProblem::new(
        lift(&scno.f, n),
        SmoothMap::empty(2 * n),
        SmoothMap::affine(a, b),
        SmoothMap::coordinates(2 * n, &x_idx),
        SmoothMap::coordinates(2 * n, &y_idx),
    )
}

fn require_feasible(relax: &MpocProblem, scno: &ScnoProblem, point: &RelaxedPoint, tol: &Tolerances) -> Result<DVector<f64>> {
    if point.x.len() != scno.n || point.y.len() != scno.n {
        return Err(Error::Dimension {
            context: "relaxed point",
            expected: scno.n,
            got: point.x.len().max(point.y.len()),
        });
    }
    let z = point.stacked();
    let report = feasibility_check(relax, &z, tol)?;
    if !report.feasible {
        return Err(Error::Infeasible {
            violation: report.max_violation,
            tolerance: tol.feasibility,
        });
    }
    Ok(z)
}

#[derive(Clone, Debug, Serialize)]
pub struct MStationarity {
    pub stationary: bool,
    pub support: Vec<usize>,
    /// `∂f/∂x_i` for `i` in the support.
    pub gradient_on_support: Vec<f64>,
}

/// M-stationarity: `∂f/∂x_i = 0` on the support of `x`.
pub fn m_stationarity_check(scno: &ScnoProblem, x: &DVector<f64>, tol: &Tolerances) -> Result<MStationarity> {
    let grad = scno.gradient(x)?;
    let supp = support(x, tol);
    if supp.len() > scno.s {
        return Err(Error::SparsityViolated {
            support: supp.len(),
            s: scno.s,
        });
    }
    let restricted: Vec<f64> = supp.iter().map(|&i| grad[i]).collect();
    Ok(MStationarity {
        stationary: restricted.iter().all(|g| g.abs() <= tol.stationarity_residual),
        support: supp,
        gradient_on_support: restricted,
    })
}

/// Multipliers of the relaxation, each vector aligned with its index set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelaxationMultipliers {
    pub mu_bar: f64,
    /// On `I01`, for `y_i <= 1`.
    pub mu_i: Vec<f64>,
    /// On `I0≠`.
    pub sigma1: Vec<f64>,
    /// On `I1`.
    pub sigma2: Vec<f64>,
    /// On `I00`.
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
}

impl RelaxationMultipliers {
    fn stacked(&self) -> Vec<f64> {
        std::iter::once(self.mu_bar)
            .chain(self.mu_i.iter().copied())
            .chain(self.sigma1.iter().copied())
            .chain(self.sigma2.iter().copied())
            .chain(self.rho1.iter().copied())
            .chain(self.rho2.iter().copied())
            .collect()
    }

    fn from_stacked(w: &DVector<f64>, sets: &RelaxIndexSets) -> Self {
        let mut it = w.iter().copied();
        let mu_bar = it.next().unwrap_or(0.0);
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        Self {
            mu_bar,
            mu_i: take(sets.i01.len()),
            sigma1: take(sets.i0neq.len()),
            sigma2: take(sets.i1.len()),
            rho1: take(sets.i00.len()),
            rho2: take(sets.i00.len()),
        }
    }

    /// `‖(Df(x), 0) - Σ multiplier · basis vector‖₂`.
    pub fn residual(&self, scno: &ScnoProblem, point: &RelaxedPoint, sets: &RelaxIndexSets) -> Result<f64> {
        let a = structured_basis(scno.n, sets);
        let rhs = gradient_rhs(scno, point)?;
        Ok((rhs - a * DVector::from_vec(self.stacked())).norm())
    }
}

/// Columns, in multiplier order: `(0, e)`, `-(0, e_i)` on I01, `(e_i, 0)` on
/// I0≠, `(0, e_i)` on I1, then `(e_i, 0)` and `(0, e_i)` on I00.
fn structured_basis(n: usize, sets: &RelaxIndexSets) -> DMatrix<f64> {
    let cols = 1 + sets.i01.len() + sets.i0neq.len() + sets.i1.len() + 2 * sets.i00.len();
    let mut a = DMatrix::zeros(2 * n, cols);
    for i in 0..n {
        a[(n + i, 0)] = 1.0;
    }
    let mut c = 1;
    let mut put = |rows: Vec<usize>, value: f64| {
        for r in rows {
            a[(r, c)] = value;
            c += 1;
        }
    };
    put(sets.i01.iter().map(|&i| n + i).collect(), -1.0);
    put(sets.i0neq.clone(), 1.0);
    put(sets.i1.iter().map(|&i| n + i).collect(), 1.0);
    put(sets.i00.clone(), 1.0);
    put(sets.i00.iter().map(|&i| n + i).collect(), 1.0);
    a
}

fn gradient_rhs(scno: &ScnoProblem, point: &RelaxedPoint) -> Result<DVector<f64>> {
    let g = scno.gradient(&point.x)?;
    let mut rhs = DVector::zeros(2 * scno.n);
    rhs.rows_mut(0, scno.n).copy_from(&g);
    Ok(rhs)
}

fn zero_slack(scno: &ScnoProblem, point: &RelaxedPoint, sets: &RelaxIndexSets) -> f64 {
    sets.i0().iter().map(|&i| point.y[i]).sum::<f64>() - (scno.n - scno.s) as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct RelaxationCertificate {
    pub sets: RelaxIndexSets,
    pub multipliers: RelaxationMultipliers,
    pub residual_norm: f64,
    /// `Σ_{I0} y_i - (n - s)`.
    pub sum_slack: f64,
    pub is_t_stationary: bool,
}

/// T-stationarity of a relaxed point from the structured least-squares
/// solve, cross-checked against the generic certificate of the relaxation.
pub fn t_stationarity_check_relaxation(scno: &ScnoProblem, point: &RelaxedPoint, tol: &Tolerances) -> Result<RelaxationCertificate> {
    tol.validate()?;
    let relax = build_relaxation(scno)?;
    let z = require_feasible(&relax, scno, point, tol)?;
    let sets = relax_index_sets(point, tol);
    let a = structured_basis(scno.n, &sets);
    let rhs = gradient_rhs(scno, point)?;
    let w = linalg::lstsq_min_norm(&a, &rhs);
    let residual_norm = (&rhs - &a * &w).norm();
    let m = RelaxationMultipliers::from_stacked(&w, &sets);
    let sum_slack = zero_slack(scno, point, &sets);
    let z_tol = tol.multiplier_zero;
    let signs_ok = m.mu_bar >= -z_tol
        && (m.mu_bar * sum_slack).abs() <= tol.stationarity_residual
        && m.mu_i.iter().all(|&u| u >= -z_tol)
        && m.rho1.iter().zip(&m.rho2).all(|(&r1, &r2)| r1.abs() <= z_tol || r2 <= z_tol);
    let is_t_stationary = residual_norm <= tol.stationarity_residual && signs_ok;

    let generic = t_stationarity_check(&relax, &z, tol)?;
    if generic.is_t_stationary != is_t_stationary {
        return Err(Error::CrossCheck(format!(
            "structured verdict {is_t_stationary} (residual {residual_norm:e}) differs from generic verdict {} (residual {:e})",
            generic.is_t_stationary, generic.multipliers.residual_norm
        )));
    }
    Ok(RelaxationCertificate {
        sets,
        multipliers: m,
        residual_norm,
        sum_slack,
        is_t_stationary,
    })
}

/// The constructive multipliers for an M-stationary `x`: only `σ1` on I0≠
/// and `ϱ1` on I00 are nonzero, both equal to the partial derivatives.
pub fn t_multipliers_from_m(scno: &ScnoProblem, point: &RelaxedPoint, tol: &Tolerances) -> Result<RelaxationMultipliers> {
    let relax = build_relaxation(scno)?;
    require_feasible(&relax, scno, point, tol)?;
    let m = m_stationarity_check(scno, &point.x, tol)?;
    if let Some(k) = m.gradient_on_support.iter().position(|g| g.abs() > tol.stationarity_residual) {
        return Err(Error::NotMStationary {
            index: m.support[k],
            value: m.gradient_on_support[k],
        });
    }
    let grad = scno.gradient(&point.x)?;
    let sets = relax_index_sets(point, tol);
    Ok(RelaxationMultipliers {
        mu_bar: 0.0,
        mu_i: vec![0.0; sets.i01.len()],
        sigma1: sets.i0neq.iter().map(|&i| grad[i]).collect(),
        sigma2: vec![0.0; sets.i1.len()],
        rho1: sets.i00.iter().map(|&i| grad[i]).collect(),
        rho2: vec![0.0; sets.i00.len()],
    })
}

/// `Df(x)` supported on I0≠.
pub fn s_stationarity_check(scno: &ScnoProblem, point: &RelaxedPoint, tol: &Tolerances) -> Result<bool> {
    let relax = build_relaxation(scno)?;
    require_feasible(&relax, scno, point, tol)?;
    let grad = scno.gradient(&point.x)?;
    let sets = relax_index_sets(point, tol);
    Ok(sets
        .i1
        .iter()
        .chain(&sets.i00)
        .all(|&i| grad[i].abs() <= tol.stationarity_residual))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CaseTag {
    /// `Σ_{I0} y_i = n - s`.
    Case1,
    /// `Σ_{I0} y_i > n - s`.
    Case2,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegeneracyAudit {
    pub case_tag: CaseTag,
    /// The condition the case analysis predicts to fail.
    pub failed_conditions: Vec<String>,
    pub detail: String,
    /// Failures reported by the generic classifier on the relaxation.
    pub generic_failed: Vec<String>,
    /// `failed_conditions ⊆ generic_failed`.
    pub consistent: bool,
}

/// Traces which nondegeneracy condition fails at a T-stationary relaxed
/// point and confirms with the generic classifier.
pub fn degeneracy_audit(scno: &ScnoProblem, point: &RelaxedPoint, tol: &Tolerances) -> Result<DegeneracyAudit> {
    let cert = t_stationarity_check_relaxation(scno, point, tol)?;
    if !cert.is_t_stationary {
        return Err(Error::NotTStationary(format!(
            "relaxed point has residual {:e}",
            cert.residual_norm
        )));
    }
    let sets = &cert.sets;
    let i0 = sets.i0();
    let (case_tag, failed, detail) = if cert.sum_slack.abs() <= tol.activity {
        let binary_on_zeros = i0.iter().all(|i| sets.i01.contains(i) || sets.i00.contains(i));
        if binary_on_zeros {
            (CaseTag::Case1, "ND1", "sum of y over I0 equals n-s with y binary on I0: gradients of the sum constraint, y_i <= 1 and y_i >= 0 are dependent".to_string())
        } else {
            (CaseTag::Case1, "ND2", "sum of y over I0 equals n-s: the active sum constraint carries a zero multiplier".to_string())
        }
    } else if !sets.i01.is_empty() {
        (CaseTag::Case2, "ND2", format!("sum constraint inactive: y_i <= 1 is active with zero multiplier on {:?}", sets.i01))
    } else if !sets.i00.is_empty() {
        (CaseTag::Case2, "ND3", format!("sum constraint inactive: rho2 vanishes on biactive indices {:?}", sets.i00))
    } else {
        (CaseTag::Case2, "ND4", format!("sum constraint inactive: (0, e_i) for i = {} spans a null direction of the restricted Hessian", i0[0]))
    };

    let relax = build_relaxation(scno)?;
    let generic = classify_point(&relax, &point.stacked(), tol)?;
    let report = generic
        .report
        .ok_or_else(|| Error::CrossCheck("generic classifier does not certify T-stationarity".into()))?;
    if report.classification != Classification::Degenerate {
        return Err(Error::CrossCheck(format!(
            "generic classifier reports {:?} at a relaxed point",
            report.classification
        )));
    }
    let generic_failed: Vec<String> = report.failed().into_iter().map(String::from).collect();
    let consistent = generic_failed.iter().any(|g| g == failed);
    Ok(DegeneracyAudit {
        case_tag,
        failed_conditions: vec![failed.to_string()],
        detail,
        generic_failed,
        consistent,
    })
}

/// `y_i = 1` on the `n - s` smallest indices of `I0(x)`, zero elsewhere.
pub fn canonical_completion(scno: &ScnoProblem, x: &DVector<f64>, tol: &Tolerances) -> Result<RelaxedPoint> {
    if x.len() != scno.n {
        return Err(Error::Dimension {
            context: "SCNO point",
            expected: scno.n,
            got: x.len(),
        });
    }
    let supp = support(x, tol);
    if supp.len() > scno.s {
        return Err(Error::SparsityViolated {
            support: supp.len(),
            s: scno.s,
        });
    }
    let mut y = DVector::zeros(scno.n);
    for i in (0..scno.n).filter(|&i| x[i].abs() <= tol.activity).take(scno.n - scno.s) {
        y[i] = 1.0;
    }
    Ok(RelaxedPoint::new(x.clone(), y))
}

/// Text rendering of the mixed-integer reformulation.
pub fn mixed_integer_program(scno: &ScnoProblem) -> String {
    let n = scno.n;
    let mut out = String::new();
    let _ = writeln!(out, "minimize    f(x_1, ..., x_{n})");
    let _ = writeln!(out, "subject to  y_1 + ... + y_{n} >= {}", n - scno.s);
    let _ = writeln!(out, "            x_i * y_i = 0,   i = 1..{n}");
    let _ = writeln!(out, "            y_i in {{0, 1}},  i = 1..{n}");
    out
}

/// Random quadratic instances with feasible relaxed points.
pub mod sampling {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[derive(Clone, Debug)]
    pub struct Sample {
        pub scno: ScnoProblem,
        pub point: RelaxedPoint,
    }

    /// What the linear term is tuned to achieve at the sampled point.
    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Target {
        /// Independent random linear term.
        Free,
        /// `∂f/∂x_i = 0` on the support.
        MStationary,
        /// `∂f/∂x_i = 0` on `I1 ∪ I00`.
        SStationary,
    }

    /// `n ∈ [2, n_max]`, `s < n`, support size at most `s`. The `y` entries
    /// are multiples of 1/4 so that sums hit `n - s` exactly.
    pub fn sample<R: Rng>(rng: &mut R, n_max: usize, target: Target) -> Sample {
        let n = rng.gen_range(2..=n_max.max(2));
        let s = rng.gen_range(0..n);
        let k = rng.gen_range(0..=s);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let supp = &idx[..k];
        let zeros = &idx[k..];

        let mut x = DVector::zeros(n);
        for &i in supp {
            let mag = rng.gen_range(0.5..2.0);
            x[i] = if rng.gen_bool(0.5) { mag } else { -mag };
        }

        // quarters distributed over I0
        let need = 4 * (n - s);
        let room = 4 * zeros.len();
        let quarters = if room > need && rng.gen_bool(0.5) { rng.gen_range(need + 1..=room) } else { need };
        let mut y = DVector::zeros(n);
        let mut count = vec![0usize; n];
        let mut left = quarters;
        while left > 0 {
            let &i = zeros.choose(rng).expect("I0 is nonempty");
            if count[i] < 4 {
                // fill in chunks so that 0 and 1 both show up
                let chunk = rng.gen_range(1..=(4 - count[i]).min(left));
                count[i] += chunk;
                left -= chunk;
            }
        }
        for i in 0..n {
            y[i] = count[i] as f64 * 0.25;
        }

        let r = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = (&r + r.transpose()) * 0.5;
        let mut c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let qx = &q * &x;
        let tuned: Vec<usize> = match target {
            Target::Free => vec![],
            Target::MStationary => supp.to_vec(),
            Target::SStationary => (0..n).filter(|&i| x[i] != 0.0 || y[i] == 0.0).collect(),
        };
        for i in tuned {
            c[i] = -qx[i];
        }
        Sample {
            scno: ScnoProblem::quadratic(q, c, s).expect("sampled sizes are consistent"),
            point: RelaxedPoint::new(x, y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// `(x1-1)² + (x2-2)²` with `s = 1`.
    fn example() -> ScnoProblem {
        ScnoProblem::quadratic(DMatrix::identity(2, 2) * 2.0, v(&[-2.0, -4.0]), 1).unwrap()
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn relaxation_counts() {
        let r = build_relaxation(&example()).unwrap();
        assert_eq!((r.n(), r.num_ineq(), r.num_pairs(), r.num_eq()), (4, 3, 2, 0));
    }

    #[test]
    fn sparsity_level_is_validated() {
        assert!(ScnoProblem::quadratic(DMatrix::identity(2, 2), v(&[0.0, 0.0]), 2).is_err());
    }

    #[test]
    fn relaxation_feasibility_examples() {
        let scno = example();
        let relax = build_relaxation(&scno).unwrap();
        let ok = RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 1.0]);
        assert!(feasibility_check(&relax, &ok.stacked(), &tol()).unwrap().feasible);
        for y in [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5], [0.0, 1.0]] {
            let bad = RelaxedPoint::from_slices(&[1.0, 1.0], &y);
            assert!(!feasibility_check(&relax, &bad.stacked(), &tol()).unwrap().feasible);
        }
    }

    #[test]
    fn m_stationarity_examples() {
        let scno = example();
        assert!(m_stationarity_check(&scno, &v(&[1.0, 0.0]), &tol()).unwrap().stationary);
        let empty = m_stationarity_check(&scno, &v(&[0.0, 0.0]), &tol()).unwrap();
        assert!(empty.stationary && empty.support.is_empty());
        let m = m_stationarity_check(&scno, &v(&[0.5, 0.0]), &tol()).unwrap();
        assert!(!m.stationary);
        assert!((m.gradient_on_support[0] + 1.0).abs() < 1e-15);
        assert!(matches!(
            m_stationarity_check(&scno, &v(&[1.0, 1.0]), &tol()),
            Err(Error::SparsityViolated { support: 2, s: 1 })
        ));
    }

    #[test]
    fn t_stationarity_examples() {
        let scno = example();
        let c = t_stationarity_check_relaxation(&scno, &RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 1.0]), &tol()).unwrap();
        assert!(c.is_t_stationary);
        let c = t_stationarity_check_relaxation(&scno, &RelaxedPoint::from_slices(&[0.5, 0.0], &[0.0, 1.0]), &tol()).unwrap();
        assert!(!c.is_t_stationary);
    }

    #[test]
    fn flat_gradient_gives_zero_multipliers() {
        // Df(1, 0) = 0 for (x1-1)² + x2²
        let scno = ScnoProblem::quadratic(DMatrix::identity(2, 2) * 2.0, v(&[-2.0, 0.0]), 1).unwrap();
        let p = RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 1.0]);
        let c = t_stationarity_check_relaxation(&scno, &p, &tol()).unwrap();
        assert!(c.is_t_stationary);
        assert!(c.multipliers.stacked().iter().all(|&w| w.abs() < 1e-15));
        let m = t_multipliers_from_m(&scno, &p, &tol()).unwrap();
        assert!(m.stacked().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn constructive_multipliers_examples() {
        let scno = example();
        let p = RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 1.0]);
        let m = t_multipliers_from_m(&scno, &p, &tol()).unwrap();
        assert_eq!(m.sigma1, vec![-4.0]);
        assert_eq!(m.sigma2, vec![0.0]);
        let sets = relax_index_sets(&p, &tol());
        assert!(m.residual(&scno, &p, &sets).unwrap() <= 1e-15);

        let p = RelaxedPoint::from_slices(&[0.0, 0.0], &[1.0, 1.0]);
        let sets = relax_index_sets(&p, &tol());
        assert_eq!(sets.i01, vec![0, 1]);
        assert_eq!(sets.i0neq, vec![0, 1]);
        let m = t_multipliers_from_m(&scno, &p, &tol()).unwrap();
        assert_eq!(m.sigma1, vec![-2.0, -4.0]);
        assert_eq!(m.mu_i, vec![0.0, 0.0]);

        let bad = RelaxedPoint::from_slices(&[0.5, 0.0], &[0.0, 1.0]);
        assert!(matches!(t_multipliers_from_m(&scno, &bad, &tol()), Err(Error::NotMStationary { index: 0, .. })));
    }

    #[test]
    fn s_stationarity_examples() {
        let scno = example();
        assert!(s_stationarity_check(&scno, &RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 1.0]), &tol()).unwrap());
        assert!(matches!(
            s_stationarity_check(&scno, &RelaxedPoint::from_slices(&[0.0, 0.0], &[0.0, 0.0]), &tol()),
            Err(Error::Infeasible { .. })
        ));
        assert!(s_stationarity_check(&scno, &RelaxedPoint::from_slices(&[0.0, 0.0], &[0.5, 0.5]), &tol()).unwrap());
    }

    #[test]
    fn audit_case1_licq() {
        let a = degeneracy_audit(&example(), &RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 1.0]), &tol()).unwrap();
        assert_eq!(a.case_tag, CaseTag::Case1);
        assert_eq!(a.failed_conditions, vec!["ND1".to_string()]);
        assert!(a.consistent);
    }

    #[test]
    fn audit_rejects_infeasible() {
        let r = degeneracy_audit(&example(), &RelaxedPoint::from_slices(&[1.0, 0.0], &[0.0, 0.6]), &tol());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn audit_case2_hessian() {
        let a = degeneracy_audit(&example(), &RelaxedPoint::from_slices(&[0.0, 0.0], &[0.6, 0.6]), &tol()).unwrap();
        assert_eq!(a.case_tag, CaseTag::Case2);
        assert_eq!(a.failed_conditions, vec!["ND4".to_string()]);
        assert!(a.consistent, "{:?}", a.generic_failed);
    }

    #[test]
    fn audit_rejects_non_stationary() {
        let r = degeneracy_audit(&example(), &RelaxedPoint::from_slices(&[0.5, 0.0], &[0.0, 1.0]), &tol());
        assert!(matches!(r, Err(Error::NotTStationary(_))));
    }

    #[test]
    fn canonical_completion_fills_smallest_zero_indices() {
        let scno = ScnoProblem::quadratic(DMatrix::identity(4, 4), DVector::zeros(4), 2).unwrap();
        let p = canonical_completion(&scno, &v(&[0.0, 3.0, 0.0, 0.0]), &tol()).unwrap();
        assert_eq!(p.y, v(&[1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn printer_mentions_every_constraint() {
        let text = mixed_integer_program(&example());
        assert!(text.contains(">= 1") && text.contains("x_i * y_i = 0") && text.contains("{0, 1}"));
    }

    #[test]
    fn lifted_objective_ignores_y() {
        let relax = build_relaxation(&example()).unwrap();
        let z = v(&[0.3, -0.2, 0.7, 0.1]);
        assert!(crate::fd_derivative_check(relax.f(), &z).unwrap() < 1e-6);
        assert_eq!(relax.objective_gradient(&z).rows(2, 2).amax(), 0.0);
    }

    #[test]
    fn sampled_points_are_feasible() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = sampling::sample(&mut rng, 6, sampling::Target::Free);
            let relax = build_relaxation(&s.scno).unwrap();
            assert!(feasibility_check(&relax, &s.point.stacked(), &tol()).unwrap().feasible);
        }
    }

    #[test]
    fn relaxed_t_iff_m_and_degenerate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (mut pos, mut case1, mut case2) = (0, 0, 0);
        for _ in 0..300 {
            let target = if rng.gen_bool(0.5) { sampling::Target::MStationary } else { sampling::Target::Free };
            let s = sampling::sample(&mut rng, 6, target);
            let m = m_stationarity_check(&s.scno, &s.point.x, &tol()).unwrap().stationary;
            let t = t_stationarity_check_relaxation(&s.scno, &s.point, &tol()).unwrap();
            assert_eq!(m, t.is_t_stationary);
            if m {
                pos += 1;
                let a = degeneracy_audit(&s.scno, &s.point, &tol()).unwrap();
                assert!(a.consistent, "{a:?}");
                match a.case_tag {
                    CaseTag::Case1 => case1 += 1,
                    CaseTag::Case2 => case2 += 1,
                }
            }
        }
        assert!(pos > 100 && case1 > 20 && case2 > 20, "{pos} {case1} {case2}");
    }

    #[test]
    fn s_stationary_points_are_t_stationary() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = sampling::sample(&mut rng, 6, sampling::Target::SStationary);
            assert!(s_stationarity_check(&s.scno, &s.point, &tol()).unwrap());
            assert!(t_stationarity_check_relaxation(&s.scno, &s.point, &tol()).unwrap().is_t_stationary);
        }
    }

    #[test]
    fn t_stationary_point_need_not_be_s_stationary() {
        // x = (1,0,0), y = (0,1,0): index 3 is biactive with ∂f_3 = 1
        let scno = ScnoProblem::quadratic(DMatrix::identity(3, 3), v(&[-1.0, 0.0, 1.0]), 2).unwrap();
        let p = RelaxedPoint::from_slices(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let c = t_stationarity_check_relaxation(&scno, &p, &tol()).unwrap();
        assert!(c.is_t_stationary);
        assert!((c.multipliers.rho1[0] - 1.0).abs() < 1e-12);
        assert!(!s_stationarity_check(&scno, &p, &tol()).unwrap());
    }
}
