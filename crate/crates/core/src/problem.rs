//! Problem model: twice-differentiable function bundles, feasibility and
//! active-index patterns.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type ValueFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type HessianFn = dyn Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync;

/// A C² map `R^input_dim -> R^output_dim` given by callbacks for its value,
/// Jacobian and per-component Hessians.
#[derive(Clone)]
pub struct SmoothMap {
    input_dim: usize,
    output_dim: usize,
    value: Arc<ValueFn>,
    jacobian: Arc<JacobianFn>,
    hessian: Arc<HessianFn>,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish_non_exhaustive()
    }
}

/// Central-difference step for coordinate value `xi` and exponent `1/root`.
fn fd_step(xi: f64, root: i32) -> f64 {
    f64::EPSILON.powf(1.0 / root as f64) * (1.0 + xi.abs())
}

impl SmoothMap {
    pub fn new<V, J, H>(input_dim: usize, output_dim: usize, value: V, jacobian: J, hessian: H) -> Self
    where
        V: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        H: Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            input_dim,
            output_dim,
            value: Arc::new(value),
            jacobian: Arc::new(jacobian),
            hessian: Arc::new(hessian),
        }
    }

    /// Wraps a value-only callback. The Jacobian uses central differences with
    /// step `eps^(1/3)(1+|x_i|)`, the Hessians second-order central differences
    /// with step `eps^(1/4)(1+|x_i|)`.
    pub fn from_value<V>(input_dim: usize, output_dim: usize, value: V) -> Self
    where
        V: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let value: Arc<ValueFn> = Arc::new(value);
        let v_jac = Arc::clone(&value);
        let v_hess = Arc::clone(&value);
        let jacobian = move |x: &DVector<f64>| {
            let mut jac = DMatrix::zeros(output_dim, input_dim);
            let mut xp = x.clone();
            for i in 0..input_dim {
                let h = fd_step(x[i], 3);
                xp[i] = x[i] + h;
                let up = v_jac(&xp);
                xp[i] = x[i] - h;
                let down = v_jac(&xp);
                xp[i] = x[i];
                jac.column_mut(i).copy_from(&((up - down) / (2.0 * h)));
            }
            jac
        };
        let hessian = move |x: &DVector<f64>, c: usize| {
            let n = input_dim;
            let mut hess = DMatrix::zeros(n, n);
            let mut xp = x.clone();
            let eval = |xp: &mut DVector<f64>, i: usize, si: f64, j: usize, sj: f64| {
                xp[i] += si;
                xp[j] += sj;
                let v = v_hess(xp)[c];
                xp[i] -= si;
                xp[j] -= sj;
                v
            };
            for i in 0..n {
                let hi = fd_step(x[i], 4);
                for j in i..n {
                    let hj = fd_step(x[j], 4);
                    let pp = eval(&mut xp, i, hi, j, hj);
                    let pm = eval(&mut xp, i, hi, j, -hj);
                    let mp = eval(&mut xp, i, -hi, j, hj);
                    let mm = eval(&mut xp, i, -hi, j, -hj);
                    let d = (pp - pm - mp + mm) / (4.0 * hi * hj);
                    hess[(i, j)] = d;
                    hess[(j, i)] = d;
                }
            }
            hess
        };
        Self {
            input_dim,
            output_dim,
            value,
            jacobian: Arc::new(jacobian),
            hessian: Arc::new(hessian),
        }
    }

    /// `x -> A x + b`.
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.nrows(), b.len(), "affine map: rows of A must match b");
        let (m, n) = a.shape();
        let a_val = a.clone();
        Self::new(
            n,
            m,
            move |x| &a_val * x + &b,
            move |_| a.clone(),
            move |_, _| DMatrix::zeros(n, n),
        )
    }

    /// Scalar quadratic `x -> ½ xᵀQx + cᵀx + r` with symmetric `Q`.
    pub fn quadratic(q: DMatrix<f64>, c: DVector<f64>, r: f64) -> Self {
        let n = c.len();
        assert_eq!(q.shape(), (n, n), "quadratic map: Q must be n x n");
        let q = (&q + q.transpose()) * 0.5;
        let (q_val, c_val) = (q.clone(), c.clone());
        let q_jac = q.clone();
        Self::new(
            n,
            1,
            move |x| DVector::from_element(1, 0.5 * x.dot(&(&q_val * x)) + c_val.dot(x) + r),
            move |x| DMatrix::from_row_slice(1, n, (&q_jac * x + &c).as_slice()),
            move |_, _| q.clone(),
        )
    }

    /// Coordinate selection `x -> (x_{i_1}, ..., x_{i_k})`.
    pub fn coordinates(n: usize, indices: &[usize]) -> Self {
        let mut a = DMatrix::zeros(indices.len(), n);
        for (row, &i) in indices.iter().enumerate() {
            a[(row, i)] = 1.0;
        }
        Self::affine(a, DVector::zeros(indices.len()))
    }

    /// The map into `R^0`.
    pub fn empty(n: usize) -> Self {
        Self::affine(DMatrix::zeros(0, n), DVector::zeros(0))
    }

    /// `x -> factor * self(x)`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (v, j, h) = (self.clone(), self.clone(), self.clone());
        Self::new(
            self.input_dim,
            self.output_dim,
            move |x| v.value(x) * factor,
            move |x| j.jacobian(x) * factor,
            move |x, c| h.hessian(x, c) * factor,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.value)(x)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(x)
    }

    pub fn hessian(&self, x: &DVector<f64>, component: usize) -> DMatrix<f64> {
        (self.hessian)(x, component)
    }

    /// Gradient (column) of component `c`.
    pub fn gradient(&self, x: &DVector<f64>, c: usize) -> DVector<f64> {
        self.jacobian(x).row(c).transpose()
    }
}

fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm()).max(1e-8);
    (a - b).norm() / scale
}

/// Compares the supplied Jacobian and component Hessians of `map` against
/// central differences at `x`. Returns the largest relative Frobenius error.
pub fn fd_derivative_check(map: &SmoothMap, x: &DVector<f64>) -> Result<f64> {
    let n = map.input_dim();
    if x.len() != n {
        return Err(Error::Dimension {
            context: "fd_derivative_check",
            expected: n,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { coordinate: i });
    }
    let m = map.output_dim();
    let jac = map.jacobian(x);
    let mut jac_fd = DMatrix::zeros(m, n);
    let mut hess_fd: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); m];
    let mut xp = x.clone();
    for i in 0..n {
        let h = fd_step(x[i], 3);
        xp[i] = x[i] + h;
        let (v_up, j_up) = (map.value(&xp), map.jacobian(&xp));
        xp[i] = x[i] - h;
        let (v_dn, j_dn) = (map.value(&xp), map.jacobian(&xp));
        xp[i] = x[i];
        let col = (v_up - v_dn) / (2.0 * h);
        let dj = (j_up - j_dn) / (2.0 * h);
        if col.iter().chain(dj.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { coordinate: i });
        }
        jac_fd.column_mut(i).copy_from(&col);
        for (c, hf) in hess_fd.iter_mut().enumerate() {
            hf.column_mut(i).copy_from(&dj.row(c).transpose());
        }
    }
    let mut worst = relative_frobenius(&jac, &jac_fd);
    for (c, hf) in hess_fd.iter().enumerate() {
        worst = worst.max(relative_frobenius(&map.hessian(x, c), hf));
    }
    Ok(worst)
}

/// An MPOC instance:
/// `min f(x)` s.t. `h(x) = 0`, `g(x) >= 0`, `F1(x)·F2(x) = 0`, `F2(x) >= 0`.
/// Read-only once built.
#[derive(Clone, Debug)]
pub struct MpocProblem {
    n: usize,
    f: SmoothMap,
    h: SmoothMap,
    g: SmoothMap,
    f1: SmoothMap,
    f2: SmoothMap,
}

impl MpocProblem {
    pub fn new(f: SmoothMap, h: SmoothMap, g: SmoothMap, f1: SmoothMap, f2: SmoothMap) -> Result<Self> {
        let n = f.input_dim();
        for (map, ctx) in [(&h, "h"), (&g, "g"), (&f1, "F1"), (&f2, "F2")] {
            if map.input_dim() != n {
                return Err(Error::InvalidParameter(format!(
                    "{ctx} has input dimension {} but f has {n}",
                    map.input_dim()
                )));
            }
        }
        if f.output_dim() != 1 {
            return Err(Error::InvalidParameter("objective must be scalar".into()));
        }
        if f1.output_dim() != f2.output_dim() {
            return Err(Error::InvalidParameter(format!(
                "F1 has {} components but F2 has {}",
                f1.output_dim(),
                f2.output_dim()
            )));
        }
        Ok(Self { n, f, h, g, f1, f2 })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn num_eq(&self) -> usize {
        self.h.output_dim()
    }
    pub fn num_ineq(&self) -> usize {
        self.g.output_dim()
    }
    pub fn num_pairs(&self) -> usize {
        self.f1.output_dim()
    }
    pub fn f(&self) -> &SmoothMap {
        &self.f
    }
    pub fn h(&self) -> &SmoothMap {
        &self.h
    }
    pub fn g(&self) -> &SmoothMap {
        &self.g
    }
    pub fn f1(&self) -> &SmoothMap {
        &self.f1
    }
    pub fn f2(&self) -> &SmoothMap {
        &self.f2
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.f.value(x)[0]
    }

    pub fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f.gradient(x, 0)
    }

    /// Same constraints, objective multiplied by `factor`.
    pub fn with_scaled_objective(&self, factor: f64) -> Self {
        Self {
            f: self.f.scaled(factor),
            ..self.clone()
        }
    }

    pub(crate) fn check_dim(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                context,
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// All five maps, for derivative audits.
    pub fn maps(&self) -> [(&'static str, &SmoothMap); 5] {
        [
            ("f", &self.f),
            ("h", &self.h),
            ("g", &self.g),
            ("F1", &self.f1),
            ("F2", &self.f2),
        ]
    }
}

/// Numerical thresholds shared by all checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub activity: f64,
    pub stationarity_residual: f64,
    pub eigen_singularity: f64,
    pub multiplier_zero: f64,
    pub feasibility: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            activity: 1e-8,
            stationarity_residual: 1e-8,
            eigen_singularity: 1e-8,
            multiplier_zero: 1e-7,
            feasibility: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("activity", self.activity),
            ("stationarity_residual", self.stationarity_residual),
            ("eigen_singularity", self.eigen_singularity),
            ("multiplier_zero", self.multiplier_zero),
            ("feasibility", self.feasibility),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("tolerance {name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub max_violation: f64,
}

/// Largest violation of the MPOC constraints at `x` and the verdict against
/// `tol.feasibility`.
pub fn feasibility_check(problem: &MpocProblem, x: &DVector<f64>, tol: &Tolerances) -> Result<FeasibilityReport> {
    problem.check_dim(x, "feasibility_check")?;
    let h = problem.h.value(x);
    let g = problem.g.value(x);
    let f1 = problem.f1.value(x);
    let f2 = problem.f2.value(x);
    let violation = h
        .iter()
        .map(|v| v.abs())
        .chain(g.iter().map(|v| (-v).max(0.0)))
        .chain(f1.iter().zip(f2.iter()).map(|(a, b)| (a * b).abs()))
        .chain(f2.iter().map(|v| (-v).max(0.0)))
        .fold(0.0, f64::max);
    Ok(FeasibilityReport {
        feasible: violation <= tol.feasibility,
        max_violation: violation,
    })
}

/// Active index sets at a feasible point (0-based indices) and the counts
/// `s = |I| + |a01| + |a10|`, `q = s + |J0|`, `p = n - q - 2|a00|`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePattern {
    pub j0: Vec<usize>,
    pub a01: Vec<usize>,
    pub a10: Vec<usize>,
    pub a00: Vec<usize>,
    pub s: usize,
    pub q: usize,
    /// Negative when more constraints are active than the dimension allows.
    pub p: isize,
}

impl ActivePattern {
    fn from_sets(n: usize, num_eq: usize, j0: Vec<usize>, a01: Vec<usize>, a10: Vec<usize>, a00: Vec<usize>) -> Self {
        let s = num_eq + a01.len() + a10.len();
        let q = s + j0.len();
        let p = n as isize - q as isize - 2 * a00.len() as isize;
        Self { j0, a01, a10, a00, s, q, p }
    }

    /// Number of active constraint gradients entering LICQ.
    pub fn active_count(&self, num_eq: usize) -> usize {
        num_eq + self.j0.len() + self.a01.len() + self.a10.len() + 2 * self.a00.len()
    }
}

/// Classifies the constraints at a feasible point with absolute threshold
/// `tol.activity`. A value exactly at the threshold counts as zero, so ties
/// between the branches land in the biactive set.
pub fn active_sets(problem: &MpocProblem, x: &DVector<f64>, tol: &Tolerances) -> Result<ActivePattern> {
    let report = feasibility_check(problem, x, tol)?;
    if !report.feasible {
        return Err(Error::Infeasible {
            violation: report.max_violation,
            tolerance: tol.feasibility,
        });
    }
    let act = tol.activity;
    let g = problem.g.value(x);
    let f1 = problem.f1.value(x);
    let f2 = problem.f2.value(x);
    let j0 = (0..g.len()).filter(|&j| g[j].abs() <= act).collect();
    let (mut a01, mut a10, mut a00) = (Vec::new(), Vec::new(), Vec::new());
    for m in 0..f1.len() {
        let z1 = f1[m].abs() <= act;
        let z2 = f2[m].abs() <= act;
        match (z1, z2) {
            (true, true) => a00.push(m),
            (true, false) if f2[m] > act => a01.push(m),
            (false, true) => a10.push(m),
            _ => {
                return Err(Error::ToleranceConflict {
                    pair: m,
                    f1: f1[m],
                    f2: f2[m],
                })
            }
        }
    }
    Ok(ActivePattern::from_sets(problem.n(), problem.num_eq(), j0, a01, a10, a00))
}
