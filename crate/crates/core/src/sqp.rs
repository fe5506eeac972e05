//! Line-search SQP for small dense nonlinear programs
//!
//! ```text
//! min f(x)  s.t.  c_E(x) = 0,  c_I(x) >= 0
//! ```
//!
//! with Lagrangian `f - λᵀc_E - μᵀc_I`. Each step solves a convex QP whose
//! Hessian is the Lagrangian Hessian shifted by `τI` until it is positive
//! definite on the null space of the working-set Jacobian, then augmented
//! along the working-set normals if needed. Steps are globalized with an ℓ1
//! merit function, Armijo backtracking and a second-order correction.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::problem::SmoothMap;
use crate::qp::{self, QpError, QpProblem};

#[derive(Clone, Debug)]
pub struct Nlp {
    pub objective: SmoothMap,
    pub eq: SmoothMap,
    pub ineq: SmoothMap,
}

#[derive(Clone, Copy, Debug)]
pub struct SqpOptions {
    pub max_iter: usize,
    pub stationarity: f64,
    pub feasibility: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            stationarity: 1e-8,
            feasibility: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SqpResult {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    /// `‖∇f - J_Eᵀλ - J_Iᵀμ‖₂` at `x`.
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

struct Eval {
    f: f64,
    grad: DVector<f64>,
    ce: DVector<f64>,
    je: DMatrix<f64>,
    ci: DVector<f64>,
    ji: DMatrix<f64>,
}

impl Nlp {
    fn eval(&self, x: &DVector<f64>) -> Eval {
        Eval {
            f: self.objective.value(x)[0],
            grad: self.objective.gradient(x, 0),
            ce: self.eq.value(x),
            je: self.eq.jacobian(x),
            ci: self.ineq.value(x),
            ji: self.ineq.jacobian(x),
        }
    }

    fn violation(&self, x: &DVector<f64>) -> (f64, f64) {
        violation_of(&self.eq.value(x), &self.ineq.value(x))
    }

    fn lagrangian_hessian(&self, x: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
        let mut w = self.objective.hessian(x, 0);
        for (i, &l) in lambda.iter().enumerate() {
            if l != 0.0 {
                w -= self.eq.hessian(x, i) * l;
            }
        }
        for (i, &m) in mu.iter().enumerate() {
            if m != 0.0 {
                w -= self.ineq.hessian(x, i) * m;
            }
        }
        (&w + w.transpose()) * 0.5
    }
}

/// (ℓ1 violation, max violation).
fn violation_of(ce: &DVector<f64>, ci: &DVector<f64>) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for v in ce.iter().map(|c| c.abs()).chain(ci.iter().map(|c| (-c).max(0.0))) {
        sum += v;
        max = max.max(v);
    }
    (sum, max)
}

struct Kkt {
    residual: f64,
    violation: f64,
    complementarity: f64,
}

fn kkt_measures(e: &Eval, lambda: &DVector<f64>, mu: &DVector<f64>) -> Kkt {
    let r = &e.grad - e.je.transpose() * lambda - e.ji.transpose() * mu;
    let complementarity = mu
        .iter()
        .zip(e.ci.iter())
        .map(|(m, c)| (m * c).abs().max(-m))
        .fold(0.0, f64::max);
    Kkt {
        residual: r.norm(),
        violation: violation_of(&e.ce, &e.ci).1,
        complementarity,
    }
}

/// Positive definite model Hessian: `W + τI`, plus `ρ·A_WᵀA_W` when the
/// shift alone does not reach the range of the working-set normals.
fn convexify(w: &DMatrix<f64>, a_w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let scale = w.amax().max(1.0);
    let delta = 1e-6 * scale;
    let z = linalg::null_space(a_w);
    let tau = if z.ncols() > 0 {
        let reduced = z.transpose() * w * &z;
        (delta - linalg::sym_eigenvalues(&reduced)[0]).max(0.0)
    } else {
        0.0
    };
    let b = w + DMatrix::identity(n, n) * tau;
    // a Cholesky factor can exist on a roundoff pivot; ask for a margin
    let definite = |m: &DMatrix<f64>| linalg::sym_eigenvalues(m).first().is_none_or(|&l| l > 1e-3 * delta);
    if definite(&b) {
        return b;
    }
    let ata = a_w.transpose() * a_w;
    let mut rho = scale;
    for _ in 0..24 {
        let bb = &b + &ata * rho;
        if definite(&bb) {
            return bb;
        }
        rho *= 10.0;
    }
    let shift = (delta - linalg::sym_eigenvalues(&b)[0]).max(0.0);
    b + DMatrix::identity(n, n) * shift
}

struct Step {
    d: DVector<f64>,
    u_eq: DVector<f64>,
    u_in: DVector<f64>,
}

fn solve_subproblem(b: &DMatrix<f64>, g: &DVector<f64>, e: &Eval, ce: &DVector<f64>, ci: &DVector<f64>, nu: f64) -> Option<Step> {
    let qp = QpProblem {
        h: b.clone(),
        g: g.clone(),
        a_eq: e.je.clone(),
        b_eq: -ce,
        a_in: e.ji.clone(),
        b_in: -ci,
    };
    match qp::solve(&qp) {
        Ok(s) => Some(Step { d: s.d, u_eq: s.u_eq, u_in: s.u_in }),
        Err(QpError::Infeasible | QpError::Stalled) => elastic(&qp, nu),
        Err(QpError::NotConvex) => None,
    }
}

/// ℓ1-elastic version of an inconsistent QP: every row gets nonnegative
/// slacks priced at `nu`.
fn elastic(qp: &QpProblem, nu: f64) -> Option<Step> {
    let n = qp.g.len();
    let me = qp.a_eq.nrows();
    let mi = qp.a_in.nrows();
    let nv = n + mi + 2 * me;
    let eps = 1e-8 * qp.h.amax().max(1.0);
    let mut h = DMatrix::identity(nv, nv) * eps;
    h.view_mut((0, 0), (n, n)).copy_from(&qp.h);
    let mut g = DVector::from_element(nv, nu);
    g.rows_mut(0, n).copy_from(&qp.g);
    let mut a_eq = DMatrix::zeros(me, nv);
    a_eq.view_mut((0, 0), (me, n)).copy_from(&qp.a_eq);
    for i in 0..me {
        a_eq[(i, n + mi + 2 * i)] = 1.0;
        a_eq[(i, n + mi + 2 * i + 1)] = -1.0;
    }
    let mut a_in = DMatrix::zeros(2 * mi + 2 * me, nv);
    let mut b_in = DVector::zeros(2 * mi + 2 * me);
    a_in.view_mut((0, 0), (mi, n)).copy_from(&qp.a_in);
    b_in.rows_mut(0, mi).copy_from(&qp.b_in);
    for i in 0..mi {
        a_in[(i, n + i)] = 1.0;
        a_in[(mi + i, n + i)] = 1.0;
    }
    for j in 0..2 * me {
        a_in[(2 * mi + j, n + mi + j)] = 1.0;
    }
    let sol = qp::solve(&QpProblem {
        h,
        g,
        a_eq,
        b_eq: qp.b_eq.clone(),
        a_in,
        b_in,
    })
    .ok()?;
    Some(Step {
        d: sol.d.rows(0, n).into_owned(),
        u_eq: sol.u_eq,
        u_in: sol.u_in.rows(0, mi).into_owned(),
    })
}

/// Runs SQP from `x0`. Never panics on non-convergence: the best iterate
/// seen is returned with `converged = false` and a reason.
pub fn solve(nlp: &Nlp, x0: &DVector<f64>, opts: &SqpOptions) -> SqpResult {
    let mut x = x0.clone();
    let mut lambda = DVector::zeros(nlp.eq.output_dim());
    let mut mu = DVector::zeros(nlp.ineq.output_dim());
    let mut nu = 1.0f64;
    let mut best: Option<(f64, SqpResult)> = None;
    let mut failure = None;
    let mut iterations = 0;

    let ws_tol = opts.feasibility.max(1e-6);
    let mut last_step = 0.0;
    for it in 0..opts.max_iter {
        iterations = it;
        let e = nlp.eval(&x);
        if !e.f.is_finite() || e.grad.iter().any(|v| !v.is_finite()) {
            failure = Some("non-finite evaluation".to_string());
            break;
        }
        let w = nlp.lagrangian_hessian(&x, &lambda, &mu);
        let mut rows: Vec<DVector<f64>> = (0..e.je.nrows()).map(|i| e.je.row(i).transpose()).collect();
        for i in 0..e.ci.len() {
            let a = e.ji.row(i);
            let reachable = mu[i] > 0.0 && e.ci[i] <= a.norm() * last_step;
            if e.ci[i] <= ws_tol || reachable {
                rows.push(a.transpose());
            }
        }
        let a_w = linalg::stack_rows(&rows, x.len());
        let b = convexify(&w, &a_w);
        let g = &e.grad;

        let Some(step) = solve_subproblem(&b, g, &e, &e.ce, &e.ci, 10.0 * nu + 1.0) else {
            failure = Some("quadratic subproblem failed".to_string());
            break;
        };

        let k = kkt_measures(&e, &step.u_eq, &step.u_in);
        let score = (k.residual / opts.stationarity)
            .max(k.violation / opts.feasibility)
            .max(k.complementarity / opts.stationarity);
        let candidate = SqpResult {
            x: x.clone(),
            lambda: step.u_eq.clone(),
            mu: step.u_in.clone(),
            kkt_residual: k.residual,
            max_violation: k.violation,
            complementarity: k.complementarity,
            iterations: it,
            converged: score <= 1.0,
            failure: None,
        };
        if score <= 1.0 {
            return candidate;
        }
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, candidate));
        }

        let d = &step.d;
        let umax = step.u_eq.amax().max(step.u_in.amax());
        nu = nu.max(1.1 * umax + 1e-8);
        let (viol, _) = violation_of(&e.ce, &e.ci);
        let dbd = d.dot(&(&b * d));
        let gd = e.grad.dot(d);
        if viol > 0.0 && gd - nu * viol > -0.5 * dbd {
            nu = nu.max((gd + 0.5 * dbd) / (0.9 * viol));
        }
        let slope = gd - nu * viol;
        let merit = |y: &DVector<f64>| -> f64 {
            let fy = nlp.objective.value(y)[0];
            let v = nlp.violation(y).0;
            let m = fy + nu * v;
            if m.is_finite() { m } else { f64::INFINITY }
        };
        let phi0 = e.f + nu * viol;
        let slack = 10.0 * f64::EPSILON * phi0.abs().max(1.0);
        let armijo = |phi: f64, alpha: f64| phi <= phi0 + 1e-4 * alpha * slope.min(0.0) + slack;

        let full = &x + d;
        let mut next = None;
        if armijo(merit(&full), 1.0) {
            next = Some(full.clone());
        } else {
            // second-order correction on the constraint curvature
            let ce_soc = nlp.eq.value(&full) - &e.je * d;
            let ci_soc = nlp.ineq.value(&full) - &e.ji * d;
            if let Some(soc) = solve_subproblem(&b, g, &e, &ce_soc, &ci_soc, 10.0 * nu + 1.0) {
                let y = &x + &soc.d;
                if armijo(merit(&y), 1.0) {
                    next = Some(y);
                }
            }
        }
        if next.is_none() {
            let mut alpha = 0.5;
            while alpha > 1e-12 {
                let y = &x + d * alpha;
                if armijo(merit(&y), alpha) {
                    next = Some(y);
                    break;
                }
                alpha *= 0.5;
            }
        }
        match next {
            Some(y) => {
                last_step = (&y - &x).norm();
                x = y;
            }
            None => {
                failure = Some("line search failed".to_string());
                break;
            }
        }
        lambda = step.u_eq;
        mu = step.u_in;
        iterations = it + 1;
    }
    let mut out = match best {
        Some((_, r)) => r,
        None => {
            let e = nlp.eval(&x);
            let k = kkt_measures(&e, &lambda, &mu);
            SqpResult {
                x,
                lambda,
                mu,
                kkt_residual: k.residual,
                max_violation: k.violation,
                complementarity: k.complementarity,
                iterations,
                converged: false,
                failure: None,
            }
        }
    };
    out.iterations = iterations;
    out.converged = false;
    out.failure = Some(failure.unwrap_or_else(|| format!("iteration cap {} reached", opts.max_iter)));
    out
}
