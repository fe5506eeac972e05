//! Dense strictly convex quadratic programs by the dual active-set method of
//! Goldfarb and Idnani.
//!
//! ```text
//! min ½ dᵀHd + gᵀd   s.t.   A_eq d = b_eq,   A_in d >= b_in
//! ```
//!
//! Multipliers follow `Hd + g = A_eqᵀ u_eq + A_inᵀ u_in` with `u_in >= 0`.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub d: DVector<f64>,
    pub u_eq: DVector<f64>,
    pub u_in: DVector<f64>,
    /// Inequality rows in the final active set.
    pub active: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpError {
    /// `H` is not positive definite.
    NotConvex,
    Infeasible,
    /// Iteration cap hit; only seen with near-degenerate data.
    Stalled,
}

#[derive(Clone, Copy)]
enum Row {
    Eq(usize, f64),
    In(usize),
}

struct Active {
    row: Row,
    normal: DVector<f64>,
    u: f64,
}

/// Solves the QP, or reports why it cannot be solved.
pub fn solve(qp: &QpProblem) -> Result<QpSolution, QpError> {
    let n = qp.g.len();
    let chol = Cholesky::new(qp.h.clone()).ok_or(QpError::NotConvex)?;
    let hinv = chol.inverse();
    let mut d = -(&hinv * &qp.g);
    let mut active: Vec<Active> = Vec::new();

    for i in 0..qp.a_eq.nrows() {
        let a = qp.a_eq.row(i).transpose();
        let s = a.dot(&d) - qp.b_eq[i];
        let sign = if s > 0.0 { -1.0 } else { 1.0 };
        add_constraint(&hinv, &mut d, &mut active, Row::Eq(i, sign), a * sign, qp.b_eq[i] * sign)?;
    }

    let m = qp.a_in.nrows();
    let cap = 10 * (m + n) + 100;
    for _ in 0..cap {
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if active.iter().any(|c| matches!(c.row, Row::In(j) if j == i)) {
                continue;
            }
            let a = qp.a_in.row(i);
            let s = (a * &d)[0] - qp.b_in[i];
            let scale = 1.0 + a.norm() * d.norm() + qp.b_in[i].abs();
            if s < -1e-12 * scale && worst.is_none_or(|(_, w)| s / scale < w) {
                worst = Some((i, s / scale));
            }
        }
        let Some((p, _)) = worst else {
            return Ok(finish(qp, d, &active));
        };
        let a = qp.a_in.row(p).transpose();
        add_constraint(&hinv, &mut d, &mut active, Row::In(p), a, qp.b_in[p])?;
    }
    Err(QpError::Stalled)
}

fn finish(qp: &QpProblem, d: DVector<f64>, active: &[Active]) -> QpSolution {
    let mut u_eq = DVector::zeros(qp.a_eq.nrows());
    let mut u_in = DVector::zeros(qp.a_in.nrows());
    let mut rows = Vec::new();
    for c in active {
        match c.row {
            Row::Eq(i, sign) => u_eq[i] = c.u * sign,
            Row::In(i) => {
                u_in[i] = c.u.max(0.0);
                rows.push(i);
            }
        }
    }
    rows.sort_unstable();
    QpSolution { d, u_eq, u_in, active: rows }
}

/// Brings constraint `nᵀd >= b` into the active set, dropping inequality
/// rows whose multipliers would turn negative on the way.
fn add_constraint(
    hinv: &DMatrix<f64>,
    d: &mut DVector<f64>,
    active: &mut Vec<Active>,
    row: Row,
    normal: DVector<f64>,
    b: f64,
) -> Result<(), QpError> {
    let mut u_p = 0.0;
    let hn = hinv * &normal;
    let nhn = normal.dot(&hn);
    for _ in 0..=active.len() + 1 {
        let s = normal.dot(d) - b;
        let (z, r) = directions(hinv, active, &hn);
        let zn = z.dot(&normal);
        let t2 = if zn > 1e-12 * nhn { (-s / zn).max(0.0) } else { f64::INFINITY };
        let mut t1 = f64::INFINITY;
        let mut drop = None;
        for (k, c) in active.iter().enumerate() {
            if matches!(c.row, Row::In(_)) && r[k] > 0.0 {
                let ratio = c.u / r[k];
                if ratio < t1 {
                    t1 = ratio;
                    drop = Some(k);
                }
            }
        }
        let t = t1.min(t2);
        if !t.is_finite() {
            // nothing to drop and the new normal is dependent
            return if s.abs() <= 1e-10 * (1.0 + b.abs()) {
                Ok(())
            } else {
                Err(QpError::Infeasible)
            };
        }
        if t2.is_finite() {
            d.axpy(t, &z, 1.0);
        }
        for (k, c) in active.iter_mut().enumerate() {
            c.u -= t * r[k];
        }
        u_p += t;
        if t2 <= t1 {
            active.push(Active { row, normal, u: u_p });
            return Ok(());
        }
        active.remove(drop.expect("finite t1 has an index"));
    }
    Err(QpError::Stalled)
}

/// Primal step `z` and dual step `r` for adding `normal` to the active set.
fn directions(hinv: &DMatrix<f64>, active: &[Active], hn: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if active.is_empty() {
        return (hn.clone(), DVector::zeros(0));
    }
    let k = active.len();
    let nmat = DMatrix::from_columns(&active.iter().map(|c| c.normal.clone()).collect::<Vec<_>>());
    let hn_mat = hinv * &nmat;
    let gram = nmat.transpose() * &hn_mat;
    let rhs = nmat.transpose() * hn;
    let r = match Cholesky::new(gram.clone()) {
        Some(c) => c.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
    };
    let z = hn - hn_mat * &r;
    (z, r)
}
