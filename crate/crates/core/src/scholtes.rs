//! Scholtes-type regularization: `F1·F2 = 0` is relaxed to
//! `-t <= F1·F2 <= t`, KKT points of the smooth problem are tracked as
//! `t -> 0`, and T-multipliers are recovered from the limit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{active_sets, ActivePattern, MpocProblem, SmoothMap, Tolerances};
use crate::sqp::{self, Nlp, SqpOptions};
use crate::stationarity::{active_gradients, certify_with_pattern, solve_multipliers, MultiplierSet, StationarityCertificate};

/// The smooth problem `MPOC_t`. Inequalities are laid out as
/// `[g; F2; t - F1·F2; F1·F2 + t]`.
#[derive(Clone, Debug)]
pub struct RegularizedProblem {
    base: MpocProblem,
    t: f64,
    nlp: Nlp,
}

impl RegularizedProblem {
    pub fn base(&self) -> &MpocProblem {
        &self.base
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn equalities(&self) -> &SmoothMap {
        &self.nlp.eq
    }

    pub fn inequalities(&self) -> &SmoothMap {
        &self.nlp.ineq
    }

    /// Max violation of the regularized constraints at `x`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let e = self.nlp.eq.value(x).amax();
        let i = self.nlp.ineq.value(x).iter().fold(0.0f64, |m, &c| m.max(-c));
        e.max(i)
    }
}

/// Value, gradient and Hessian of the products `F1_m·F2_m`.
fn product_map(f1: &SmoothMap, f2: &SmoothMap) -> SmoothMap {
    let (a, b) = (f1.clone(), f2.clone());
    let (ja, jb) = (f1.clone(), f2.clone());
    let (ha, hb) = (f1.clone(), f2.clone());
    SmoothMap::new(
        f1.input_dim(),
        f1.output_dim(),
        move |x| a.value(x).component_mul(&b.value(x)),
        move |x| {
            let (v1, v2) = (ja.value(x), jb.value(x));
            let (d1, d2) = (ja.jacobian(x), jb.jacobian(x));
            let mut j = DMatrix::zeros(v1.len(), x.len());
            for m in 0..v1.len() {
                j.row_mut(m).copy_from(&(d1.row(m) * v2[m] + d2.row(m) * v1[m]));
            }
            j
        },
        move |x, m| {
            let (v1, v2) = (ha.value(x), hb.value(x));
            let (g1, g2) = (ha.gradient(x, m), hb.gradient(x, m));
            let cross = &g1 * g2.transpose();
            ha.hessian(x, m) * v2[m] + hb.hessian(x, m) * v1[m] + &cross + cross.transpose()
        },
    )
}

/// Stacks maps sharing an input dimension, each scaled by a sign and shifted
/// by a constant.
fn stack(n: usize, parts: Vec<(SmoothMap, f64, f64)>) -> SmoothMap {
    let dims: Vec<usize> = parts.iter().map(|(m, _, _)| m.output_dim()).collect();
    let total = dims.iter().sum();
    let (pv, pj, ph) = (parts.clone(), parts.clone(), parts);
    let locate = move |c: usize, dims: &[usize]| {
        let mut c = c;
        for (k, &d) in dims.iter().enumerate() {
            if c < d {
                return (k, c);
            }
            c -= d;
        }
        unreachable!("component out of range")
    };
    SmoothMap::new(
        n,
        total,
        move |x| {
            let vals: Vec<f64> = pv
                .iter()
                .flat_map(|(m, sign, shift)| m.value(x).iter().map(|v| sign * v + shift).collect::<Vec<_>>())
                .collect();
            DVector::from_vec(vals)
        },
        move |x| {
            let mut j = DMatrix::zeros(total, x.len());
            let mut r = 0;
            for (m, sign, _) in &pj {
                let d = m.output_dim();
                if d > 0 {
                    j.view_mut((r, 0), (d, x.len())).copy_from(&(m.jacobian(x) * *sign));
                }
                r += d;
            }
            j
        },
        move |x, c| {
            let (k, local) = locate(c, &dims);
            let (m, sign, _) = &ph[k];
            m.hessian(x, local) * *sign
        },
    )
}

/// Assembles `MPOC_t`.
pub fn build_regularized(problem: &MpocProblem, t: f64) -> Result<RegularizedProblem> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("regularization parameter must be positive, got {t}")));
    }
    let n = problem.n();
    let prod = product_map(problem.f1(), problem.f2());
    let ineq = stack(
        n,
        vec![
            (problem.g().clone(), 1.0, 0.0),
            (problem.f2().clone(), 1.0, 0.0),
            (prod.clone(), -1.0, t),
            (prod, 1.0, t),
        ],
    );
    Ok(RegularizedProblem {
        base: problem.clone(),
        t,
        nlp: Nlp {
            objective: problem.f().clone(),
            eq: problem.h().clone(),
            ineq,
        },
    })
}

/// A KKT point of `MPOC_t` with multipliers split by constraint block.
#[derive(Clone, Debug, Serialize)]
pub struct InnerKktPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// For `F2 >= 0`.
    pub eta: Vec<f64>,
    /// For `F1·F2 >= -t`.
    pub eta_ge: Vec<f64>,
    /// For `F1·F2 <= t`.
    pub eta_le: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

impl InnerKktPoint {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

fn check_start(problem: &MpocProblem, x0: &DVector<f64>) -> Result<()> {
    problem.check_dim(x0, "start point")?;
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("start point coordinate {i} is not finite")));
    }
    Ok(())
}

/// Finds a KKT point of `MPOC_t` near `x0` by SQP. Non-convergence is not an
/// error: the best iterate is returned with `converged = false`.
pub fn inner_kkt_solve(reg: &RegularizedProblem, x0: &DVector<f64>, tol: &Tolerances) -> Result<InnerKktPoint> {
    inner_kkt_solve_capped(reg, x0, tol, SqpOptions::default().max_iter)
}

pub fn inner_kkt_solve_capped(reg: &RegularizedProblem, x0: &DVector<f64>, tol: &Tolerances, max_iter: usize) -> Result<InnerKktPoint> {
    tol.validate()?;
    check_start(&reg.base, x0)?;
    let opts = SqpOptions {
        max_iter,
        stationarity: tol.stationarity_residual,
        feasibility: tol.feasibility,
    };
    let r = sqp::solve(&reg.nlp, x0, &opts);
    let j = reg.base.num_ineq();
    let k = reg.base.num_pairs();
    let block = |start: usize| r.mu.rows(start, k).iter().copied().collect::<Vec<_>>();
    Ok(InnerKktPoint {
        t: reg.t,
        x: r.x.iter().copied().collect(),
        lambda: r.lambda.iter().copied().collect(),
        mu: r.mu.rows(0, j).iter().copied().collect(),
        eta: block(j),
        eta_le: block(j + k),
        eta_ge: block(j + 2 * k),
        kkt_residual: r.kkt_residual,
        iterations: r.iterations,
        converged: r.converged,
        failure: r.failure,
    })
}

/// T-multipliers built from the regularized multipliers of `iterate`,
/// attributed to the pattern of the limit point.
pub fn recover_t_multipliers(
    problem: &MpocProblem,
    iterate: &InnerKktPoint,
    pattern: &ActivePattern,
    tol: &Tolerances,
) -> Result<MultiplierSet> {
    let x = iterate.point();
    problem.check_dim(&x, "iterate")?;
    let f1 = problem.f1().value(&x);
    let f2 = problem.f2().value(&x);
    let diff = |m: usize| iterate.eta_ge[m] - iterate.eta_le[m];
    let on_f1 = |m: usize| diff(m) * f2[m];
    let on_f2 = |m: usize| iterate.eta[m] + diff(m) * f1[m];
    let mut set = MultiplierSet {
        lambda: iterate.lambda.clone(),
        mu: pattern.j0.iter().map(|&j| iterate.mu[j]).collect(),
        sigma1: pattern.a01.iter().map(|&m| on_f1(m)).collect(),
        sigma2: pattern.a10.iter().map(|&m| on_f2(m)).collect(),
        rho1: pattern.a00.iter().map(|&m| on_f1(m)).collect(),
        rho2: pattern.a00.iter().map(|&m| on_f2(m)).collect(),
        residual_norm: 0.0,
        unique: false,
    };
    set.residual_norm = set.residual_at(problem, &x, pattern);
    let sv = linalg::row_singular_values(&active_gradients(problem, &x, pattern));
    set.unique = sv.first().is_none_or(|&s| s > tol.eigen_singularity);
    Ok(set)
}

/// Geometric schedule `t_ℓ = t0·shrinkˡ`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Schedule {
    pub t0: f64,
    pub shrink: f64,
    pub t_min: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            t0: 1.0,
            shrink: 0.1,
            t_min: 1e-10,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t0 > 0.0 && self.t_min > 0.0 && self.shrink > 0.0 && self.shrink < 1.0 && self.t0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "schedule needs t0 > 0, t_min > 0 and 0 < shrink < 1, got {self:?}"
            )))
        }
    }

    pub fn t(&self, step: usize) -> f64 {
        self.t0 * self.shrink.powi(step as i32)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureStage {
    pub t: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularizationTrace {
    pub schedule: Vec<f64>,
    pub iterates: Vec<InnerKktPoint>,
    pub limit_point: Vec<f64>,
    /// Pattern at the limit, with the activity tolerance widened to the
    /// scale of the last `t`.
    pub limit_pattern: Option<ActivePattern>,
    pub recovered: Option<MultiplierSet>,
    /// Least-squares multipliers at the limit, for comparison.
    pub direct: Option<MultiplierSet>,
    /// Largest componentwise gap between `recovered` and `direct`.
    pub multiplier_gap: Option<f64>,
    pub certificate: Option<StationarityCertificate>,
    pub converged: bool,
    pub failure: Option<FailureStage>,
}

/// Activity tolerance used to read the pattern off the last iterate. On a
/// biactive branch both `F1` and `F2` are of order `√t`.
pub fn limit_activity(t_final: f64, tol: &Tolerances) -> f64 {
    tol.activity.max(10.0 * t_final.sqrt())
}

/// Solves `MPOC_t` along the schedule with warm starts and certifies the
/// limit.
pub fn drive(problem: &MpocProblem, x0: &DVector<f64>, schedule: &Schedule, tol: &Tolerances) -> Result<RegularizationTrace> {
    drive_with(problem, x0, schedule, tol, |_| {})
}

/// As [`drive`], calling `on_iterate` after every inner solve.
pub fn drive_with<F>(
    problem: &MpocProblem,
    x0: &DVector<f64>,
    schedule: &Schedule,
    tol: &Tolerances,
    mut on_iterate: F,
) -> Result<RegularizationTrace>
where
    F: FnMut(&InnerKktPoint),
{
    schedule.validate()?;
    tol.validate()?;
    check_start(problem, x0)?;

    let mut ts = Vec::new();
    let mut iterates: Vec<InnerKktPoint> = Vec::new();
    let mut failure = None;
    let mut x = x0.clone();
    let stop_band = 10.0 * schedule.t_min * (1.0 + 1e-9);
    for step in 0.. {
        let t = schedule.t(step);
        let reg = build_regularized(problem, t)?;
        let pt = inner_kkt_solve(&reg, &x, tol)?;
        on_iterate(&pt);
        let xn = pt.point();
        let moved = (&xn - &x).norm();
        let ok = pt.converged;
        let reason = pt.failure.clone();
        ts.push(t);
        iterates.push(pt);
        if !ok {
            failure = Some(FailureStage {
                t,
                reason: reason.unwrap_or_default(),
            });
            break;
        }
        let settled = step > 0 && moved <= tol.stationarity_residual && t <= stop_band;
        x = xn;
        if settled || t < schedule.t_min || t == 0.0 {
            break;
        }
    }

    let last = iterates.last().expect("at least one inner solve");
    let limit = last.point();
    let mut trace = RegularizationTrace {
        schedule: ts,
        iterates: Vec::new(),
        limit_point: last.x.clone(),
        limit_pattern: None,
        recovered: None,
        direct: None,
        multiplier_gap: None,
        certificate: None,
        converged: false,
        failure,
    };
    let wide = Tolerances {
        activity: limit_activity(last.t, tol),
        ..*tol
    };
    if let Ok(pattern) = active_sets(problem, &limit, &wide) {
        let recovered = recover_t_multipliers(problem, last, &pattern, tol)?;
        let direct = solve_multipliers(problem, &limit, &pattern)?;
        let gap = recovered
            .stacked()
            .iter()
            .zip(direct.stacked().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let cert = certify_with_pattern(problem, &limit, pattern.clone(), tol)?;
        trace.converged = trace.failure.is_none() && cert.is_t_stationary;
        trace.limit_pattern = Some(pattern);
        trace.recovered = Some(recovered);
        trace.direct = Some(direct);
        trace.multiplier_gap = Some(gap);
        trace.certificate = Some(cert);
    }
    trace.iterates = iterates;
    Ok(trace)
}

/// Independent drives from several starts, in parallel. Results keep the
/// order of `starts`.
pub fn drive_multistart(
    problem: &MpocProblem,
    starts: &[DVector<f64>],
    schedule: &Schedule,
    tol: &Tolerances,
) -> Vec<Result<RegularizationTrace>> {
    starts.par_iter().map(|x0| drive(problem, x0, schedule, tol)).collect()
}

/// `count` points drawn uniformly from `[lo, hi]ⁿ`.
pub fn random_starts(n: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi)))
        .collect()
}
