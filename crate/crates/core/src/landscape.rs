//! Connected components of lower level sets `{x ∈ M : f(x) <= a}` for
//! two-dimensional problems, counted on a grid.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::MpocProblem;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// Points per axis.
    pub resolution: usize,
    /// Membership thickness; half a cell diagonal when `None`.
    pub thickness: Option<f64>,
}

impl GridSpec {
    pub fn new(lower: [f64; 2], upper: [f64; 2], resolution: usize) -> Result<Self> {
        let g = Self {
            lower,
            upper,
            resolution,
            thickness: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn square(a: f64, b: f64) -> Result<Self> {
        Self::new([a, a], [b, b], 801)
    }

    pub fn with_thickness(mut self, delta: f64) -> Result<Self> {
        self.thickness = Some(delta);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::InvalidParameter(format!("grid resolution must be at least 3, got {}", self.resolution)));
        }
        for k in 0..2 {
            if !(self.lower[k].is_finite() && self.upper[k].is_finite() && self.lower[k] < self.upper[k]) {
                return Err(Error::InvalidParameter(format!(
                    "grid bounds must be finite and ordered, got [{}, {}] on axis {}",
                    self.lower[k], self.upper[k], k
                )));
            }
        }
        if let Some(d) = self.thickness {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("membership thickness must be positive, got {d}")));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> [f64; 2] {
        let m = (self.resolution - 1) as f64;
        [(self.upper[0] - self.lower[0]) / m, (self.upper[1] - self.lower[1]) / m]
    }

    pub fn delta(&self) -> f64 {
        self.thickness.unwrap_or_else(|| {
            let [dx, dy] = self.spacing();
            0.5 * dx.hypot(dy)
        })
    }

    /// Grid point `(i, j)` with `i` along the first axis.
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let [dx, dy] = self.spacing();
        [self.lower[0] + i as f64 * dx, self.lower[1] + j as f64 * dy]
    }
}

fn require_planar(problem: &MpocProblem) -> Result<()> {
    if problem.n() != 2 {
        return Err(Error::Dimension {
            context: "landscape problem",
            expected: 2,
            got: problem.n(),
        });
    }
    Ok(())
}

/// Thickened membership: `|h| <= δ`, `g >= -δ`, and for each pair either
/// `|F1| <= δ, F2 >= -δ` or `|F2| <= δ`.
fn member(problem: &MpocProblem, x: &DVector<f64>, delta: f64) -> bool {
    let h = problem.h().value(x);
    let g = problem.g().value(x);
    let f1 = problem.f1().value(x);
    let f2 = problem.f2().value(x);
    h.iter().all(|v| v.abs() <= delta)
        && g.iter().all(|&v| v >= -delta)
        && f1
            .iter()
            .zip(f2.iter())
            .all(|(&a, &b)| (a.abs() <= delta && b >= -delta) || b.abs() <= delta)
}

/// Row-major over `j`, index `j * res + i`.
pub fn grid_feasible_mask(problem: &MpocProblem, grid: &GridSpec) -> Result<Vec<bool>> {
    require_planar(problem)?;
    grid.validate()?;
    let res = grid.resolution;
    let delta = grid.delta();
    Ok((0..res * res)
        .into_par_iter()
        .map(|k| {
            let [a, b] = grid.point(k % res, k / res);
            member(problem, &DVector::from_column_slice(&[a, b]), delta)
        })
        .collect())
}

/// Objective on member cells, `None` elsewhere.
fn sampled_objective(problem: &MpocProblem, grid: &GridSpec) -> Result<Vec<Option<f64>>> {
    let mask = grid_feasible_mask(problem, grid)?;
    let res = grid.resolution;
    Ok(mask
        .par_iter()
        .enumerate()
        .map(|(k, &m)| {
            if !m {
                return None;
            }
            let [a, b] = grid.point(k % res, k / res);
            let f = problem.objective(&DVector::from_column_slice(&[a, b]));
            f.is_finite().then_some(f)
        })
        .collect())
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    /// True when two distinct components were merged.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

fn neighbours(k: usize, res: usize) -> impl Iterator<Item = usize> {
    let (i, j) = ((k % res) as isize, (k / res) as isize);
    let r = res as isize;
    (-1..=1)
        .flat_map(move |dj| (-1..=1).map(move |di| (i + di, j + dj)))
        .filter(move |&(a, b)| (a, b) != (i, j) && a >= 0 && b >= 0 && a < r && b < r)
        .map(move |(a, b)| (b * r + a) as usize)
}

/// Component count of the sampled set restricted to `f <= a`.
pub fn betti0_lower_level(problem: &MpocProblem, grid: &GridSpec, a: f64) -> Result<usize> {
    let values = sampled_objective(problem, grid)?;
    let inside: Vec<bool> = values.iter().map(|v| v.is_some_and(|f| f <= a)).collect();
    let res = grid.resolution;
    let mut uf = UnionFind::new(inside.len());
    let mut count = 0usize;
    for k in 0..inside.len() {
        if !inside[k] {
            continue;
        }
        count += 1;
        for nb in neighbours(k, res) {
            if nb < k && inside[nb] && uf.union(k, nb) {
                count -= 1;
            }
        }
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSweepReport {
    pub levels: Vec<f64>,
    pub betti0_per_level: Vec<usize>,
    pub change_levels: Vec<f64>,
    pub stationary_values: Vec<f64>,
}

impl LevelSweepReport {
    /// `(count before, count after)` at each change level.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        (1..self.levels.len())
            .filter(|&k| self.betti0_per_level[k] != self.betti0_per_level[k - 1])
            .map(|k| (self.betti0_per_level[k - 1], self.betti0_per_level[k]))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,betti0\n");
        for (a, b) in self.levels.iter().zip(&self.betti0_per_level) {
            let _ = writeln!(out, "{a},{b}");
        }
        out
    }

    /// Step plot of the component count against the level, with dashed
    /// markers at the stationary values.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 320.0, 40.0);
        let lo = self.levels.first().copied().unwrap_or(0.0);
        let hi = self.levels.last().copied().unwrap_or(1.0).max(lo + 1e-12);
        let top = self.betti0_per_level.iter().copied().max().unwrap_or(0).max(1) as f64;
        let sx = |a: f64| pad + (a - lo) / (hi - lo) * (w - 2.0 * pad);
        let sy = |b: f64| h - pad - b / top * (h - 2.0 * pad);
        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<path d="M{pad},{y0} H{x1} M{pad},{y0} V{pad}" stroke="black" fill="none"/>"#,
            y0 = h - pad,
            x1 = w - pad
        );
        for &v in &self.stationary_values {
            if v >= lo && v <= hi {
                let x = sx(v);
                let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{pad}" x2="{x:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#, h - pad);
            }
        }
        let mut d = String::new();
        for (k, (&a, &b)) in self.levels.iter().zip(&self.betti0_per_level).enumerate() {
            let (x, y) = (sx(a), sy(b as f64));
            if k == 0 {
                let _ = write!(d, "M{x:.2},{y:.2}");
            } else {
                let _ = write!(d, " H{x:.2} V{y:.2}");
            }
        }
        let _ = writeln!(out, r#"<path d="{d}" stroke="steelblue" stroke-width="2" fill="none"/>"#);
        let _ = writeln!(out, r#"<text x="{pad}" y="{:.0}" font-size="12">level</text>"#, h - 10.0);
        let _ = writeln!(out, r#"<text x="5" y="{:.0}" font-size="12">{top}</text>"#, sy(top) + 4.0);
        out.push_str("</svg>\n");
        out
    }
}

/// `lo, lo + step, ...` up to `hi` inclusive, with rounding slack.
pub fn level_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidParameter(format!("bad level range {lo}:{hi}:{step}")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| lo + k as f64 * step).collect())
}

/// Component counts at every level in one pass: cells enter in order of
/// their objective value and are merged with already present neighbours.
pub fn sweep_levels(problem: &MpocProblem, grid: &GridSpec, levels: &[f64], stationary_values: &[f64]) -> Result<LevelSweepReport> {
    if levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("levels must be strictly increasing".into()));
    }
    let values = sampled_objective(problem, grid)?;
    let res = grid.resolution;
    let mut order: Vec<(f64, usize)> = values.iter().enumerate().filter_map(|(k, v)| v.map(|f| (f, k))).collect();
    order.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut present = vec![false; values.len()];
    let mut uf = UnionFind::new(values.len());
    let mut count = 0usize;
    let mut next = 0;
    let mut betti = Vec::with_capacity(levels.len());
    for &a in levels {
        while next < order.len() && order[next].0 <= a {
            let k = order[next].1;
            present[k] = true;
            count += 1;
            for nb in neighbours(k, res) {
                if present[nb] && uf.union(k, nb) {
                    count -= 1;
                }
            }
            next += 1;
        }
        betti.push(count);
    }
    let change_levels = (1..levels.len()).filter(|&k| betti[k] != betti[k - 1]).map(|k| levels[k]).collect();
    Ok(LevelSweepReport {
        levels: levels.to_vec(),
        betti0_per_level: betti,
        change_levels,
        stationary_values: stationary_values.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::problem::SmoothMap;
    use nalgebra::DMatrix;

    fn coarse() -> GridSpec {
        GridSpec::new([-3.0, -3.0], [3.0, 3.0], 201).unwrap()
    }

    #[test]
    fn grid_spec_is_validated() {
        assert!(GridSpec::new([0.0, 0.0], [1.0, 1.0], 2).is_err());
        assert!(GridSpec::new([1.0, 0.0], [0.0, 1.0], 5).is_err());
        assert!(GridSpec::new([0.0, 0.0], [1.0, 1.0], 5).unwrap().with_thickness(0.0).is_err());
        let g = GridSpec::new([0.0, 0.0], [2.0, 2.0], 3).unwrap();
        assert!((g.delta() - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn saddle_mask_is_the_branch_set() {
        let g = GridSpec::new([-2.0, -2.0], [2.0, 2.0], 81).unwrap();
        let mask = grid_feasible_mask(&catalog::saddle(), &g).unwrap();
        let delta = g.delta();
        for (k, &m) in mask.iter().enumerate() {
            let [a, b] = g.point(k % 81, k / 81);
            let expected = b.abs() <= delta || (a.abs() <= delta && b >= -delta);
            assert_eq!(m, expected, "({a}, {b})");
        }
        assert_eq!(mask, grid_feasible_mask(&catalog::instability(), &g).unwrap());
    }

    #[test]
    fn empty_feasible_set_gives_empty_mask() {
        let p = MpocProblem::new(
            SmoothMap::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), 0.0),
            SmoothMap::empty(2),
            SmoothMap::affine(DMatrix::zeros(1, 2), DVector::from_element(1, -1.0)),
            SmoothMap::empty(2),
            SmoothMap::empty(2),
        )
        .unwrap();
        assert!(!grid_feasible_mask(&p, &coarse()).unwrap().iter().any(|&m| m));
        assert_eq!(betti0_lower_level(&p, &coarse(), 10.0).unwrap(), 0);
    }

    #[test]
    fn non_planar_problem_is_rejected() {
        let p = crate::scno::build_relaxation(
            &crate::scno::ScnoProblem::quadratic(DMatrix::identity(2, 2), DVector::zeros(2), 1).unwrap(),
        )
        .unwrap();
        assert!(matches!(grid_feasible_mask(&p, &coarse()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn saddle_level_counts() {
        let p = catalog::saddle();
        assert_eq!(betti0_lower_level(&p, &coarse(), 0.5).unwrap(), 0);
        assert_eq!(betti0_lower_level(&p, &coarse(), 1.5).unwrap(), 2);
        assert_eq!(betti0_lower_level(&p, &coarse(), 2.5).unwrap(), 1);
    }

    #[test]
    fn sweep_agrees_with_single_levels() {
        let p = catalog::saddle();
        let levels = level_range(0.5, 3.0, 0.1).unwrap();
        let r = sweep_levels(&p, &coarse(), &levels, &[1.0, 1.0, 2.0]).unwrap();
        for (&a, &b) in levels.iter().zip(&r.betti0_per_level).step_by(4) {
            assert_eq!(betti0_lower_level(&p, &coarse(), a).unwrap(), b);
        }
        assert_eq!(r.transitions(), vec![(0, 2), (2, 1)]);
        assert!((r.change_levels[0] - 1.0).abs() <= 0.1 + 1e-9);
        assert!((r.change_levels[1] - 2.0).abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn instability_has_one_change_near_zero() {
        let levels = level_range(0.0, 1.0, 0.05).unwrap();
        let r = sweep_levels(&catalog::instability(), &coarse(), &levels, &[0.0]).unwrap();
        assert_eq!(r.betti0_per_level[0], 1);
        assert!(r.change_levels.is_empty());
        let levels = level_range(-0.5, 1.0, 0.05).unwrap();
        let r = sweep_levels(&catalog::instability(), &coarse(), &levels, &[0.0]).unwrap();
        assert_eq!(r.transitions(), vec![(0, 1)]);
        assert!(r.change_levels[0].abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn constant_objective_changes_only_once() {
        let p = MpocProblem::new(
            SmoothMap::quadratic(DMatrix::zeros(2, 2), DVector::zeros(2), 1.0),
            SmoothMap::empty(2),
            SmoothMap::empty(2),
            SmoothMap::coordinates(2, &[0]),
            SmoothMap::coordinates(2, &[1]),
        )
        .unwrap();
        let r = sweep_levels(&p, &coarse(), &level_range(0.0, 2.0, 0.25).unwrap(), &[]).unwrap();
        assert_eq!(r.transitions(), vec![(0, 1)]);
    }

    #[test]
    fn unsorted_levels_are_rejected() {
        assert!(sweep_levels(&catalog::saddle(), &coarse(), &[1.0, 0.5], &[]).is_err());
    }

    #[test]
    fn resolution_doubling_keeps_change_levels() {
        let p = catalog::saddle();
        let levels = level_range(0.2, 3.0, 0.05).unwrap();
        let a = sweep_levels(&p, &GridSpec::new([-3.0, -3.0], [3.0, 3.0], 101).unwrap(), &levels, &[]).unwrap();
        let b = sweep_levels(&p, &GridSpec::new([-3.0, -3.0], [3.0, 3.0], 201).unwrap(), &levels, &[]).unwrap();
        assert_eq!(a.change_levels.len(), b.change_levels.len());
        for (x, y) in a.change_levels.iter().zip(&b.change_levels) {
            assert!((x - y).abs() <= 0.05 + 1e-9);
        }
    }

    #[test]
    fn csv_and_svg_render() {
        let r = LevelSweepReport {
            levels: vec![0.0, 1.0],
            betti0_per_level: vec![0, 2],
            change_levels: vec![1.0],
            stationary_values: vec![1.0],
        };
        assert_eq!(r.to_csv(), "level,betti0\n0,0\n1,2\n");
        let svg = r.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
