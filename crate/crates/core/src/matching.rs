//! Prediction-to-ground-truth assignment: matching costs and an exact
//! Hungarian solver for rectangular matrices.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_polar, wrap_angle, wrap_to_pi, CartesianPoint};
use crate::query::{Category, PolarBox};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// A predicted box with per-category probabilities indexed by
/// [`Category::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(flatten)]
    pub bbox: PolarBox,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != Category::ALL.len() {
            return Err(Error::Shape(format!(
                "prediction has {} class probabilities, expected {}",
                self.probs.len(),
                Category::ALL.len()
            )));
        }
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invariant("class probabilities must lie in [0, 1]"));
        }
        if self.probs.iter().sum::<f64>() > 1.0 + 1e-6 {
            return Err(Error::invariant("class probabilities must sum to at most 1"));
        }
        let b = &self.bbox;
        if ![b.theta, b.depth, b.z, b.w, b.l, b.h, b.yaw, b.vx, b.vy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("prediction box"));
        }
        if b.w <= 0.0 || b.l <= 0.0 || b.h <= 0.0 {
            return Err(Error::invariant("prediction dims must be > 0"));
        }
        Ok(())
    }

    /// Highest-probability category and its probability; ties go to the
    /// lower category index.
    pub fn top_class(&self) -> (Category, f64) {
        let mut best = (Category::ALL[0], self.probs[0]);
        for c in &Category::ALL[1..] {
            let p = self.probs[c.index()];
            if p > best.1 {
                best = (*c, p);
            }
        }
        best
    }

    pub fn center(&self) -> CartesianPoint {
        let (s, c) = self.bbox.theta.sin_cos();
        CartesianPoint::new(self.bbox.depth * c, self.bbox.depth * s, self.bbox.z)
    }
}

/// A ground-truth object in the ego frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub center: [f64; 3],
    /// `[w, l, h]`
    pub size: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
    pub category: Category,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let all = self.center.iter().chain(&self.size).chain(&self.velocity).chain([&self.yaw]);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ground-truth box"));
        }
        if self.size.iter().any(|d| *d <= 0.0) {
            return Err(Error::invariant("ground-truth dims must be > 0"));
        }
        Ok(())
    }

    pub fn center_point(&self) -> CartesianPoint {
        CartesianPoint::new(self.center[0], self.center[1], self.center[2])
    }

    pub fn to_polar(&self) -> Result<PolarBox> {
        let p = cartesian_to_polar(&self.center_point())?;
        Ok(PolarBox {
            theta: p.theta,
            depth: p.depth,
            z: p.z,
            w: self.size[0],
            l: self.size[1],
            h: self.size[2],
            yaw: self.yaw,
            vx: self.velocity[0],
            vy: self.velocity[1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub class: f64,
    pub bbox: f64,
    pub radian: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            class: 1.0,
            bbox: 0.25,
            radian: 1.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.class, self.bbox, self.radian];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invariant("cost weights must be finite and non-negative"));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::invariant("cost weights must not all be zero"));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        CostWeights {
            class: self.class * k,
            bbox: self.bbox * k,
            radian: self.radian * k,
        }
    }
}

/// How azimuths are mapped to the unit interval before the radian cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadianNormalization {
    #[default]
    FullCircle,
    FieldOfView,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub weights: CostWeights,
    pub max_depth: f64,
    pub z_range: f64,
    pub normalization: RadianNormalization,
    pub fov: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            weights: CostWeights::default(),
            max_depth: 65.0,
            z_range: 8.0,
            normalization: RadianNormalization::FullCircle,
            fov: TAU,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.max_depth > 0.0 && self.z_range > 0.0 && self.fov > 0.0 && self.fov <= TAU) {
            return Err(Error::invariant("cost bounds must be positive and fov in (0, 2π]"));
        }
        Ok(())
    }

    /// Azimuth in radians to the unit interval.
    pub fn normalize_theta(&self, theta: f64) -> Result<f64> {
        let period = match self.normalization {
            RadianNormalization::FullCircle => TAU,
            RadianNormalization::FieldOfView => self.fov,
        };
        let t = wrap_angle(theta) / period;
        if !(0.0..1.0).contains(&t) {
            return Err(Error::invariant(format!("azimuth {theta} lies outside the field of view")));
        }
        Ok(t)
    }
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::invariant(format!("normalized radian {t} outside [0, 1)")));
    }
    Ok(())
}

/// `|((|a − b| + 0.5) mod 1) − 0.5|`
pub fn radian_cost(a: f64, b: f64) -> Result<f64> {
    check_unit(a)?;
    check_unit(b)?;
    Ok((((a - b).abs() + 0.5).rem_euclid(1.0) - 0.5).abs())
}

/// `min(|a − b|, 1 − |a − b|)`
pub fn circular_distance(a: f64, b: f64) -> Result<f64> {
    check_unit(a)?;
    check_unit(b)?;
    let d = (a - b).abs();
    Ok(d.min(1.0 - d))
}

/// Focal positive-term cost on the target-class probability.
pub fn classification_cost(probs: &[f64], target: Category) -> f64 {
    let p = probs.get(target.index()).copied().unwrap_or(0.0);
    -FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * p.max(1e-12).ln()
}

/// Mean L1 over `(d/D, z/z_range, ln w, ln l, ln h, wrapped yaw/π)`.
pub fn box_cost(a: &PolarBox, b: &PolarBox, params: &CostParams) -> f64 {
    let terms = [
        (a.depth - b.depth).abs() / params.max_depth,
        (a.z - b.z).abs() / params.z_range,
        (a.w.ln() - b.w.ln()).abs(),
        (a.l.ln() - b.l.ln()).abs(),
        (a.h.ln() - b.h.ln()).abs(),
        wrap_to_pi(a.yaw - b.yaw).abs() / PI,
    ];
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Dense row-major cost matrix, rows = predictions, cols = ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("cost matrix rows differ in length".into()));
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(|r| r.to_vec()).collect()
    }
}

pub fn cost_matrix(preds: &[Prediction], gts: &[GroundTruth], params: &CostParams) -> Result<CostMatrix> {
    if preds.is_empty() && gts.is_empty() {
        return Err(Error::invariant("cost matrix needs at least one prediction or ground truth"));
    }
    params.validate()?;
    let gt_boxes: Vec<PolarBox> = gts
        .iter()
        .map(|g| {
            g.validate()?;
            g.to_polar()
        })
        .collect::<Result<_>>()?;
    let gt_theta: Vec<f64> = gt_boxes.iter().map(|b| params.normalize_theta(b.theta)).collect::<Result<_>>()?;
    let w = params.weights;
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    for p in preds {
        p.validate()?;
        let pt = params.normalize_theta(p.bbox.theta)?;
        for ((g, gb), gth) in gts.iter().zip(&gt_boxes).zip(&gt_theta) {
            let c = w.class * classification_cost(&p.probs, g.category)
                + w.bbox * box_cost(&p.bbox, gb, params)
                + w.radian * radian_cost(pt, *gth)?;
            data.push(c);
        }
    }
    CostMatrix::new(preds.len(), gts.len(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    fn from_pred_map(m: &CostMatrix, pred_to_gt: &[Option<usize>]) -> Self {
        let mut pairs = Vec::new();
        let mut unmatched_pred = Vec::new();
        let mut gt_used = vec![false; m.cols];
        let mut total = 0.0;
        for (i, g) in pred_to_gt.iter().enumerate() {
            match g {
                Some(j) => {
                    pairs.push((i, *j));
                    gt_used[*j] = true;
                    total += m.get(i, *j);
                }
                None => unmatched_pred.push(i),
            }
        }
        let unmatched_gt = (0..m.cols).filter(|j| !gt_used[*j]).collect();
        Assignment {
            pairs,
            unmatched_pred,
            unmatched_gt,
            total_cost: total,
        }
    }
}

/// Solution of a rows ≤ cols problem with its dual potentials.
struct Solved {
    row_to_col: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Shortest augmenting path Hungarian method with potentials. Requires
/// `cost.len() ≤ cost[0].len()`; every row is matched.
fn solve_rows_le_cols(cost: &[Vec<f64>]) -> Solved {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    Solved {
        row_to_col,
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
    }
}

/// Pred-to-gt map plus the row and column duals when the solve succeeded.
type SubsetSolution = (Vec<Option<usize>>, Option<(Vec<f64>, Vec<f64>)>);

/// Optimal pred→gt map restricted to the given row and column subsets,
/// indexed locally.
fn solve_subset(m: &CostMatrix, preds: &[usize], gts: &[usize]) -> SubsetSolution {
    let mut out = vec![None; preds.len()];
    if preds.is_empty() || gts.is_empty() {
        return (out, None);
    }
    if preds.len() <= gts.len() {
        let cost: Vec<Vec<f64>> = preds.iter().map(|&i| gts.iter().map(|&j| m.get(i, j)).collect()).collect();
        let s = solve_rows_le_cols(&cost);
        for (r, c) in s.row_to_col.iter().enumerate() {
            out[r] = Some(*c);
        }
        (out, Some((s.u, s.v)))
    } else {
        let cost: Vec<Vec<f64>> = gts.iter().map(|&j| preds.iter().map(|&i| m.get(i, j)).collect()).collect();
        let s = solve_rows_le_cols(&cost);
        for (g, p) in s.row_to_col.iter().enumerate() {
            out[*p] = Some(g);
        }
        // duals reported as (pred, gt)
        (out, Some((s.v, s.u)))
    }
}

fn subset_total(m: &CostMatrix, preds: &[usize], gts: &[usize], map: &[Option<usize>]) -> f64 {
    map.iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| m.get(preds[r], gts[c])))
        .sum()
}

/// Minimum-cost one-to-one assignment of size `min(rows, cols)`.
///
/// Among equal-cost optima (up to a relative tolerance of `1e-12`), the one
/// whose per-prediction gt indices are lexicographically smallest is
/// returned, treating "unmatched" as larger than every gt index.
pub fn hungarian_assign(m: &CostMatrix) -> Result<Assignment> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    if m.rows == 0 || m.cols == 0 {
        return Ok(Assignment::from_pred_map(m, &vec![None; m.rows]));
    }
    let all_p: Vec<usize> = (0..m.rows).collect();
    let all_g: Vec<usize> = (0..m.cols).collect();
    let (mut current, duals) = solve_subset(m, &all_p, &all_g);
    let (u, v) = duals.expect("non-empty problem has duals");
    let optimum = subset_total(m, &all_p, &all_g, &current);
    let scale = m.data.iter().fold(0.0f64, |a, b| a.max(b.abs())) * m.rows.min(m.cols) as f64;
    let tol = 1e-12 * scale.max(1.0);
    let tight = |i: usize, j: usize| m.get(i, j) - u[i] - v[j] <= tol * 1e3;

    let mut fixed: Vec<Option<usize>> = Vec::with_capacity(m.rows);
    let mut fixed_cost = 0.0;
    let mut gt_taken = vec![false; m.cols];
    for i in 0..m.rows {
        let target = current[i];
        let mut chosen = target;
        for j in 0..m.cols {
            if Some(j) == target {
                break;
            }
            if gt_taken[j] || !tight(i, j) {
                continue;
            }
            let rest_p: Vec<usize> = (i + 1..m.rows).collect();
            let rest_g: Vec<usize> = (0..m.cols).filter(|&g| g != j && !gt_taken[g]).collect();
            let (map, _) = solve_subset(m, &rest_p, &rest_g);
            let total = fixed_cost + m.get(i, j) + subset_total(m, &rest_p, &rest_g, &map);
            let matched = fixed.iter().filter(|f| f.is_some()).count() + 1 + map.iter().filter(|f| f.is_some()).count();
            if matched == m.rows.min(m.cols) && total - optimum <= tol {
                chosen = Some(j);
                for (r, c) in map.iter().enumerate() {
                    current[rest_p[r]] = c.map(|c| rest_g[c]);
                }
                current[i] = chosen;
                break;
            }
        }
        if let Some(j) = chosen {
            gt_taken[j] = true;
            fixed_cost += m.get(i, j);
        }
        fixed.push(chosen);
    }
    Ok(Assignment::from_pred_map(m, &fixed))
}

/// Each row in turn takes its cheapest free column.
pub fn greedy_row_assign(m: &CostMatrix) -> Assignment {
    let mut taken = vec![false; m.cols];
    let map: Vec<Option<usize>> = (0..m.rows)
        .map(|i| {
            let j = (0..m.cols)
                .filter(|j| !taken[*j])
                .min_by(|a, b| m.get(i, *a).total_cmp(&m.get(i, *b)))?;
            taken[j] = true;
            Some(j)
        })
        .collect();
    Assignment::from_pred_map(m, &map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gt_at(x: f64, y: f64, category: Category) -> GroundTruth {
        let s = category.prior_size();
        GroundTruth {
            center: [x, y, 0.85],
            size: s,
            yaw: 0.0,
            velocity: [0.0, 0.0],
            category,
        }
    }

    /// Exhaustive injective enumeration, summed in pred order.
    fn brute_force(m: &CostMatrix) -> f64 {
        fn rec(m: &CostMatrix, i: usize, used: &mut Vec<bool>, left: usize, acc: f64, best: &mut f64) {
            if i == m.rows {
                if left == 0 {
                    *best = best.min(acc);
                }
                return;
            }
            if m.rows - i > left {
                rec(m, i + 1, used, left, acc, best);
            }
            if left == 0 {
                return;
            }
            for j in 0..m.cols {
                if !used[j] {
                    used[j] = true;
                    rec(m, i + 1, used, left - 1, acc + m.get(i, j), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(m, 0, &mut vec![false; m.cols], m.rows.min(m.cols), 0.0, &mut best);
        best
    }

    #[test]
    fn radian_examples() {
        assert_eq!(radian_cost(0.3, 0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(radian_cost(0.1, 0.9).unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(circular_distance(0.1, 0.9).unwrap(), 0.2, epsilon = 1e-12);
        assert_eq!(radian_cost(0.25, 0.75).unwrap(), 0.5);
        assert_eq!(circular_distance(0.25, 0.75).unwrap(), 0.5);
        assert!(radian_cost(1.0, 0.2).is_err());
        assert!(radian_cost(0.2, -0.1).is_err());
    }

    #[test]
    fn classification_examples() {
        let cost = |p: f64| classification_cost(&[p, 0.0], Category::Car);
        assert_eq!(cost(1.0), 0.0);
        assert_abs_diff_eq!(cost(0.5), 0.25 * 0.25 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cost(0.5), 0.04332, epsilon = 1e-5);
        let ps: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert!(ps.windows(2).all(|w| cost(w[1]) < cost(w[0])));
        assert!(cost(0.0).is_finite());
    }

    #[test]
    fn box_examples() {
        let params = CostParams::default();
        let a = gt_at(10.0, 0.0, Category::Car).to_polar().unwrap();
        assert_eq!(box_cost(&a, &a, &params), 0.0);
        let mut b = a;
        b.depth += 6.5;
        assert_abs_diff_eq!(box_cost(&a, &b, &params), 0.1 / 6.0, epsilon = 1e-15);
        b.yaw = 3.0;
        b.w = 1.3;
        assert_eq!(box_cost(&a, &b, &params), box_cost(&b, &a, &params));
    }

    #[test]
    fn default_weights_two_by_two() {
        // pred 0 sits on gt 0; pred 1 is 6.5 m further out than gt 1, which
        // is antipodal to gt 0.
        let gts = [gt_at(10.0, 0.0, Category::Car), gt_at(-10.0, 0.0, Category::Car)];
        let mut preds: Vec<Prediction> = gts
            .iter()
            .map(|g| Prediction {
                bbox: g.to_polar().unwrap(),
                probs: vec![0.5, 0.0],
            })
            .collect();
        preds[1].bbox.depth = 16.5;
        let m = cost_matrix(&preds, &gts, &CostParams::default()).unwrap();
        let phi_c = 0.25 * 0.25 * 2f64.ln();
        let expected = [
            phi_c,
            phi_c + 0.5,
            phi_c + 0.25 * (0.1 / 6.0) + 0.5,
            phi_c + 0.25 * (0.1 / 6.0),
        ];
        for (got, want) in m.data.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        let a = hungarian_assign(&m).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);

        let radian_only = CostParams {
            weights: CostWeights {
                class: 0.0,
                bbox: 0.0,
                radian: 1.0,
            },
            ..CostParams::default()
        };
        let r = cost_matrix(&preds, &gts, &radian_only).unwrap();
        assert_eq!(r.data, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn fov_normalization() {
        let params = CostParams {
            normalization: RadianNormalization::FieldOfView,
            fov: PI,
            ..CostParams::default()
        };
        assert_abs_diff_eq!(params.normalize_theta(PI / 2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert!(params.normalize_theta(1.5 * PI).is_err());
    }

    #[test]
    fn hungarian_examples() {
        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let a = hungarian_assign(&m).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total_cost, 2.0);
        assert_eq!(brute_force(&m), 2.0);

        let one = CostMatrix::from_rows(&[vec![4.2]]).unwrap();
        assert_eq!(hungarian_assign(&one).unwrap().pairs, vec![(0, 0)]);

        let empty = CostMatrix::new(0, 3, vec![]).unwrap();
        let a = hungarian_assign(&empty).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_gt, vec![0, 1, 2]);
    }

    #[test]
    fn rectangular_shapes() {
        let wide = CostMatrix::from_rows(&[vec![5.0, 1.0, 3.0]]).unwrap();
        let a = hungarian_assign(&wide).unwrap();
        assert_eq!(a.pairs, vec![(0, 1)]);
        assert_eq!(a.unmatched_gt, vec![0, 2]);
        let tall = CostMatrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        let a = hungarian_assign(&tall).unwrap();
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.unmatched_pred, vec![0, 2]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let flat = CostMatrix::new(3, 3, vec![1.0; 9]).unwrap();
        assert_eq!(hungarian_assign(&flat).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let tall = CostMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        let a = hungarian_assign(&tall).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.unmatched_pred, vec![2]);
        // (0,1) and (1,0) tie with (0,0) and (1,1)
        let m = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(hungarian_assign(&m).unwrap().pairs, vec![(0, 0), (1, 1)]);
        let m = CostMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(hungarian_assign(&m).unwrap().pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = CostMatrix> {
        (1usize..7, 1usize..7, prop::bool::ANY).prop_flat_map(|(r, c, ints)| {
            let cell = if ints { (0u8..4).prop_map(f64::from).boxed() } else { (0.0..10.0f64).boxed() };
            prop::collection::vec(cell, r * c).prop_map(move |d| CostMatrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn radian_closed_forms_agree(a in 0.0..1.0f64, b in 0.0..1.0f64, c in 0.0..1.0f64) {
            let r = radian_cost(a, b).unwrap();
            prop_assert!((r - circular_distance(a, b).unwrap()).abs() <= 1e-12);
            prop_assert_eq!(r, radian_cost(b, a).unwrap());
            prop_assert!((0.0..=0.5).contains(&r));
            prop_assert!(r <= radian_cost(a, c).unwrap() + radian_cost(c, b).unwrap() + 1e-12);
        }

        #[test]
        fn hungarian_is_optimal(m in matrix_strategy()) {
            let a = hungarian_assign(&m).unwrap();
            prop_assert_eq!(a.pairs.len(), m.rows.min(m.cols));
            prop_assert_eq!(a.total_cost, brute_force(&m));
            prop_assert!(a.total_cost <= greedy_row_assign(&m).total_cost + 1e-12);
            let mut gts: Vec<usize> = a.pairs.iter().map(|p| p.1).collect();
            gts.sort();
            gts.dedup();
            prop_assert_eq!(gts.len(), a.pairs.len());
        }

        #[test]
        fn shift_invariance(m in matrix_strategy(), row in 0usize..7, k in 1u8..5) {
            // integer shifts keep all sums exact
            let base = hungarian_assign(&m).unwrap();
            let row = row % m.rows;
            let mut shifted = m.clone();
            if m.rows <= m.cols {
                for j in 0..m.cols {
                    shifted.data[row * m.cols + j] += k as f64;
                }
            } else {
                let col = row % m.cols;
                for i in 0..m.rows {
                    shifted.data[i * m.cols + col] += k as f64;
                }
            }
            if m.data.iter().all(|v| v.fract() == 0.0) {
                prop_assert_eq!(hungarian_assign(&shifted).unwrap().pairs, base.pairs);
            } else {
                let s = hungarian_assign(&shifted).unwrap();
                prop_assert!((s.total_cost - base.total_cost - k as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn positive_scaling(m in matrix_strategy(), e in -3i32..4) {
            let lambda = 2f64.powi(e);
            let scaled = CostMatrix::new(m.rows, m.cols, m.data.iter().map(|v| v * lambda).collect()).unwrap();
            prop_assert_eq!(hungarian_assign(&scaled).unwrap().pairs, hungarian_assign(&m).unwrap().pairs);
        }
    }
}
