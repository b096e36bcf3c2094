use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::dataset::DataRow;
use crate::geometry::{convex_hull, Point, Polygon, EPS};
use crate::plant::State;
use crate::solver::{solve, ConvexProgram, Status};

/// Zero-cost region past the light in shifted coordinates,
/// `[0, depth] × [0, v_max]`. Bounded so the value-function domain is a polygon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub depth: f64,
    pub v_max: f64,
}

impl TargetSet {
    pub fn vertices(&self) -> [Point; 4] {
        [
            Vector2::new(0.0, 0.0),
            Vector2::new(self.depth, 0.0),
            Vector2::new(self.depth, self.v_max),
            Vector2::new(0.0, self.v_max),
        ]
    }

    pub fn polygon(&self) -> Polygon {
        Polygon::from_box(0.0, self.depth, 0.0, self.v_max)
    }
}

/// Convex lower interpolant of stored cost-to-go values: the optimal value of
/// `min Σ J_i λ_i  s.t.  Σ λ_i x_i = x,  Σ λ_i = 1,  λ >= 0` over the support
/// rows and the target-set vertices (cost 0).
#[derive(Debug, Clone)]
pub struct ValueFunction {
    target: TargetSet,
    points: Vec<Point>,
    costs: Vec<f64>,
    domain: Polygon,
}

const DOMINATED_TOL: f64 = 1e-9;

impl ValueFunction {
    pub fn new(target: TargetSet) -> Self {
        let v = target.vertices();
        Self {
            target,
            points: v.to_vec(),
            costs: vec![0.0; 4],
            domain: target.polygon(),
        }
    }

    /// Every row enters the support.
    pub fn from_rows_full(rows: &[DataRow], target: TargetSet) -> Self {
        let mut vf = Self::new(target);
        for r in rows {
            vf.points.push(r.x());
            vf.costs.push(r.cost);
        }
        vf.refresh_domain();
        vf
    }

    /// Support restricted to rows not dominated by the interpolant of the
    /// others; evaluates identically to [`Self::from_rows_full`].
    pub fn from_rows(rows: &[DataRow], target: TargetSet) -> Self {
        let mut vf = Self::new(target);
        vf.extend(rows);
        vf
    }

    /// Adds the rows that lower the interpolant somewhere. Returns how many entered.
    pub fn extend(&mut self, rows: &[DataRow]) -> usize {
        self.extend_with_tol(rows, DOMINATED_TOL)
    }

    /// Like [`Self::extend`] but a row enters only if it lowers the
    /// interpolant at its own point by more than `tol` kJ.
    pub fn extend_with_tol(&mut self, rows: &[DataRow], tol: f64) -> usize {
        let tol = tol.max(DOMINATED_TOL);
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| rows[a].cost.total_cmp(&rows[b].cost));
        let mut added = 0;
        for i in order {
            let x = rows[i].x();
            let j = rows[i].cost;
            if let Some(v) = self.eval_shifted(x) {
                if v <= j + tol {
                    continue;
                }
            }
            self.points.push(x);
            self.costs.push(j);
            if !self.domain.contains(&x, EPS) {
                let mut pts = self.domain.vertices().to_vec();
                pts.push(x);
                self.domain = convex_hull(&pts).expect("non-empty");
            }
            added += 1;
        }
        added
    }

    fn refresh_domain(&mut self) {
        self.domain = convex_hull(&self.points).expect("target vertices present");
    }

    pub fn target(&self) -> &TargetSet {
        &self.target
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn domain(&self) -> &Polygon {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Value at a point in shifted coordinates; `None` outside the hull domain.
    pub fn eval_shifted(&self, x: Point) -> Option<f64> {
        if !self.domain.contains(&x, EPS) {
            return None;
        }
        let n = self.points.len();
        let mut p = ConvexProgram::new(n);
        p.linear.clone_from(&self.costs);
        for i in 0..n {
            p.lower[i] = 0.0;
        }
        p.add_eq(self.points.iter().enumerate().map(|(i, q)| (i, q.x)).collect(), x.x);
        p.add_eq(self.points.iter().enumerate().map(|(i, q)| (i, q.y)).collect(), x.y);
        p.add_eq((0..n).map(|i| (i, 1.0)).collect(), 1.0);
        let sol = solve(&p).expect("well-formed LP");
        match sol.status {
            Status::Optimal => Some(sol.objective.max(0.0)),
            _ => None,
        }
    }

    pub fn eval(&self, x: State, s_tl: f64) -> Option<f64> {
        self.eval_shifted(x.shifted(s_tl))
    }
}

pub fn eval_value_function(vf: &ValueFunction, x: State, s_tl: f64) -> Option<f64> {
    vf.eval(x, s_tl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> TargetSet {
        TargetSet { depth: 150.0, v_max: 20.0 }
    }

    fn row(s: f64, v: f64, j: f64) -> DataRow {
        DataRow { s_shift: s, v, u: 0.0, cost: j, iteration: 0 }
    }

    fn rows() -> Vec<DataRow> {
        vec![row(-100.0, 5.0, 60.0), row(-50.0, 5.0, 30.0), row(-100.0, 10.0, 70.0), row(-50.0, 12.0, 40.0)]
    }

    #[test]
    fn zero_in_target() {
        let vf = ValueFunction::from_rows(&rows(), target());
        assert!(vf.eval(State::new(210.0, 8.0), 200.0).unwrap() < 1e-7);
    }

    #[test]
    fn at_data_point_at_most_stored() {
        let vf = ValueFunction::from_rows_full(&rows(), target());
        for r in rows() {
            assert!(vf.eval_shifted(r.x()).unwrap() <= r.cost + 1e-7);
        }
    }

    #[test]
    fn between_points_below_interpolation() {
        let vf = ValueFunction::from_rows_full(&rows(), target());
        let (a, b) = (rows()[0], rows()[1]);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let x = a.x() * t + b.x() * (1.0 - t);
            let lin = a.cost * t + b.cost * (1.0 - t);
            assert!(vf.eval_shifted(x).unwrap() <= lin + 1e-7);
        }
    }

    #[test]
    fn outside_domain() {
        let vf = ValueFunction::from_rows(&rows(), target());
        assert_eq!(vf.eval_shifted(Vector2::new(-300.0, 5.0)), None);
        assert_eq!(vf.eval_shifted(Vector2::new(-10.0, 25.0)), None);
    }

    #[test]
    fn pruned_matches_full() {
        let mut rs = rows();
        rs.push(row(-75.0, 7.0, 200.0));
        rs.push(row(-20.0, 3.0, 5.0));
        let full = ValueFunction::from_rows_full(&rs, target());
        let pruned = ValueFunction::from_rows(&rs, target());
        assert!(pruned.len() < full.len());
        for s in [-95.0, -60.0, -30.0, -5.0, 10.0] {
            for v in [3.0, 5.0, 8.0, 11.0] {
                let x = Vector2::new(s, v);
                match (full.eval_shifted(x), pruned.eval_shifted(x)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6, "{x:?}: {a} vs {b}"),
                    (a, b) => assert_eq!(a.is_some(), b.is_some(), "{x:?} {a:?} {b:?}"),
                }
            }
        }
    }
}
