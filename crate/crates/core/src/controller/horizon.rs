use nalgebra::{Matrix3xX, Vector3};

use crate::energy::EnergyModel;
use crate::geometry::{Halfspace, Point};
use crate::learning::Envelope;
use crate::plant::AffineRollout;
use crate::solver::{ConvexProgram, SparseRow};

/// Finite-horizon program over inputs `u_0..u_{h-1}` (variables `0..h`)
/// with nominal states written as affine functions of the inputs.
pub(crate) struct Horizon {
    pub prog: ConvexProgram,
    pub roll: AffineRollout,
    pub h: usize,
}

impl Horizon {
    pub fn new(x0: Point, h: usize, env: &Envelope) -> Self {
        let mut prog = ConvexProgram::new(0);
        for _ in 0..h {
            prog.add_var(env.a_min, env.a_max, 0.0);
        }
        Self {
            prog,
            roll: AffineRollout::new(&env.sys(), x0, h),
            h,
        }
    }

    /// `a · x̄_i` as (row over inputs, constant).
    pub fn affine(&self, i: usize, a: &Point) -> (SparseRow, f64) {
        let row = self.roll.gain[i]
            .iter()
            .enumerate()
            .map(|(j, g)| (j, a.dot(g)))
            .filter(|&(_, c)| c != 0.0)
            .collect();
        (row, a.dot(&self.roll.free[i]))
    }

    /// `hs` on `x̄_i`, optionally relaxed by `slack`. A constant row (i = 0)
    /// adds nothing and reports whether it holds.
    pub fn add_halfspace(&mut self, i: usize, hs: &Halfspace, slack: Option<usize>) -> bool {
        let (mut row, c) = self.affine(i, &hs.normal);
        if row.is_empty() && slack.is_none() {
            return c <= hs.offset + 1e-9;
        }
        if let Some(s) = slack {
            row.push((s, -1.0));
        }
        self.prog.add_le(row, hs.offset - c);
        true
    }

    pub fn add_speed_bounds(&mut self, v_max: f64) {
        for i in 1..=self.h {
            self.add_halfspace(i, &Halfspace::speed_at_most(v_max), None);
            self.add_halfspace(i, &Halfspace::speed_at_least(0.0), None);
        }
    }

    /// Σ_{i<h} ℓ(v̄_i, u_i).
    pub fn add_energy(&mut self, energy: &EnergyModel) {
        let p = energy.p();
        for i in 0..self.h {
            // z = (v̄_i, u_i, 1) = m·u + c
            let mut m = Matrix3xX::<f64>::zeros(self.h);
            for (j, g) in self.roll.gain[i].iter().enumerate() {
                m[(0, j)] = g.y;
            }
            m[(1, i)] = 1.0;
            let c = Vector3::new(self.roll.free[i].y, 0.0, 1.0);
            let q = m.transpose() * p * &m;
            let lin = m.transpose() * (p * c);
            for a in 0..self.h {
                for b in a..self.h {
                    self.prog.add_quad(a, b, 2.0 * q[(a, b)]);
                }
                self.prog.linear[a] += 2.0 * lin[a];
            }
            self.prog.constant += c.dot(&(p * c));
        }
    }

    /// `weight · (a · x̄_i − target)²`.
    pub fn add_tracking(&mut self, i: usize, a: &Point, target: f64, weight: f64) {
        let (row, c) = self.affine(i, a);
        let d = c - target;
        for &(j1, g1) in &row {
            for &(j2, g2) in &row {
                if j1 <= j2 {
                    self.prog.add_quad(j1, j2, 2.0 * weight * g1 * g2);
                }
            }
            self.prog.linear[j1] += 2.0 * weight * g1 * d;
        }
        self.prog.constant += weight * d * d;
    }

    pub fn add_input_penalty(&mut self, rho: f64) {
        for j in 0..self.h {
            self.prog.add_quad(j, j, 2.0 * rho);
        }
    }

    pub fn nominal(&self, u: &[f64]) -> Vec<Point> {
        (0..=self.h).map(|i| self.roll.state(i, &u[..self.h])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn energy_matches_direct_sum() {
        let env = Envelope::default();
        let m = EnergyModel::synthetic();
        let mut hz = Horizon::new(Vector2::new(0.0, 4.0), 4, &env);
        hz.add_energy(&m);
        let u = [0.5, -1.0, 2.0, 0.3];
        let xs = hz.nominal(&u);
        let direct: f64 = (0..4).map(|i| m.stage_cost(xs[i].y, u[i])).sum();
        assert!((hz.prog.objective(&u) - direct).abs() < 1e-9);
    }

    #[test]
    fn tracking_matches_direct_sum() {
        let env = Envelope::default();
        let mut hz = Horizon::new(Vector2::new(3.0, 4.0), 3, &env);
        let a = Vector2::new(0.0, 1.0);
        for i in 1..=3 {
            hz.add_tracking(i, &a, 6.0, 0.7);
        }
        let u = [1.0, -0.5, 2.0];
        let xs = hz.nominal(&u);
        let direct: f64 = (1..=3).map(|i| 0.7 * (xs[i].y - 6.0).powi(2)).sum();
        assert!((hz.prog.objective(&u) - direct).abs() < 1e-9);
    }
}
