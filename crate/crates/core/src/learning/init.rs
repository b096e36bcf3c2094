use super::{DataRow, Dataset, Envelope, LearningError, TargetSet};
use crate::energy::EnergyModel;
use crate::geometry::{AxisSegment, Point};
use crate::plant::{AffineRollout, State};
use crate::solver::{solve, ConvexProgram, Status};

/// Nominal initialization trajectory: `states[0..=T+1]`, `inputs[0..=T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TubePlan {
    pub states: Vec<Point>,
    pub inputs: Vec<f64>,
    pub s_tl: f64,
}

impl TubePlan {
    /// Last planned input index `T`.
    pub fn horizon(&self) -> usize {
        self.inputs.len() - 1
    }
}

/// Minimum-effort plan whose step-`T + 1` tube (see [`build_initial_dataset`])
/// lies in the eroded target `O ⊖ D·W`.
pub fn init_tube_plan(x0: State, s_tl: f64, t: usize, target: &TargetSet, env: &Envelope) -> Result<TubePlan, LearningError> {
    if t < 1 {
        return Err(LearningError::InitPlanInfeasible(format!("horizon {t} < 1")));
    }
    let sys = env.sys();
    let n = t + 1;
    let roll = AffineRollout::new(&sys, x0.vec(), n);
    let mut p = ConvexProgram::new(0);
    for _ in 0..n {
        let i = p.add_var(env.a_min, env.a_max, 0.0);
        p.add_quad(i, i, 2.0);
    }
    let lin = |i: usize, comp: usize| -> (Vec<(usize, f64)>, f64) {
        let row = roll.gain[i].iter().enumerate().map(|(j, g)| (j, g[comp])).collect();
        (row, roll.free[i][comp])
    };
    for i in 1..=n {
        let (row, c) = lin(i, 1);
        p.add_le(row.clone(), env.v_max - c);
        p.add_le(row.into_iter().map(|(j, a)| (j, -a)).collect(), c);
    }
    let (row, c) = lin(n, 0);
    let tube = tube_width(env.gain, &env.w(), n);
    p.add_le(row.iter().map(|&(j, a)| (j, -a)).collect(), c - (s_tl - env.w_lo) + tube.lo);
    p.add_le(row, s_tl + target.depth - env.w_hi - c - tube.hi);
    let sol = solve(&p)?;
    if sol.status != Status::Optimal {
        return Err(LearningError::InitPlanInfeasible(format!("solver status {:?}", sol.status)));
    }
    let inputs = sol.x.clone();
    let states = (0..=n).map(|i| roll.state(i, &inputs)).collect();
    Ok(TubePlan { states, inputs, s_tl })
}

/// Tube half-widths at step `k`: `(1 + 2Lk)·W`. Each step widens by the
/// one-step noise, so every row's image stays inside the next step's tube
/// after the erosion used by the set recursion.
pub fn tube_width(gain: f64, w: &AxisSegment, k: usize) -> AxisSegment {
    w.scaled(1.0 + 2.0 * gain * k as f64)
}

/// Three rows per planned step: the nominal state and its two tube
/// vertices `(1 + 2Lk)·D·W`, shifted by the light position. `gain = 0`
/// gives a constant-width tube.
pub fn build_initial_dataset(plan: &TubePlan, w: &AxisSegment, gain: f64) -> Dataset {
    let mut rows = Vec::with_capacity(3 * plan.inputs.len());
    for (k, &u) in plan.inputs.iter().enumerate() {
        let x = plan.states[k];
        let tw = tube_width(gain, w, k);
        for dw in [0.0, tw.lo, tw.hi] {
            rows.push(DataRow {
                s_shift: x.x + dw - plan.s_tl,
                v: x.y,
                u,
                cost: 0.0,
                iteration: 0,
            });
        }
    }
    Dataset::new(rows, 0)
}

/// Worst-case tube cost-to-go `J⁰_k`, `k = 0..=T`, written into the rows
/// produced by [`build_initial_dataset`].
pub fn init_cost_to_go(dataset: &mut Dataset, plan: &TubePlan, energy: &EnergyModel) -> Vec<f64> {
    let steps = plan.inputs.len();
    let mut j = vec![0.0; steps + 1];
    for k in (0..steps).rev() {
        let stage = dataset.rows[3 * k..3 * k + 3]
            .iter()
            .map(|r| energy.stage_cost(r.v, r.u))
            .fold(f64::NEG_INFINITY, f64::max);
        j[k] = stage + j[k + 1];
    }
    for (i, r) in dataset.rows.iter_mut().enumerate() {
        r.cost = j[i / 3];
    }
    j.truncate(steps);
    j
}
