use nalgebra::Vector2;

use super::{DataRow, Dataset, NoiseDiscretization, ValueFunction};
use crate::energy::EnergyModel;
use crate::plant::{State, SystemMatrices};
use crate::traffic::Route;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    pub offered: usize,
    pub past_last_light: usize,
    pub domain_miss: usize,
    pub merged: usize,
    pub added: usize,
}

/// Cost-to-go of freshly recorded rows: stage cost plus the expected previous
/// value at the noisy one-step image. Rows whose image leaves the domain of
/// `vf_prev` are dropped; the second value counts them.
pub fn update_cost_to_go(
    rows: &[DataRow],
    vf_prev: &ValueFunction,
    nd: &NoiseDiscretization,
    energy: &EnergyModel,
    sys: &SystemMatrices,
) -> (Vec<DataRow>, usize) {
    let mut out = Vec::with_capacity(rows.len());
    let mut miss = 0;
    'rows: for r in rows {
        let succ = sys.propagate(r.x(), r.u);
        let mut expect = 0.0;
        for (pt, w) in nd.iter() {
            match vf_prev.eval_shifted(succ + Vector2::new(pt, 0.0)) {
                Some(v) => expect += w * v,
                None => {
                    log::debug!("DomainMiss: row at ({:.3}, {:.3}) u={:.3} dropped", r.s_shift, r.v, r.u);
                    miss += 1;
                    continue 'rows;
                }
            }
        }
        out.push(DataRow {
            cost: energy.stage_cost(r.v, r.u) + expect,
            ..*r
        });
    }
    (out, miss)
}

/// Closed-loop `(x̂_k, u_k)` pairs as rows shifted by their nearest upcoming
/// light; the second value counts states past the last light.
pub fn shift_rows(trajectory: &[(State, f64)], route: &Route, iteration: usize) -> (Vec<DataRow>, usize) {
    let mut skipped = 0;
    let rows = trajectory
        .iter()
        .filter_map(|&(x, u)| match route.nearest_upcoming_light(x.s) {
            Some(l) => Some(DataRow {
                s_shift: x.s - route.lights[l].position,
                v: x.v,
                u,
                cost: 0.0,
                iteration,
            }),
            None => {
                skipped += 1;
                None
            }
        })
        .collect();
    (rows, skipped)
}

/// Appends closed-loop `(x̂_k, u_k)` pairs, each shifted by its nearest
/// upcoming light, with costs from [`update_cost_to_go`]. Also returns the
/// costed rows that were offered to the dataset.
pub fn augment_dataset(
    dataset: &Dataset,
    trajectory: &[(State, f64)],
    route: &Route,
    vf_prev: &ValueFunction,
    nd: &NoiseDiscretization,
    energy: &EnergyModel,
    sys: &SystemMatrices,
) -> (Dataset, UpdateStats, Vec<DataRow>) {
    let iteration = dataset.iteration + 1;
    let (rows, skipped) = shift_rows(trajectory, route, iteration);
    let (rows, miss) = update_cost_to_go(&rows, vf_prev, nd, energy, sys);
    let mut next = Dataset::new(dataset.rows.clone(), iteration);
    let before = next.len();
    let merged = next.extend_dedup(rows.iter().copied());
    let stats = UpdateStats {
        offered: trajectory.len(),
        past_last_light: skipped,
        domain_miss: miss,
        merged,
        added: next.len() - before,
    };
    (next, stats, rows)
}
