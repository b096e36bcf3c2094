use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, Driver, Episode};
use super::learn::{run_learning, LearnOptions};
use super::scenario::{ControllerId, Scenario};
use super::HarnessError;
use crate::controller::TerminalModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scenario: String,
    pub controller: ControllerId,
    pub episodes: usize,
    pub completed: usize,
    pub energy: f64,
    pub travel_time: f64,
    /// Travel time over the proposed controller's.
    pub time_ratio: f64,
    pub violations: usize,
    pub soft_events: usize,
    /// Cruise reference speed, when tuned.
    pub v_ref: Option<f64>,
}

fn batch(s: &Scenario, driver: &Driver, seed: u64, n: usize) -> Result<Vec<Episode>, HarnessError> {
    (0..n as u64).map(|e| run_episode(s, driver, seed, e)).collect()
}

fn mean_time(eps: &[Episode]) -> f64 {
    eps.iter().map(|e| e.report.travel_time as f64).sum::<f64>() / eps.len() as f64
}

fn row(s: &Scenario, id: ControllerId, eps: &[Episode], base_time: f64, v_ref: Option<f64>) -> CompareRow {
    let n = eps.len() as f64;
    let t = mean_time(eps);
    CompareRow {
        scenario: s.name.clone(),
        controller: id,
        episodes: eps.len(),
        completed: eps.iter().filter(|e| e.report.completed).count(),
        energy: eps.iter().map(|e| e.report.energy).sum::<f64>() / n,
        travel_time: t,
        time_ratio: t / base_time,
        violations: eps.iter().map(|e| e.report.violations.safety_total()).sum(),
        soft_events: eps.iter().filter(|e| e.report.had_soft_event()).count(),
        v_ref,
    }
}

/// Bisects the cruise reference so the mean travel time meets `target`.
/// Faster references never arrive later, so the bracket is `[0.5, v_max]`.
pub fn match_cruise_speed(
    s: &Scenario,
    target: f64,
    seed: u64,
    n: usize,
) -> Result<(f64, Vec<Episode>), HarnessError> {
    let (mut lo, mut hi) = (0.5, s.mpc.env.v_max);
    let mut best: Option<(f64, f64, Vec<Episode>)> = None;
    for _ in 0..14 {
        let v = 0.5 * (lo + hi);
        let eps = batch(s, &Driver::Cruise { v_ref: v }, seed, n)?;
        let t = mean_time(&eps);
        let err = (t - target).abs();
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((v, err, eps));
        }
        if err <= 0.01 * target {
            break;
        }
        if t > target {
            lo = v;
        } else {
            hi = v;
        }
    }
    let (v, _, eps) = best.expect("at least one probe");
    Ok((v, eps))
}

/// Proposed, cruise and hierarchical controllers on each scenario. The
/// proposed controller is trained with the scenario's learning settings; the
/// cruise reference is tuned to its travel time and the hierarchical plan
/// gets its crossing steps as deadlines.
pub fn compare_controllers(
    scenarios: &[Scenario],
    seed: u64,
    episodes: usize,
) -> Result<Vec<CompareRow>, HarnessError> {
    let mut rows = Vec::new();
    for s in scenarios {
        let mut opts = LearnOptions::from_scenario(s);
        opts.seed = seed;
        let run = run_learning(s, &opts)?;
        let model: Arc<TerminalModel> = run.model;
        let proposed = batch(s, &Driver::Proposed(model), seed, episodes)?;
        let base = mean_time(&proposed);
        rows.push(row(s, ControllerId::Proposed, &proposed, base, None));

        let (v_ref, cruise) = match_cruise_speed(s, base, seed, episodes)?;
        rows.push(row(s, ControllerId::Cruise, &cruise, base, Some(v_ref)));

        let hier: Vec<Episode> = proposed
            .iter()
            .map(|p| {
                let deadlines = p.report.crossings.iter().zip(&p.report.deadlines).map(|(c, d)| c.unwrap_or(*d)).collect();
                run_episode(s, &Driver::Hierarchical { deadlines: Some(deadlines) }, seed, p.report.stream)
            })
            .collect::<Result<_, _>>()?;
        rows.push(row(s, ControllerId::Hierarchical, &hier, base, None));
    }
    Ok(rows)
}
