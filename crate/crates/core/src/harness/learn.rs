use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode, Driver, Episode};
use super::scenario::Scenario;
use super::HarnessError;
use crate::controller::TerminalModel;
use crate::learning::{
    build_initial_dataset, discretize_terminal_noise, init_cost_to_go, init_tube_plan, sample_terminal_noise,
    update_cost_to_go, shift_rows, Dataset, NoiseDiscretization, SetData, TargetSet, ValueFunction,
};
use crate::plant::State;

/// What to do with an episode that fails or hits the step cap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// Log it, count it and keep going without its data.
    #[default]
    Skip,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnOptions {
    pub seed: u64,
    pub j_max: usize,
    pub mc_per_iter: usize,
    pub early_stop: bool,
    pub on_error: ErrorPolicy,
}

impl LearnOptions {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            seed: s.seed,
            j_max: s.learning.j_max,
            mc_per_iter: s.learning.mc_per_iter,
            early_stop: s.learning.early_stop,
            on_error: ErrorPolicy::Skip,
        }
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub episodes: usize,
    pub completed: usize,
    pub failures: usize,
    pub mean_energy: f64,
    pub std_energy: f64,
    pub mean_travel_time: f64,
    /// Mean of the value function in use at the initial estimates.
    pub mean_value_x0: f64,
    /// Sample std of `E − V(x̂₀)` over completed episodes.
    pub std_gap: f64,
    pub soft_events: usize,
    pub violations: usize,
    pub dataset_rows: usize,
    pub support_rows: usize,
}

#[derive(Debug, Clone)]
pub struct LearningRun {
    pub curve: Vec<CurvePoint>,
    pub dataset: Dataset,
    pub model: Arc<TerminalModel>,
    /// Value function used at each iteration, index = iteration.
    pub values: Vec<ValueFunction>,
}

fn target(s: &Scenario) -> TargetSet {
    TargetSet {
        depth: s.learning.target_depth,
        v_max: s.mpc.env.v_max,
    }
}

/// Terminal model for a stored dataset, with the scenario's support pruning.
pub fn model_from_dataset(s: &Scenario, data: &Dataset, nd: NoiseDiscretization) -> TerminalModel {
    let mut vf = ValueFunction::new(target(s));
    vf.extend_with_tol(&data.rows, s.learning.support_tol);
    TerminalModel {
        vf,
        sets: SetData::new(data, &s.mpc.env.sys()),
        nd,
    }
}

/// Initialization dataset and noise discretization.
pub fn initial_model(s: &Scenario, seed: u64) -> Result<(Dataset, NoiseDiscretization), HarnessError> {
    let env = &s.mpc.env;
    let x0 = State::new(s.ego_start[0], s.ego_start[1]);
    let plan = init_tube_plan(x0, x0.s + s.learning.init_distance, s.learning.init_horizon, &target(s), env)?;
    let mut data = build_initial_dataset(&plan, &env.w(), env.gain);
    init_cost_to_go(&mut data, &plan, &s.mpc.energy);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let samples = sample_terminal_noise(&s.noise, env.gain, env.horizon, s.learning.noise_samples, &mut rng);
    let mut nd = discretize_terminal_noise(&samples, env.terminal_noise(), s.learning.noise_points)?;
    nd.seed = Some(seed);
    Ok((data, nd))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn summarize(j: usize, episodes: &[Episode], model: &TerminalModel, data: &Dataset) -> CurvePoint {
    let done: Vec<&Episode> = episodes.iter().filter(|e| e.report.completed).collect();
    let energies: Vec<f64> = done.iter().map(|e| e.report.energy).collect();
    let times: Vec<f64> = done.iter().map(|e| e.report.travel_time as f64).collect();
    let mut values = Vec::new();
    let mut gaps = Vec::new();
    for e in &done {
        let light = e.instance.route.lights[0].position;
        if let Some(v) = model.vf.eval(e.report.x0_hat, light) {
            values.push(v);
            gaps.push(e.report.energy - v);
        }
    }
    let (mean_energy, std_energy) = mean_std(&energies);
    CurvePoint {
        iteration: j,
        episodes: episodes.len(),
        completed: done.len(),
        failures: episodes.len() - done.len(),
        mean_energy,
        std_energy,
        mean_travel_time: mean_std(&times).0,
        mean_value_x0: mean_std(&values).0,
        std_gap: mean_std(&gaps).1,
        soft_events: episodes.iter().filter(|e| e.report.had_soft_event()).count(),
        violations: episodes.iter().map(|e| e.report.violations.safety_total()).sum(),
        dataset_rows: data.len(),
        support_rows: model.vf.len(),
    }
}

/// Consecutive small-improvement iterations that end learning early.
const SETTLE_RUN: usize = 2;

/// Iterative learning: each iteration freezes the dataset, runs a Monte
/// Carlo batch with the learned controller, then augments the dataset with
/// the batch's closed-loop data. Episode `e` of every iteration draws from
/// stream `e`, so iterations see the same task instances.
pub fn run_learning(s: &Scenario, opts: &LearnOptions) -> Result<LearningRun, HarnessError> {
    let env = &s.mpc.env;
    let sys = env.sys();
    let (mut data, nd) = initial_model(s, opts.seed)?;
    let mut vf = ValueFunction::from_rows(&data.rows, target(s));
    let mut curve = Vec::new();
    let mut values = Vec::new();
    let mut model;
    let mut j = 0;
    let mut quiet = 0;
    loop {
        model = Arc::new(TerminalModel {
            vf: vf.clone(),
            sets: SetData::new(&data, &sys),
            nd: nd.clone(),
        });
        let driver = Driver::Proposed(model.clone());
        let episodes: Vec<Episode> = (0..opts.mc_per_iter as u64)
            .into_par_iter()
            .map(|e| run_episode(s, &driver, opts.seed, e))
            .collect::<Result<_, _>>()?;
        for e in episodes.iter().filter(|e| !e.report.completed) {
            let message = e.report.failure.clone().unwrap_or_else(|| "step cap reached".into());
            if opts.on_error == ErrorPolicy::Fail {
                return Err(HarnessError::Episode { stream: e.report.stream, message });
            }
            log::warn!("iteration {j}: episode {} skipped: {message}", e.report.stream);
        }
        let point = summarize(j, &episodes, &model, &data);
        log::info!(
            "iteration {j}: mean energy {:.2} ± {:.2} kJ over {} episodes, {} rows",
            point.mean_energy,
            point.std_energy,
            point.completed,
            point.dataset_rows
        );
        let small = curve.last().is_some_and(|p: &CurvePoint| {
            (p.mean_energy - point.mean_energy) / p.mean_energy.abs() < s.learning.early_stop_tol
        });
        quiet = if small { quiet + 1 } else { 0 };
        curve.push(point);
        values.push(vf.clone());
        if j >= opts.j_max || (opts.early_stop && quiet >= SETTLE_RUN) {
            break;
        }

        j += 1;
        let mut fresh = Vec::new();
        for e in episodes.iter().filter(|e| e.report.completed) {
            let (rows, _) = shift_rows(&e.trajectory, &e.instance.route, j);
            let (rows, miss) = update_cost_to_go(&rows, &vf, &nd, &s.mpc.energy, &sys);
            if miss > 0 {
                log::debug!("iteration {j}: episode {}: {miss} rows outside the value domain", e.report.stream);
            }
            fresh.extend(rows);
        }
        data.extend_dedup(fresh.iter().copied());
        data.iteration = j;
        vf.extend_with_tol(&fresh, s.learning.support_tol);
    }
    Ok(LearningRun {
        curve,
        dataset: data,
        model,
        values,
    })
}
