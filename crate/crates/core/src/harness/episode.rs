use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{ControllerId, Instance, Scenario};
use super::HarnessError;
use crate::controller::{
    cruise_baseline, ControlError, ControllerKind, HierarchicalController, LightView, MpcConfig, MpcResult,
    ProposedController, TerminalModel,
};
use crate::learning::Envelope;
use crate::plant::{measure, step_true, Observer, State};
use crate::traffic::{collision_margin, predict_preceding, LeadPredictor, Route};

/// Controller used to drive an episode.
#[derive(Debug, Clone)]
pub enum Driver {
    Proposed(Arc<TerminalModel>),
    Cruise { v_ref: f64 },
    /// Full-route plan; `deadlines` overrides the route's crossing steps.
    Hierarchical { deadlines: Option<Vec<usize>> },
}

impl Driver {
    pub fn id(&self) -> ControllerId {
        match self {
            Driver::Proposed(_) => ControllerId::Proposed,
            Driver::Cruise { .. } => ControllerId::Cruise,
            Driver::Hierarchical { .. } => ControllerId::Hierarchical,
        }
    }
}

/// One row per step; the last row holds the final state with `u = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub k: usize,
    pub s: f64,
    pub v: f64,
    pub s_hat: f64,
    pub v_hat: f64,
    pub u: f64,
    pub slack: f64,
    pub controller: String,
    pub light: Option<usize>,
    pub deadline: Option<usize>,
    pub objective: f64,
    pub lead_s: Option<f64>,
    pub lead_v: Option<f64>,
    pub gap: Option<f64>,
    #[serde(rename = "dE")]
    pub de: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub terminal_empty: bool,
    pub violation: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub red: usize,
    pub ttc: usize,
    pub speed: usize,
    pub input: usize,
    pub deadline: usize,
}

impl Violations {
    pub fn safety_total(&self) -> usize {
        self.red + self.ttc + self.speed + self.input
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub scenario: String,
    pub seed: u64,
    pub stream: u64,
    pub controller: ControllerId,
    pub completed: bool,
    pub energy: f64,
    pub travel_time: usize,
    pub flow_speed: f64,
    pub crossings: Vec<Option<usize>>,
    pub deadlines: Vec<usize>,
    pub final_deadlines: Vec<usize>,
    pub violations: Violations,
    pub slack_events: usize,
    pub empty_terminal_events: usize,
    pub relaxations: usize,
    pub emergency_steps: usize,
    /// Initial estimate, used for value-function bounds.
    pub x0_hat: State,
    pub failure: Option<String>,
}

impl EpisodeReport {
    /// Slack, relaxation or emergency activity of any kind.
    pub fn had_soft_event(&self) -> bool {
        self.slack_events + self.relaxations + self.emergency_steps + self.empty_terminal_events > 0
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub report: EpisodeReport,
    pub log: Vec<StepLog>,
    pub instance: Instance,
    /// `(x̂_k, u_k)` for every controlled step.
    pub trajectory: Vec<(State, f64)>,
}

const AUDIT_TOL: f64 = 1e-6;
const PREDICTION_STEPS: usize = 64;

/// Re-checks red crossings, TTC, bounds and deadlines on a log.
pub fn audit_log(log: &[StepLog], route: &Route, env: &Envelope, deadlines: &[usize]) -> Violations {
    let mut v = Violations::default();
    for (i, row) in log.iter().enumerate() {
        if row.v < -AUDIT_TOL || row.v > env.v_max + AUDIT_TOL {
            v.speed += 1;
        }
        if row.u < env.a_min - AUDIT_TOL || row.u > env.a_max + AUDIT_TOL {
            v.input += 1;
        }
        if let (Some(ls), Some(lv)) = (row.lead_s, row.lead_v) {
            if collision_margin(State::new(row.s, row.v), ls, lv, &env.collision) < -AUDIT_TOL {
                v.ttc += 1;
            }
        }
        if i > 0 {
            let prev = log[i - 1].s;
            for l in &route.lights {
                if l.is_red(row.k, true) && prev <= l.position && row.s > l.position {
                    v.red += 1;
                }
            }
        }
    }
    for (l, &t) in route.lights.iter().zip(deadlines) {
        match log.iter().find(|r| r.s > l.position) {
            Some(r) if r.k <= t => {}
            _ => v.deadline += 1,
        }
    }
    v
}

fn crossing_steps(log: &[StepLog], route: &Route) -> Vec<Option<usize>> {
    route
        .lights
        .iter()
        .map(|l| log.iter().find(|r| r.s > l.position).map(|r| r.k))
        .collect()
}

fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The instance an episode with this seed and stream runs on.
pub fn instance_for(scenario: &Scenario, seed: u64, stream: u64) -> Result<Instance, HarnessError> {
    scenario.instantiate(&mut episode_rng(seed, stream))
}

enum Active {
    Proposed(ProposedController),
    Cruise(f64),
    Hierarchical(HierarchicalController),
}

/// Closed loop on the true plant: noise, measurement, observer, lead
/// prediction, policy, plant step and per-step audit.
pub fn run_episode(scenario: &Scenario, driver: &Driver, seed: u64, stream: u64) -> Result<Episode, HarnessError> {
    let mut rng = episode_rng(seed, stream);
    let inst = scenario.instantiate(&mut rng)?;
    let cfg: &MpcConfig = &scenario.mpc;
    let env = &cfg.env;
    let sys = env.sys();
    let support = scenario.noise.support();
    let route = &inst.route;
    let last = route.last_light().position;

    let mut x = inst.x0;
    let y0 = measure(x, scenario.noise.sample(&mut rng), &support)?;
    let mut obs = Observer::new(env.gain, y0)?;
    let x0_hat = obs.estimate;

    let cruise_speed = scenario.cruise_speed.unwrap_or(inst.flow_speed);
    let mut active = match driver {
        Driver::Proposed(m) => Active::Proposed(ProposedController::new(cfg.clone(), m.clone(), route)),
        Driver::Cruise { v_ref } => Active::Cruise(*v_ref),
        Driver::Hierarchical { deadlines } => {
            let mut r = route.clone();
            if let Some(d) = deadlines {
                r.deadlines.clone_from(d);
            }
            Active::Hierarchical(HierarchicalController::new(x0_hat, &r, cfg.clone(), inst.flow_speed)?)
        }
    };
    let predictor = scenario.lead.as_ref().map_or(LeadPredictor::Oracle, |l| l.predictor);

    let mut log = Vec::new();
    let mut traj = Vec::new();
    let mut energy = 0.0;
    let mut slack_events = 0;
    let mut empty_events = 0;
    let mut emergency = 0;
    let mut failure = None;
    let mut k = 0;
    let lead_at = |k: usize| inst.lead.as_ref().map(|t| t.at(k));
    loop {
        if x.s > last || k >= inst.step_cap {
            break;
        }
        let lead_now = lead_at(k);
        let track = inst.lead.as_ref().map(|lt| {
            let speeds = predictor.speeds(lt, k, PREDICTION_STEPS);
            predict_preceding(lt.at(k).s - x.s, &speeds, obs.estimate.s, 0, env.ts)
        });
        let x_hat = obs.estimate;
        let res: Result<MpcResult, ControlError> = match &mut active {
            Active::Proposed(c) => c.step(k, x_hat, route, track.as_ref(), cruise_speed),
            Active::Cruise(v_ref) => {
                let view = route
                    .nearest_upcoming_light(x_hat.s)
                    .map(|l| LightView::new(&route.lights[l], k, env.horizon, cfg.yellow_as_green));
                cruise_baseline(x_hat, *v_ref, track.as_ref(), view.as_ref(), cfg)
            }
            Active::Hierarchical(h) => h.step(k, x_hat, route, track.as_ref()),
        };
        let r = match res {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: episode {seed}/{stream} step {k}: {e}", scenario.name);
                failure = Some(e.to_string());
                break;
            }
        };
        if r.slack > cfg.slack_tol {
            slack_events += 1;
        }
        if r.flags.terminal_empty && matches!(r.kind, ControllerKind::Unified) {
            empty_events += 1;
        }
        if r.violation > 0.0 || r.red_mode == crate::controller::RedMode::Emergency {
            emergency += 1;
        }
        let u = r.u0.clamp(env.a_min, env.a_max);
        let de = scenario.energy.stage_cost(x.v, u);
        energy += de;
        log.push(StepLog {
            k,
            s: x.s,
            v: x.v,
            s_hat: x_hat.s,
            v_hat: x_hat.v,
            u,
            slack: r.slack,
            controller: format!("{:?}", r.kind).to_lowercase(),
            light: r.light,
            deadline: r.deadline,
            objective: r.objective,
            lead_s: lead_now.map(|l| l.s),
            lead_v: lead_now.map(|l| l.v),
            gap: lead_now.map(|l| l.s - x.s),
            de,
            energy,
            terminal_empty: r.flags.terminal_empty,
            violation: r.violation,
        });
        traj.push((x_hat, u));
        x = step_true(x, u, &sys);
        let y = measure(x, scenario.noise.sample(&mut rng), &support)?;
        obs.update(u, y, &sys);
        k += 1;
    }
    let lead_now = lead_at(k);
    log.push(StepLog {
        k,
        s: x.s,
        v: x.v,
        s_hat: obs.estimate.s,
        v_hat: obs.estimate.v,
        u: 0.0,
        slack: 0.0,
        controller: "final".into(),
        light: None,
        deadline: None,
        objective: 0.0,
        lead_s: lead_now.map(|l| l.s),
        lead_v: lead_now.map(|l| l.v),
        gap: lead_now.map(|l| l.s - x.s),
        de: 0.0,
        energy,
        terminal_empty: false,
        violation: 0.0,
    });
    let completed = x.s > last && failure.is_none();
    let (final_deadlines, relaxations) = match &active {
        Active::Proposed(c) => (c.deadlines.clone(), c.relaxations),
        _ => (route.deadlines.clone(), 0),
    };
    let violations = audit_log(&log, route, env, &route.deadlines);
    let report = EpisodeReport {
        scenario: scenario.name.clone(),
        seed,
        stream,
        controller: driver.id(),
        completed,
        energy,
        travel_time: k,
        flow_speed: inst.flow_speed,
        crossings: crossing_steps(&log, route),
        deadlines: route.deadlines.clone(),
        final_deadlines,
        violations,
        slack_events,
        empty_terminal_events: empty_events,
        relaxations,
        emergency_steps: emergency,
        x0_hat,
        failure,
    };
    Ok(Episode {
        report,
        log,
        instance: inst,
        trajectory: traj,
    })
}
