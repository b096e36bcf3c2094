//! Unified and shrinking-horizon MPC with deadline relaxation, plus the
//! cruise and hierarchical baselines.

mod baselines;
mod horizon;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::EnergyModel;
use crate::geometry::{Halfspace, Point, Region};
use crate::learning::{
    terminal_sets, terminal_timing, Dataset, Envelope, NoiseDiscretization, SetData, Target, TargetSet, TerminalTiming,
    ValueFunction,
};
use crate::plant::{noise_bounds, State};
use crate::solver::{solve, ConvexProgram, SolverError, Status};
use crate::traffic::{collision_halfspace, PrecedingTrack, Route, TrafficLight};

pub use baselines::{cruise_baseline, cruise_qp, hierarchical_plan, HierarchicalController, HierarchicalPlan};
use horizon::Horizon;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control failure: {0}")]
    ControlFailure(String),
    #[error("deadline {deadline} already reached at step {k}")]
    DeadlinePassed { k: usize, deadline: usize },
    #[error("baseline plan infeasible: {0}")]
    BaselineInfeasible(String),
    #[error(transparent)]
    Malformed(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub env: Envelope,
    pub energy: EnergyModel,
    pub slack_penalty: f64,
    pub slack_tol: f64,
    pub relax_step: usize,
    pub yellow_as_green: bool,
    /// Input penalty of the tracking baselines.
    pub cruise_rho: f64,
    /// Penalty on the emergency violation slack.
    pub violation_penalty: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            env: Envelope::default(),
            energy: EnergyModel::synthetic(),
            slack_penalty: 10000.0,
            slack_tol: 1e-6,
            relax_step: 5,
            yellow_as_green: true,
            cruise_rho: 0.5,
            violation_penalty: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Unified,
    Simplified,
    Cruise,
    Hierarchical,
    EndOfRoute,
}

/// How red phases inside the horizon are imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedMode {
    /// Stay behind the line at every red step.
    Stop,
    /// Be past the line before the first red step.
    Go,
    /// Collision and red rows softened with a large penalty.
    Emergency,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildFlags {
    pub terminal_empty: bool,
    /// A constant (i = 0) collision or red row was already violated.
    pub i0_violation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcResult {
    pub u0: f64,
    pub slack: f64,
    pub nominal: Vec<Point>,
    pub objective: f64,
    pub status: Status,
    pub kind: ControllerKind,
    pub red_mode: RedMode,
    pub flags: BuildFlags,
    pub light: Option<usize>,
    pub deadline: Option<usize>,
    /// Emergency violation slack, 0 unless `red_mode == Emergency`.
    pub violation: f64,
}

/// Learned terminal ingredients shared read-only by all episodes of an iteration.
#[derive(Debug, Clone)]
pub struct TerminalModel {
    pub vf: ValueFunction,
    pub sets: SetData,
    pub nd: NoiseDiscretization,
}

impl TerminalModel {
    pub fn new(dataset: &Dataset, target: TargetSet, nd: NoiseDiscretization, env: &Envelope) -> Self {
        Self {
            vf: ValueFunction::from_rows(&dataset.rows, target),
            sets: SetData::new(dataset, &env.sys()),
            nd,
        }
    }
}

/// Red flags of the upcoming light at steps `k..=k+h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightView {
    pub s_tl: f64,
    pub red: Vec<bool>,
}

impl LightView {
    pub fn new(light: &TrafficLight, k: usize, h: usize, yellow_as_green: bool) -> Self {
        Self {
            s_tl: light.position,
            red: (0..=h).map(|i| light.is_red(k + i, yellow_as_green)).collect(),
        }
    }

    pub fn any_red(&self) -> bool {
        self.red.iter().any(|&r| r)
    }

    fn first_red(&self) -> Option<usize> {
        self.red.iter().position(|&r| r)
    }
}

/// Tightened stop bounds `s̄_i <= s_tl − (2Li+1)·w_max` at red steps.
pub fn red_bounds(view: &LightView, env: &Envelope, h: usize) -> Vec<(usize, f64)> {
    (0..=h.min(view.red.len() - 1))
        .filter(|&i| view.red[i])
        .map(|i| (i, view.s_tl - (2.0 * env.gain * i as f64 + 1.0) * env.w_hi))
        .collect()
}

/// Bound `s̄_{r−1} >= s_tl − (2L(r−1)+1)·w_min` for crossing before the
/// first red step `r`; `None` when there is no such step in `1..=h`.
pub fn go_bound(view: &LightView, env: &Envelope, h: usize) -> Option<(usize, f64)> {
    let r = view.first_red()?;
    if r == 0 || r > h {
        return None;
    }
    let i = r - 1;
    Some((i, view.s_tl - (2.0 * env.gain * i as f64 + 1.0) * env.w_lo))
}

/// Program plus the indices needed to read the solution.
pub struct Built {
    pub prog: ConvexProgram,
    pub slack: Option<usize>,
    pub violation: Option<usize>,
    pub h: usize,
    pub flags: BuildFlags,
    hz_free: Vec<Point>,
    hz_gain: Vec<Vec<Point>>,
}

impl Built {
    fn from_horizon(hz: Horizon, slack: Option<usize>, violation: Option<usize>, flags: BuildFlags) -> Self {
        Self {
            h: hz.h,
            hz_free: hz.roll.free,
            hz_gain: hz.roll.gain,
            prog: hz.prog,
            slack,
            violation,
            flags,
        }
    }

    pub fn nominal(&self, x: &[f64]) -> Vec<Point> {
        (0..=self.h)
            .map(|i| {
                let mut p = self.hz_free[i];
                for (j, g) in self.hz_gain[i].iter().enumerate() {
                    p += g * x[j];
                }
                p
            })
            .collect()
    }
}

/// Bounds, collision rows and red rows shared by every horizon program.
pub(crate) fn constrained_horizon(
    x_hat: State,
    h: usize,
    lead: Option<&PrecedingTrack>,
    view: Option<&LightView>,
    mode: RedMode,
    cfg: &MpcConfig,
) -> Option<(Horizon, Option<usize>, BuildFlags)> {
    let env = &cfg.env;
    let mut hz = Horizon::new(x_hat.vec(), h, env);
    hz.add_speed_bounds(env.v_max);
    let mut flags = BuildFlags::default();
    let viol = (mode == RedMode::Emergency).then(|| hz.prog.add_var(0.0, f64::INFINITY, cfg.violation_penalty));
    if let Some(tr) = lead {
        for i in 0..=h {
            let (s, v) = tr.at(i, env.ts);
            let hs = collision_halfspace(s, v, &env.collision).erode(&noise_bounds(env.gain, &env.w(), i));
            let slack = if i == 0 { None } else { viol };
            if !hz.add_halfspace(i, &hs, slack) {
                flags.i0_violation = true;
            }
        }
    }
    if let Some(view) = view {
        match mode {
            RedMode::Stop | RedMode::Emergency => {
                for (i, b) in red_bounds(view, env, h) {
                    let slack = if i == 0 { None } else { viol };
                    if !hz.add_halfspace(i, &Halfspace::position_at_most(b), slack) {
                        flags.i0_violation = true;
                    }
                }
            }
            RedMode::Go => {
                let (i, b) = go_bound(view, env, h)?;
                if !hz.add_halfspace(i, &Halfspace::position_at_least(b), None) {
                    return None;
                }
            }
        }
    }
    Some((hz, viol, flags))
}

fn solve_built(b: &Built, kind: ControllerKind, mode: RedMode) -> Result<Option<MpcResult>, ControlError> {
    let sol = solve(&b.prog)?;
    if sol.status != Status::Optimal {
        log::debug!("{kind:?}/{mode:?}: solver status {:?}", sol.status);
        return Ok(None);
    }
    Ok(Some(MpcResult {
        u0: sol.x[0],
        slack: b.slack.map_or(0.0, |i| sol.x[i].max(0.0)),
        nominal: b.nominal(&sol.x),
        objective: sol.objective,
        status: sol.status,
        kind,
        red_mode: mode,
        flags: b.flags,
        light: None,
        deadline: None,
        violation: b.violation.map_or(0.0, |i| sol.x[i].max(0.0)),
    }))
}

/// Tries stop, go, then emergency red handling.
pub(crate) fn solve_with_fallback(
    view: Option<&LightView>,
    kind: ControllerKind,
    mut build: impl FnMut(RedMode) -> Result<Option<Built>, ControlError>,
) -> Result<MpcResult, ControlError> {
    let has_red = view.is_some_and(|v| v.any_red());
    let modes: &[RedMode] = if has_red {
        &[RedMode::Stop, RedMode::Go, RedMode::Emergency]
    } else {
        &[RedMode::Stop, RedMode::Emergency]
    };
    for &mode in modes {
        if let Some(b) = build(mode)? {
            if let Some(r) = solve_built(&b, kind, mode)? {
                return Ok(r);
            }
        }
    }
    Err(ControlError::ControlFailure(format!("{kind:?}: no mode solved")))
}

fn add_slack(hz: &mut Horizon, cfg: &MpcConfig) -> usize {
    hz.prog.add_var(0.0, f64::INFINITY, cfg.slack_penalty)
}

/// Terminal halfspaces `hs ⊖ 2LN·W ⊕ s_f` on `x̄_N`, with `hs` in shifted coordinates.
fn add_terminal(hz: &mut Horizon, region: &Region, s_tl: f64, slack: usize, env: &Envelope) -> bool {
    if region.is_empty() {
        return false;
    }
    let n = hz.h;
    let seg = noise_bounds(env.gain, &env.w(), n);
    for hs in region.halfspaces() {
        let abs = hs.erode(&seg).shift_position(s_tl);
        hz.add_halfspace(n, &abs, Some(slack));
    }
    true
}

/// Unified program: energy over the horizon, expected learned terminal
/// cost over the noise discretization, and the softened terminal set.
#[allow(clippy::too_many_arguments)]
pub fn build_unified(
    x_hat: State,
    lead: Option<&PrecedingTrack>,
    model: &TerminalModel,
    terminal: &Region,
    view: &LightView,
    mode: RedMode,
    cfg: &MpcConfig,
) -> Result<Option<Built>, ControlError> {
    let env = &cfg.env;
    let n = env.horizon;
    if n == 0 {
        return Err(SolverError::MalformedProgram("horizon 0".into()).into());
    }
    let Some((mut hz, viol, mut flags)) = constrained_horizon(x_hat, n, lead, Some(view), mode, cfg) else {
        return Ok(None);
    };
    hz.add_energy(&cfg.energy);
    let sf = add_slack(&mut hz, cfg);
    flags.terminal_empty = !add_terminal(&mut hz, terminal, view.s_tl, sf, env);

    let (row_s, c_s) = hz.affine(n, &Point::new(1.0, 0.0));
    let (row_v, c_v) = hz.affine(n, &Point::new(0.0, 1.0));
    let pts = model.vf.points().to_vec();
    let costs = model.vf.costs().to_vec();
    for (pt, w) in model.nd.iter() {
        let prog = &mut hz.prog;
        let lam: Vec<usize> = costs.iter().map(|&j| prog.add_var(0.0, f64::INFINITY, w * j)).collect();
        let es = prog.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
        let ev = prog.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0);
        for e in [es, ev] {
            prog.add_le(vec![(e, 1.0), (sf, -1.0)], 0.0);
            prog.add_le(vec![(e, -1.0), (sf, -1.0)], 0.0);
        }
        let mut eq_s: Vec<(usize, f64)> = lam.iter().zip(&pts).map(|(&i, p)| (i, p.x)).collect();
        eq_s.push((es, 1.0));
        eq_s.extend(row_s.iter().map(|&(j, a)| (j, -a)));
        prog.add_eq(eq_s, pt - view.s_tl + c_s);
        let mut eq_v: Vec<(usize, f64)> = lam.iter().zip(&pts).map(|(&i, p)| (i, p.y)).collect();
        eq_v.push((ev, 1.0));
        eq_v.extend(row_v.iter().map(|&(j, a)| (j, -a)));
        prog.add_eq(eq_v, c_v);
        prog.add_eq(lam.iter().map(|&i| (i, 1.0)).collect(), 1.0);
    }
    Ok(Some(Built::from_horizon(hz, Some(sf), viol, flags)))
}

/// Shrinking-horizon program with terminal set `Ĝ_p ⊖ 2LN_s·W ⊕ s_f` and no
/// learned terminal cost.
pub fn build_simplified(
    x_hat: State,
    lead: Option<&PrecedingTrack>,
    view: &LightView,
    n_s: usize,
    mode: RedMode,
    cfg: &MpcConfig,
) -> Result<Option<Built>, ControlError> {
    if n_s == 0 {
        return Err(ControlError::DeadlinePassed { k: 0, deadline: 0 });
    }
    let env = &cfg.env;
    let Some((mut hz, viol, flags)) = constrained_horizon(x_hat, n_s, lead, Some(view), mode, cfg) else {
        return Ok(None);
    };
    hz.add_energy(&cfg.energy);
    let sf = add_slack(&mut hz, cfg);
    add_terminal(&mut hz, &Target::Pass.region(env), view.s_tl, sf, env);
    Ok(Some(Built::from_horizon(hz, Some(sf), viol, flags)))
}

/// Environment seen by the controller at step `k`.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub k: usize,
    pub x_hat: State,
    pub route: &'a Route,
    pub deadlines: &'a [usize],
    /// Lead prediction starting at step `k`, long enough for the terminal sets.
    pub lead: Option<&'a PrecedingTrack>,
    /// Speed tracked after the last light.
    pub cruise_speed: f64,
}

pub type SetCache = HashMap<TerminalTiming, (Region, Region)>;

/// One policy evaluation: unified program while `k + N <= T`, otherwise the
/// shrinking-horizon program; cruise to the goal past the last light.
pub fn solve_policy(
    snap: &Snapshot,
    model: &TerminalModel,
    cfg: &MpcConfig,
    cache: &mut SetCache,
) -> Result<MpcResult, ControlError> {
    let env = &cfg.env;
    let n = env.horizon;
    let Some(l) = snap.route.nearest_upcoming_light(snap.x_hat.s) else {
        let mut r = cruise_baseline(snap.x_hat, snap.cruise_speed, snap.lead, None, cfg)?;
        r.kind = ControllerKind::EndOfRoute;
        return Ok(r);
    };
    let light = &snap.route.lights[l];
    let t = snap.deadlines[l];
    if snap.k >= t {
        return Err(ControlError::DeadlinePassed { k: snap.k, deadline: t });
    }
    let mut r = if snap.k + n <= t {
        let timing = terminal_timing(light, snap.k, t, n, cfg.yellow_as_green);
        let (stop, pass) = match snap.lead {
            None => cache
                .entry(timing)
                .or_insert_with(|| terminal_sets(timing, &model.sets, None, env))
                .clone(),
            Some(tr) => {
                let col: Vec<Halfspace> = (0..=timing.max_steps())
                    .map(|j| {
                        let (s, v) = tr.at(n + j, env.ts);
                        collision_halfspace(s, v, &env.collision).shift_position(-light.position)
                    })
                    .collect();
                terminal_sets(timing, &model.sets, Some(&col), env)
            }
        };
        let terminal = stop.intersect(&pass);
        let view = LightView::new(light, snap.k, n, cfg.yellow_as_green);
        solve_with_fallback(Some(&view), ControllerKind::Unified, |mode| {
            build_unified(snap.x_hat, snap.lead, model, &terminal, &view, mode, cfg)
        })?
    } else {
        let n_s = t - snap.k;
        let view = LightView::new(light, snap.k, n_s, cfg.yellow_as_green);
        solve_with_fallback(Some(&view), ControllerKind::Simplified, |mode| {
            build_simplified(snap.x_hat, snap.lead, &view, n_s, mode, cfg)
        })?
    };
    r.light = Some(l);
    r.deadline = Some(t);
    Ok(r)
}

/// Pushes `deadlines[l]` back by `step` and shifts later deadlines by the
/// same amount. Fails once the new deadline would exceed `cap`.
pub fn push_deadline(deadlines: &mut [usize], l: usize, step: usize, cap: usize) -> Result<(), ControlError> {
    let new = deadlines[l] + step;
    if new > cap {
        return Err(ControlError::ControlFailure(format!(
            "deadline of light {l} would pass the relaxation cap {cap}"
        )));
    }
    for d in deadlines.iter_mut().skip(l) {
        *d += step;
    }
    Ok(())
}

/// Relaxes the active deadline when the terminal slack is positive.
/// Returns whether a relaxation happened.
pub fn relax_deadline(
    result: &MpcResult,
    deadlines: &mut [usize],
    cfg: &MpcConfig,
    cap: usize,
) -> Result<bool, ControlError> {
    let Some(l) = result.light else {
        return Ok(false);
    };
    if result.slack <= cfg.slack_tol {
        return Ok(false);
    }
    push_deadline(deadlines, l, cfg.relax_step, cap)?;
    log::info!("relaxed deadline of light {l} to {}", deadlines[l]);
    Ok(true)
}

/// Per-episode state of the learned controller.
#[derive(Debug)]
pub struct ProposedController {
    pub cfg: MpcConfig,
    pub model: Arc<TerminalModel>,
    pub deadlines: Vec<usize>,
    pub cap: usize,
    pub relaxations: usize,
    cache: SetCache,
}

impl ProposedController {
    pub fn new(cfg: MpcConfig, model: Arc<TerminalModel>, route: &Route) -> Self {
        let cap = 2 * route.deadlines.last().copied().unwrap_or(0);
        Self {
            cfg,
            model,
            deadlines: route.deadlines.clone(),
            cap,
            relaxations: 0,
            cache: SetCache::new(),
        }
    }

    pub fn step(
        &mut self,
        k: usize,
        x_hat: State,
        route: &Route,
        lead: Option<&PrecedingTrack>,
        cruise_speed: f64,
    ) -> Result<MpcResult, ControlError> {
        let mut relaxed = false;
        loop {
            let snap = Snapshot {
                k,
                x_hat,
                route,
                deadlines: &self.deadlines,
                lead,
                cruise_speed,
            };
            match solve_policy(&snap, &self.model, &self.cfg, &mut self.cache) {
                Err(ControlError::DeadlinePassed { .. }) => {
                    let l = route.nearest_upcoming_light(x_hat.s).expect("deadline implies a light");
                    push_deadline(&mut self.deadlines, l, self.cfg.relax_step, self.cap)?;
                    self.relaxations += 1;
                    relaxed = true;
                }
                Err(e) => return Err(e),
                Ok(r) => {
                    let can_relax = !relaxed && !r.flags.terminal_empty;
                    if can_relax && relax_deadline(&r, &mut self.deadlines, &self.cfg, self.cap)? {
                        self.relaxations += 1;
                        relaxed = true;
                        continue;
                    }
                    return Ok(r);
                }
            }
        }
    }
}
