use super::horizon::Horizon;
use super::{constrained_horizon, solve_with_fallback, Built, ControlError, ControllerKind, LightView, MpcConfig, MpcResult};
use crate::geometry::{Halfspace, Point};
use crate::plant::State;
use crate::solver::{solve, Status};
use crate::traffic::{PrecedingTrack, Route};

const SPEED: Point = Point::new(0.0, 1.0);

/// Speed-tracking QP over the configured horizon with reference `v_refs[i-1]`
/// for step `i`. Red phases are ignored when the unconstrained plan is
/// already past the line before the first red step.
pub fn cruise_qp(
    x_hat: State,
    v_refs: &[f64],
    lead: Option<&PrecedingTrack>,
    view: Option<&LightView>,
    cfg: &MpcConfig,
) -> Result<MpcResult, ControlError> {
    let h = cfg.env.horizon;
    let build = |view: Option<&LightView>, mode| -> Option<Built> {
        let (mut hz, viol, flags) = constrained_horizon(x_hat, h, lead, view, mode, cfg)?;
        for i in 1..=h {
            hz.add_tracking(i, &SPEED, v_refs[(i - 1).min(v_refs.len() - 1)], 1.0);
        }
        hz.add_input_penalty(cfg.cruise_rho);
        Some(Built::from_horizon(hz, None, viol, flags))
    };
    if let Some(v) = view.filter(|v| v.any_red()) {
        if let Some((i, b)) = super::go_bound(v, &cfg.env, h) {
            if let Some(r) = solve_with_fallback(None, ControllerKind::Cruise, |mode| Ok(build(None, mode)))
                .ok()
                .filter(|r| r.violation == 0.0 && r.nominal[i].x >= b - 1e-9)
            {
                return Ok(r);
            }
        }
    }
    solve_with_fallback(view, ControllerKind::Cruise, |mode| Ok(build(view, mode)))
}

/// Cruise controller tracking a constant speed.
pub fn cruise_baseline(
    x_hat: State,
    v_ref: f64,
    lead: Option<&PrecedingTrack>,
    view: Option<&LightView>,
    cfg: &MpcConfig,
) -> Result<MpcResult, ControlError> {
    cruise_qp(x_hat, &[v_ref], lead, view, cfg)
}

/// Full-route free-flow energy-optimal plan.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalPlan {
    pub states: Vec<Point>,
    pub inputs: Vec<f64>,
    pub energy: f64,
}

/// Plans to the last deadline with crossing deadlines as hard constraints.
/// Red phases are convexified: the vehicle stays behind light `l` during
/// every red step before the green window that contains `T_l`.
pub fn hierarchical_plan(x0: State, route: &Route, cfg: &MpcConfig) -> Result<HierarchicalPlan, ControlError> {
    const MARGIN: f64 = 1.0;
    let h = *route.deadlines.last().ok_or_else(|| ControlError::BaselineInfeasible("empty route".into()))?;
    let mut hz = Horizon::new(x0.vec(), h, &cfg.env);
    hz.add_speed_bounds(cfg.env.v_max);
    hz.add_energy(&cfg.energy);
    for (light, &t) in route.lights.iter().zip(&route.deadlines) {
        let mut g0 = t;
        while g0 > 0 && !light.is_red(g0 - 1, cfg.yellow_as_green) {
            g0 -= 1;
        }
        for k in 1..g0 {
            if light.is_red(k, cfg.yellow_as_green) && !hz.add_halfspace(k, &Halfspace::position_at_most(light.position - MARGIN), None) {
                return Err(ControlError::BaselineInfeasible(format!("red at step {k} already violated")));
            }
        }
        hz.add_halfspace(t, &Halfspace::position_at_least(light.position + MARGIN), None);
    }
    let sol = solve(&hz.prog)?;
    if sol.status != Status::Optimal {
        return Err(ControlError::BaselineInfeasible(format!("solver status {:?}", sol.status)));
    }
    Ok(HierarchicalPlan {
        states: hz.nominal(&sol.x),
        inputs: sol.x[..h].to_vec(),
        energy: sol.objective,
    })
}

/// Tracks the plan's speeds with the cruise QP; no re-planning.
#[derive(Debug, Clone)]
pub struct HierarchicalController {
    pub plan: HierarchicalPlan,
    pub cfg: MpcConfig,
    /// Speed held after the plan ends.
    pub final_speed: f64,
}

impl HierarchicalController {
    pub fn new(x0: State, route: &Route, cfg: MpcConfig, final_speed: f64) -> Result<Self, ControlError> {
        Ok(Self {
            plan: hierarchical_plan(x0, route, &cfg)?,
            cfg,
            final_speed,
        })
    }

    pub fn step(
        &self,
        k: usize,
        x_hat: State,
        route: &Route,
        lead: Option<&PrecedingTrack>,
    ) -> Result<MpcResult, ControlError> {
        let n = self.cfg.env.horizon;
        let refs: Vec<f64> = (1..=n)
            .map(|i| self.plan.states.get(k + i).map_or(self.final_speed, |x| x.y))
            .collect();
        let view = route
            .nearest_upcoming_light(x_hat.s)
            .map(|l| LightView::new(&route.lights[l], k, n, self.cfg.yellow_as_green));
        let mut r = cruise_qp(x_hat, &refs, lead, view.as_ref(), &self.cfg)?;
        r.kind = ControllerKind::Hierarchical;
        Ok(r)
    }
}
