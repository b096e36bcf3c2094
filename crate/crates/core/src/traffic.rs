//! Signal timing, crossing deadlines, collision constraint and the lead
//! vehicle model.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Halfspace;
use crate::plant::{State, SystemMatrices};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid light: {0}")]
    BadLight(String),
    #[error("invalid route: {0}")]
    BadRoute(String),
    #[error("no green crossing assignment within {cap} steps")]
    DeadlineSearchFailed { cap: usize },
    #[error("flow speed {0} outside [{lo}, {hi}]", lo = FLOW_SPEED_RANGE.0, hi = FLOW_SPEED_RANGE.1)]
    BadFlowSpeed(f64),
}

/// Admissible lead flow speeds (m/s), the sampling range of the randomized scenarios.
pub const FLOW_SPEED_RANGE: (f64, f64) = (2.0, 15.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Green,
    Yellow,
    Red,
}

/// Fixed-cycle light; the cycle starts with green at step `-offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficLight {
    pub position: f64,
    pub green: usize,
    pub yellow: usize,
    pub red: usize,
    #[serde(default)]
    pub offset: usize,
}

impl TrafficLight {
    pub fn always_green(position: f64) -> Self {
        Self {
            position,
            green: 1,
            yellow: 0,
            red: 0,
            offset: 0,
        }
    }

    pub fn cycle(&self) -> usize {
        self.green + self.yellow + self.red
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !self.position.is_finite() {
            return Err(TrafficError::BadLight("non-finite position".into()));
        }
        // an all-green light (yellow = red = 0) is allowed for free-flow tests
        if self.green == 0 {
            return Err(TrafficError::BadLight("green duration must be positive".into()));
        }
        if self.offset >= self.cycle() {
            return Err(TrafficError::BadLight(format!(
                "offset {} not below cycle {}",
                self.offset,
                self.cycle()
            )));
        }
        Ok(())
    }

    pub fn phase(&self, k: usize) -> Phase {
        let t = (k + self.offset) % self.cycle();
        if t < self.green {
            Phase::Green
        } else if t < self.green + self.yellow {
            Phase::Yellow
        } else {
            Phase::Red
        }
    }

    /// Whether crossing is forbidden at step `k`.
    pub fn is_red(&self, k: usize, yellow_as_green: bool) -> bool {
        match self.phase(k) {
            Phase::Red => true,
            Phase::Yellow => !yellow_as_green,
            Phase::Green => false,
        }
    }
}

pub fn light_phase(light: &TrafficLight, k: usize) -> Phase {
    light.phase(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lights: Vec<TrafficLight>,
    pub length: f64,
    pub deadlines: Vec<usize>,
}

impl Route {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.lights.is_empty() {
            return Err(TrafficError::BadRoute("no lights".into()));
        }
        for l in &self.lights {
            l.validate()?;
        }
        if self.lights.windows(2).any(|w| w[1].position <= w[0].position) {
            return Err(TrafficError::BadRoute("light positions not strictly increasing".into()));
        }
        if self.deadlines.len() != self.lights.len() {
            return Err(TrafficError::BadRoute("one deadline per light required".into()));
        }
        if self.deadlines.windows(2).any(|w| w[1] <= w[0]) || self.deadlines[0] == 0 {
            return Err(TrafficError::BadRoute("deadlines not strictly increasing".into()));
        }
        if self.length < self.lights.last().unwrap().position {
            return Err(TrafficError::BadRoute("route ends before the last light".into()));
        }
        Ok(())
    }

    pub fn nearest_upcoming_light(&self, s: f64) -> Option<usize> {
        nearest_upcoming_light(&self.lights, s)
    }

    pub fn last_light(&self) -> &TrafficLight {
        self.lights.last().expect("validated route")
    }
}

/// First light with `s <= s_tl`.
pub fn nearest_upcoming_light(lights: &[TrafficLight], s: f64) -> Option<usize> {
    lights.iter().position(|l| s <= l.position)
}

/// Deadline for a single segment from rest: `⌈d / v⌉ + 1`.
pub fn single_segment_deadline(distance: f64, flow_speed: f64) -> usize {
    (distance / flow_speed).ceil() as usize + 1
}

/// Dynamic program over green crossing steps. Light `l` may not be crossed
/// before traffic moving at the flow speed would reach it (`T_l > s_l / v_f`);
/// among the admissible assignments the sum of squared deviations of the
/// segment-average speeds from the flow speed is minimised, earliest step
/// winning ties.
pub fn green_wave_deadlines(lights: &[TrafficLight], flow_speed: f64, v_max: f64) -> Result<Vec<usize>, TrafficError> {
    if !(flow_speed > 0.0 && flow_speed.is_finite()) {
        return Err(TrafficError::BadFlowSpeed(flow_speed));
    }
    for l in lights {
        l.validate()?;
    }
    if lights.is_empty() {
        return Ok(vec![]);
    }
    let max_cycle = lights.iter().map(|l| l.cycle()).max().unwrap();
    let last = lights.last().unwrap().position.max(0.0);
    let cap = (4.0 * last / flow_speed).ceil() as usize + 2 * max_cycle + 1;

    let candidates = |l: &TrafficLight| -> Vec<usize> {
        let lb = (l.position.max(0.0) / flow_speed).floor() as usize + 1;
        (lb..=cap).filter(|&t| l.phase(t) == Phase::Green).collect()
    };

    let mut prev_pos = 0.0;
    let mut prev: Vec<(usize, f64, usize)> = vec![(0, 0.0, usize::MAX)];
    let mut layers: Vec<Vec<(usize, f64, usize)>> = vec![];
    for l in lights {
        let d = l.position - prev_pos;
        let mut cur: Vec<(usize, f64, usize)> = vec![];
        for t in candidates(l) {
            let mut best: Option<(f64, usize)> = None;
            for (pi, &(tp, cp, _)) in prev.iter().enumerate() {
                if tp >= t {
                    continue;
                }
                let seg_v = d / (t - tp) as f64;
                if seg_v > v_max + 1e-12 {
                    continue;
                }
                let c = cp + (seg_v - flow_speed).powi(2);
                if best.is_none_or(|(bc, _)| c < bc - 1e-12) {
                    best = Some((c, pi));
                }
            }
            if let Some((c, pi)) = best {
                cur.push((t, c, pi));
            }
        }
        if cur.is_empty() {
            return Err(TrafficError::DeadlineSearchFailed { cap });
        }
        layers.push(cur.clone());
        prev = cur;
        prev_pos = l.position;
    }
    let last_layer = layers.last().unwrap();
    let mut idx = 0;
    for (i, c) in last_layer.iter().enumerate() {
        if c.1 < last_layer[idx].1 - 1e-12 {
            idx = i;
        }
    }
    let mut out = vec![0; lights.len()];
    for l in (0..lights.len()).rev() {
        let (t, _, back) = layers[l][idx];
        out[l] = t;
        idx = back;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionParams {
    pub d0: f64,
    pub ttc: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self { d0: 5.0, ttc: 1.0 }
    }
}

/// `{x : s + TTC·v <= s_pv + TTC·v_pv - d0}`.
pub fn collision_halfspace(s_pv: f64, v_pv: f64, p: &CollisionParams) -> Halfspace {
    Halfspace::new(Vector2::new(1.0, p.ttc), s_pv + p.ttc * v_pv - p.d0)
}

/// Lead margin `s_pv + TTC·v_pv - d0 - (s + TTC·v)`; negative means violated.
pub fn collision_margin(ego: State, s_pv: f64, v_pv: f64, p: &CollisionParams) -> f64 {
    s_pv + p.ttc * v_pv - p.d0 - (ego.s + p.ttc * ego.v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecedingTrack {
    pub gap: f64,
    pub speed: f64,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl PrecedingTrack {
    /// Predicted `(s, v)` at step `i`, held at constant speed past the end.
    pub fn at(&self, i: usize, ts: f64) -> (f64, f64) {
        let n = self.positions.len();
        if i < n {
            (self.positions[i], self.speeds[i])
        } else {
            let v = self.speeds[n - 1];
            (self.positions[n - 1] + v * ts * (i + 1 - n) as f64, v)
        }
    }
}

/// Integrates predicted lead speeds from `ŝ_ego + gap`, holding the last
/// predicted speed for `extension` extra steps.
pub fn predict_preceding(gap: f64, speeds: &[f64], s_ego_hat: f64, extension: usize, ts: f64) -> PrecedingTrack {
    assert!(!speeds.is_empty(), "need the current lead speed");
    let tp = speeds.len() - 1;
    let mut sp: Vec<f64> = speeds.to_vec();
    sp.extend(std::iter::repeat_n(speeds[tp], extension));
    let mut pos = Vec::with_capacity(sp.len());
    let mut s = s_ego_hat + gap;
    pos.push(s);
    for v in &sp[..sp.len() - 1] {
        s += v * ts;
        pos.push(s);
    }
    PrecedingTrack {
        gap,
        speed: speeds[0],
        positions: pos,
        speeds: sp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeadPredictor {
    /// True future lead speeds over the horizon.
    Oracle,
    /// Current speed held constant.
    ConstantSpeed,
    /// True future speeds scaled by `1 + bias`.
    Biased { bias: f64 },
}

impl LeadPredictor {
    /// Predicted speeds `v̂_0..v̂_tp` from the lead trajectory starting at step `k`.
    pub fn speeds(&self, lead: &LeadTrajectory, k: usize, tp: usize) -> Vec<f64> {
        (0..=tp)
            .map(|i| match *self {
                LeadPredictor::Oracle => lead.at(k + i).v,
                LeadPredictor::ConstantSpeed => lead.at(k).v,
                LeadPredictor::Biased { bias } => {
                    if i == 0 {
                        lead.at(k).v
                    } else {
                        (lead.at(k + i).v * (1.0 + bias)).max(0.0)
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CruiseGains {
    pub kp: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for CruiseGains {
    fn default() -> Self {
        Self {
            kp: 0.5,
            a_min: -3.0,
            a_max: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadTrajectory {
    pub states: Vec<State>,
}

impl LeadTrajectory {
    /// State at step `k`; constant-speed continuation past the simulated range.
    pub fn at(&self, k: usize) -> State {
        let n = self.states.len();
        if k < n {
            self.states[k]
        } else {
            let s = self.states[n - 1];
            State::new(s.s + s.v * (k + 1 - n) as f64, s.v)
        }
    }
}

/// Lead vehicle under a proportional speed controller tracking the flow
/// speed; ignores signals.
pub fn simulate_preceding(
    flow_speed: f64,
    initial: State,
    gains: &CruiseGains,
    steps: usize,
    sys: &SystemMatrices,
) -> Result<LeadTrajectory, TrafficError> {
    if !(flow_speed >= FLOW_SPEED_RANGE.0 && flow_speed <= FLOW_SPEED_RANGE.1) {
        return Err(TrafficError::BadFlowSpeed(flow_speed));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = initial;
    states.push(x);
    for _ in 0..steps {
        let mut u = (gains.kp * (flow_speed - x.v)).clamp(gains.a_min, gains.a_max);
        // do not reverse
        let v_next = x.v + sys.b.y * u;
        if v_next < 0.0 {
            u = -x.v / sys.b.y;
        }
        x = State::from_vec(sys.propagate(x.vec(), u));
        states.push(x);
    }
    Ok(LeadTrajectory { states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2() -> TrafficLight {
        TrafficLight {
            position: 200.0,
            green: 150,
            yellow: 5,
            red: 25,
            offset: 0,
        }
    }

    #[test]
    fn phase_examples() {
        let l = table2();
        assert_eq!(l.phase(0), Phase::Green);
        assert_eq!(l.phase(150), Phase::Yellow);
        assert_eq!(l.phase(155), Phase::Red);
        assert_eq!(l.phase(180), Phase::Green);
    }

    fn scenario1_lights() -> Vec<TrafficLight> {
        [102.0, 245.0, 378.0, 484.0].iter().map(|&p| TrafficLight::always_green(p)).collect()
    }

    #[test]
    fn nearest_light_examples() {
        let l = scenario1_lights();
        assert_eq!(nearest_upcoming_light(&l, 150.0), Some(1));
        assert_eq!(nearest_upcoming_light(&l, 102.0), Some(0));
        assert_eq!(nearest_upcoming_light(&l, 500.0), None);
    }

    #[test]
    fn green_wave_examples() {
        assert_eq!(green_wave_deadlines(&[TrafficLight::always_green(200.0)], 10.0, 20.0).unwrap(), vec![21]);
        assert_eq!(green_wave_deadlines(&scenario1_lights(), 4.312, 20.0).unwrap(), vec![24, 57, 88, 113]);
        // red on steps 15..=40: 15 green steps then 26 red
        let l = TrafficLight {
            position: 200.0,
            green: 15,
            yellow: 0,
            red: 26,
            offset: 0,
        };
        assert_eq!(green_wave_deadlines(&[l], 10.0, 20.0).unwrap(), vec![41]);
        assert!(green_wave_deadlines(&[table2()], 0.0, 20.0).is_err());
    }

    #[test]
    fn green_wave_search_failure() {
        // at 1 m/s the light is out of reach within the search cap
        let l = TrafficLight {
            position: 200.0,
            green: 10,
            yellow: 0,
            red: 10,
            offset: 0,
        };
        assert!(matches!(green_wave_deadlines(&[l], 10.0, 1.0), Err(TrafficError::DeadlineSearchFailed { .. })));
    }

    #[test]
    fn collision_examples() {
        let p = CollisionParams::default();
        let h = collision_halfspace(100.0, 10.0, &p);
        assert!(h.contains(&Vector2::new(95.0, 5.0), 0.0));
        assert!(h.eval(&Vector2::new(100.0, 5.0)).abs() < 1e-12);
        assert!(h.contains(&Vector2::new(100.0, 5.0), 0.0));
        assert!(!h.contains(&Vector2::new(101.0, 5.0), 1e-9));
        let h0 = collision_halfspace(5.0, 0.0, &p);
        assert!(h0.eval(&Vector2::new(0.0, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn prediction_examples() {
        let t = predict_preceding(20.0, &[10.0; 4], 0.0, 0, 1.0);
        assert_eq!(t.positions, vec![20.0, 30.0, 40.0, 50.0]);
        let t = predict_preceding(0.0, &[1.0, 2.0, 3.0], 0.0, 3, 1.0);
        assert_eq!(t.speeds, vec![1.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        assert_eq!(t.positions, vec![0.0, 1.0, 3.0, 6.0, 9.0, 12.0]);
        let t = predict_preceding(7.0, &[0.0; 3], 1.0, 2, 1.0);
        assert!(t.positions.iter().all(|&p| p == 8.0));
    }

    #[test]
    fn lead_simulation() {
        let sys = SystemMatrices::zoh(1.0);
        let g = CruiseGains::default();
        let tr = simulate_preceding(7.5, State::new(5.0, 7.5), &g, 50, &sys).unwrap();
        assert!(tr.states.iter().all(|s| s.v == 7.5));
        assert_eq!(tr.states[0].s, 5.0);
        let tr = simulate_preceding(10.0, State::new(5.0, 0.0), &g, 60, &sys).unwrap();
        assert!((tr.states[60].v - 10.0).abs() < 1e-3);
        assert!(simulate_preceding(0.0, State::new(5.0, 0.0), &g, 10, &sys).is_err());
    }
}
