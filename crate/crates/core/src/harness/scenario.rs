use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::MpcConfig;
use crate::energy::EnergyModel;
use crate::plant::{NoiseModel, State};
use crate::traffic::{
    green_wave_deadlines, simulate_preceding, single_segment_deadline, CruiseGains, LeadPredictor, LeadTrajectory, Route,
    TrafficLight,
};

/// A fixed value or a uniform sampling law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Law {
    Fixed(f64),
    Uniform { uniform: [f64; 2] },
}

impl Law {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Law::Fixed(x) => x,
            Law::Uniform { uniform: [a, b] } => {
                if a == b {
                    a
                } else {
                    rng.random_range(a..b)
                }
            }
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Law::Fixed(x) => (x, x),
            Law::Uniform { uniform: [a, b] } => (a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DeadlineRule {
    /// `⌈(s_l − s_0)/v_flow⌉ + 1` per light.
    SingleSegment,
    GreenWave,
    Explicit { steps: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub length: f64,
    pub lights: Vec<TrafficLight>,
    pub deadlines: DeadlineRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadSpec {
    /// Initial bumper gap ahead of the ego vehicle (m).
    pub gap: Law,
    #[serde(default = "default_predictor")]
    pub predictor: LeadPredictor,
    /// Initial lead speed; the flow speed when absent.
    #[serde(default)]
    pub initial_speed: Option<Law>,
    #[serde(default)]
    pub gains: CruiseGains,
}

fn default_predictor() -> LeadPredictor {
    LeadPredictor::Oracle
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerId {
    Proposed,
    Cruise,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSpec {
    /// Horizon `T` of the initialization plan.
    pub init_horizon: usize,
    /// Light distance of the initialization plan.
    pub init_distance: f64,
    pub noise_points: usize,
    pub noise_samples: usize,
    pub j_max: usize,
    pub mc_per_iter: usize,
    pub early_stop: bool,
    /// Relative mean-energy improvement below which an iteration counts as settled.
    pub early_stop_tol: f64,
    pub target_depth: f64,
    /// Minimum improvement (kJ) for a new row to enter the value-function support.
    pub support_tol: f64,
}

impl Default for LearningSpec {
    fn default() -> Self {
        Self {
            init_horizon: 20,
            init_distance: 200.0,
            noise_points: 7,
            noise_samples: 20000,
            j_max: 10,
            mc_per_iter: 100,
            early_stop: true,
            early_stop_tol: 0.01,
            target_depth: 150.0,
            support_tol: 0.5,
        }
    }
}

/// One experiment family. Sampled quantities are drawn per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub route: RouteSpec,
    /// Traffic flow speed; the lead vehicle cruises at it.
    pub flow_speed: Law,
    #[serde(default)]
    pub lead: Option<LeadSpec>,
    #[serde(default = "default_noise")]
    pub noise: NoiseModel,
    #[serde(default)]
    pub ego_start: [f64; 2],
    #[serde(default = "default_controller")]
    pub controller: ControllerId,
    /// Reference of the cruise baseline; the flow speed when absent.
    #[serde(default)]
    pub cruise_speed: Option<f64>,
    #[serde(default)]
    pub step_cap: Option<usize>,
    /// Energy model of the simulated vehicle.
    #[serde(default = "EnergyModel::synthetic")]
    pub energy: EnergyModel,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub learning: LearningSpec,
}

fn default_noise() -> NoiseModel {
    NoiseModel::uniform(-3.0, 3.0)
}

fn default_controller() -> ControllerId {
    ControllerId::Proposed
}

/// A sampled episode setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub route: Route,
    pub flow_speed: f64,
    pub x0: State,
    pub lead: Option<LeadTrajectory>,
    pub step_cap: usize,
}

const PRESETS: &[(&str, &str)] = &[
    ("table2_single_light", include_str!("../../../../configs/table2_single_light.toml")),
    ("free_flow_single_light", include_str!("../../../../configs/free_flow_single_light.toml")),
    ("sim_pv_2.5", include_str!("../../../../configs/sim_pv_2.5.toml")),
    ("sim_pv_5", include_str!("../../../../configs/sim_pv_5.toml")),
    ("sim_pv_7.5", include_str!("../../../../configs/sim_pv_7.5.toml")),
    ("sim_pv_10", include_str!("../../../../configs/sim_pv_10.toml")),
    ("scenario1", include_str!("../../../../configs/scenario1.toml")),
    ("scenario2", include_str!("../../../../configs/scenario2.toml")),
    ("scenario3", include_str!("../../../../configs/scenario3.toml")),
];

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Option<Scenario> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| Scenario::from_toml_str(t).expect("shipped preset parses"))
    }

    /// Source text of a shipped preset.
    pub fn preset_text(name: &str) -> Option<&'static str> {
        PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.route.lights.is_empty() {
            return bad("route.lights: at least one light required".into());
        }
        for (i, l) in self.route.lights.iter().enumerate() {
            if let Err(e) = l.validate() {
                return bad(format!("route.lights[{i}]: {e}"));
            }
        }
        let (lo, hi) = self.flow_speed.bounds();
        if !(lo > 0.0 && hi <= self.mpc.env.v_max && lo <= hi) {
            return bad(format!("flow_speed: range [{lo}, {hi}] outside (0, v_max]"));
        }
        if let Some(lead) = &self.lead {
            let (a, b) = lead.gap.bounds();
            if !(a > 0.0 && a <= b) {
                return bad(format!("lead.gap: range [{a}, {b}] must be positive"));
            }
        }
        if let Err(e) = self.noise.validate() {
            return bad(format!("noise: {e}"));
        }
        if self.mpc.env.horizon == 0 {
            return bad("mpc.env.horizon: must be >= 1".into());
        }
        if !(self.mpc.env.gain > 0.0 && self.mpc.env.gain < 1.0) {
            return bad(format!("mpc.env.gain: {} not in (0, 1)", self.mpc.env.gain));
        }
        if !(self.mpc.slack_penalty > 0.0) {
            return bad("mpc.slack_penalty: must be positive".into());
        }
        if self.learning.noise_points < 2 {
            return bad("learning.noise_points: must be >= 2".into());
        }
        if !(self.learning.support_tol >= 0.0 && self.learning.support_tol.is_finite()) {
            return bad("learning.support_tol: must be a finite value >= 0".into());
        }
        if let DeadlineRule::Explicit { steps } = &self.route.deadlines {
            if steps.len() != self.route.lights.len() {
                return bad("route.deadlines.steps: one entry per light required".into());
            }
        }
        Ok(())
    }

    /// Draws flow speed and lead gap, computes deadlines and simulates the lead.
    pub fn instantiate(&self, rng: &mut ChaCha8Rng) -> Result<Instance, HarnessError> {
        let flow = self.flow_speed.sample(rng);
        let x0 = State::new(self.ego_start[0], self.ego_start[1]);
        let lights = self.route.lights.clone();
        let deadlines = match &self.route.deadlines {
            DeadlineRule::SingleSegment => lights.iter().map(|l| single_segment_deadline(l.position - x0.s, flow)).collect(),
            DeadlineRule::GreenWave => green_wave_deadlines(&lights, flow, self.mpc.env.v_max)?,
            DeadlineRule::Explicit { steps } => steps.clone(),
        };
        let route = Route {
            lights,
            length: self.route.length,
            deadlines,
        };
        route.validate()?;
        let step_cap = self.step_cap.unwrap_or(2 * route.deadlines.last().copied().unwrap_or(1));
        let lead = match &self.lead {
            None => None,
            Some(spec) => {
                let gap = spec.gap.sample(rng);
                let v0 = spec.initial_speed.map_or(flow, |l| l.sample(rng));
                let sys = self.mpc.env.sys();
                Some(simulate_preceding(flow, State::new(x0.s + gap, v0), &spec.gains, step_cap + 64, &sys)?)
            }
        };
        Ok(Instance {
            route,
            flow_speed: flow,
            x0,
            lead,
            step_cap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn presets_parse() {
        for name in Scenario::preset_names() {
            let s = Scenario::preset(name).unwrap();
            let inst = s.instantiate(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(inst.route.deadlines.len(), inst.route.lights.len(), "{name}");
        }
    }

    #[test]
    fn table2_deadline() {
        let s = Scenario::preset("table2_single_light").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let inst = s.instantiate(&mut rng).unwrap();
            assert!((2.0..15.0).contains(&inst.flow_speed));
            let gap = inst.lead.as_ref().unwrap().states[0].s;
            assert!((5.0..15.0).contains(&gap));
            assert_eq!(inst.route.deadlines[0], (200.0 / inst.flow_speed).ceil() as usize + 1);
        }
    }

    #[test]
    fn bad_field_reported() {
        let text = include_str!("../../../../configs/table2_single_light.toml").replace("name =", "nmae =");
        let e = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(e.contains("nmae"), "{e}");
        let text = include_str!("../../../../configs/table2_single_light.toml").replace("seed = ", "seed = -");
        let e = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
    }
}
