use serde::{Deserialize, Serialize};

use super::{Dataset, Envelope};
use crate::geometry::{convex_hull, Halfspace, Point, Polygon, Region, EPS};
use crate::plant::SystemMatrices;
use crate::traffic::TrafficLight;

/// Targets for the stop and pass sets, shifted so the light is at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// `s <= -w_max`: robustly behind the stop line.
    Stop,
    /// `s >= -w_min`: robustly past the light.
    Pass,
}

impl Target {
    pub fn region(&self, env: &Envelope) -> Region {
        let pos = match self {
            Target::Stop => Halfspace::position_at_most(-env.w_hi),
            Target::Pass => Halfspace::position_at_least(-env.w_lo),
        };
        Region::from_halfspaces(vec![pos, Halfspace::speed_at_least(0.0), Halfspace::speed_at_most(env.v_max)])
    }
}

/// Dataset rows with precomputed one-step images, sorted by image position.
#[derive(Debug, Clone, Default)]
pub struct SetData {
    x: Vec<Point>,
    succ: Vec<Point>,
}

impl SetData {
    pub fn new(data: &Dataset, sys: &SystemMatrices) -> Self {
        let mut pairs: Vec<(Point, Point)> = data
            .rows
            .iter()
            .map(|r| (r.x(), sys.propagate(r.x(), r.u)))
            .collect();
        pairs.sort_by(|a, b| a.1.x.total_cmp(&b.1.x));
        let (x, succ) = pairs.into_iter().unzip();
        Self { x, succ }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn candidates(&self, r: &Region) -> std::ops::Range<usize> {
        match r {
            Region::Polygon(p) => {
                let (lo, hi) = p.bounding_box();
                let a = self.succ.partition_point(|q| q.x < lo.x - EPS);
                let b = self.succ.partition_point(|q| q.x <= hi.x + EPS);
                a..b.max(a)
            }
            _ => 0..self.succ.len(),
        }
    }
}

/// Data-driven `t`-step robust controllable set to `target`.
///
/// `collision[j]` is the (shifted) collision halfspace predicted for step
/// `N + j`; `None` means no lead vehicle. All regions are in coordinates
/// shifted by the current light.
pub fn robust_controllable_set(
    data: &SetData,
    t: usize,
    target: &Region,
    collision: Option<&[Halfspace]>,
    env: &Envelope,
) -> Region {
    backward_sets(data, t, target, collision, env, false)
}

/// Extent past the light of the pass region added at every stage of [`pass_set`].
pub const PASS_DEPTH: f64 = 150.0;

/// Set of states that robustly pass the light within `t` steps. Same
/// backward pass as [`robust_controllable_set`], but every stage hull also
/// keeps the pass region eroded by the noise of the remaining steps, from
/// which zero input stays past the line.
pub fn pass_set(data: &SetData, t: usize, collision: Option<&[Halfspace]>, env: &Envelope) -> Region {
    backward_sets(data, t, &Target::Pass.region(env), collision, env, true)
}

fn backward_sets(
    data: &SetData,
    t: usize,
    target: &Region,
    collision: Option<&[Halfspace]>,
    env: &Envelope,
    absorbing: bool,
) -> Region {
    let c_at = |j: usize| -> Option<Halfspace> { collision.map(|c| c[j.min(c.len() - 1)]) };
    let mut r = match c_at(t) {
        Some(h) => target.intersect(&Region::from_halfspaces(vec![h])),
        None => target.clone(),
    };
    let noise = env.step_noise();
    for p in 0..t {
        if r.is_empty() && !absorbing {
            return Region::Empty;
        }
        let eroded = r.pontryagin_diff_segment(&noise);
        let stage = c_at(t - p - 1);
        let mut kept: Vec<Point> = if eroded.is_empty() {
            Vec::new()
        } else {
            data.candidates(&eroded)
                .filter(|&q| eroded.contains(&data.succ[q], EPS) && stage.is_none_or(|h| h.contains(&data.x[q], EPS)))
                .map(|q| data.x[q])
                .collect()
        };
        if absorbing {
            let held_box: Region = Polygon::from_box(-env.w_lo, PASS_DEPTH, 0.0, env.v_max).into();
            let mut held = held_box.pontryagin_diff_segment(&noise.scaled((p + 1) as f64));
            if let Some(h) = stage {
                held = held.intersect(&Region::from_halfspaces(vec![h]));
            }
            if let Region::Polygon(poly) = held {
                kept.extend_from_slice(poly.vertices());
            }
        }
        if kept.is_empty() {
            return Region::Empty;
        }
        r = Region::Polygon(convex_hull(&kept).expect("non-empty"));
    }
    r
}

/// Lookahead lengths for the stop and pass sets at step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TerminalTiming {
    /// Steps the terminal state must be able to wait behind the line;
    /// `None` when the light shows no red in `[k+N, T]`.
    pub t_red: Option<usize>,
    pub t_green: usize,
}

impl TerminalTiming {
    pub fn max_steps(&self) -> usize {
        self.t_green.max(self.t_red.unwrap_or(0))
    }
}

pub fn terminal_timing(light: &TrafficLight, k: usize, deadline: usize, n: usize, yellow_as_green: bool) -> TerminalTiming {
    let start = k + n;
    let t_green = deadline.saturating_sub(start);
    let last_red = (start..=deadline).rev().find(|&kk| light.is_red(kk, yellow_as_green));
    let t_red = last_red.map(|lr| {
        let mut g = lr + 1;
        while light.is_red(g, yellow_as_green) {
            g += 1;
        }
        g - start
    });
    TerminalTiming { t_red, t_green }
}

/// Stop set `S_{t_red}` and pass set `P_{t_green}` (see [`pass_set`]).
pub fn terminal_sets(
    timing: TerminalTiming,
    data: &SetData,
    collision: Option<&[Halfspace]>,
    env: &Envelope,
) -> (Region, Region) {
    let stop = match timing.t_red {
        None => Region::from_halfspaces(vec![Halfspace::speed_at_least(0.0), Halfspace::speed_at_most(env.v_max)]),
        Some(t) => robust_controllable_set(data, t, &Target::Stop.region(env), collision, env),
    };
    let pass = pass_set(data, timing.t_green, collision, env);
    (stop, pass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::DataRow;
    use nalgebra::Vector2;

    fn row(s: f64, v: f64, u: f64) -> DataRow {
        DataRow { s_shift: s, v, u, cost: 1.0, iteration: 0 }
    }

    fn env() -> Envelope {
        Envelope::default()
    }

    #[test]
    fn zero_steps_is_target_with_collision() {
        let d = SetData::new(&Dataset::default(), &env().sys());
        let c = [Halfspace::new(Vector2::new(1.0, 1.0), 50.0)];
        let r = robust_controllable_set(&d, 0, &Target::Pass.region(&env()), Some(&c), &env());
        assert!(r.contains(&Vector2::new(10.0, 5.0), 0.0));
        assert!(!r.contains(&Vector2::new(50.0, 5.0), 0.0));
        assert!(!r.contains(&Vector2::new(2.0, 5.0), 0.0));
    }

    #[test]
    fn no_passing_rows_is_empty() {
        let ds = Dataset::new(vec![row(-100.0, 5.0, 0.0)], 0);
        let d = SetData::new(&ds, &env().sys());
        let r = robust_controllable_set(&d, 1, &Target::Pass.region(&env()), None, &env());
        assert!(r.is_empty());
    }

    #[test]
    fn toy_one_step_hull() {
        // image position s + v + u/2; pass target eroded to s >= 3.3
        let rows = vec![
            row(-10.0, 14.0, 0.0), // image s = 4.0, passes (needs >= 3 + 0.3)
            row(-10.0, 12.0, 2.0), // image s = 3.0, fails after erosion
            row(-8.0, 11.0, 1.0),  // image s = 3.5, passes
        ];
        let d = SetData::new(&Dataset::new(rows, 0), &env().sys());
        let r = robust_controllable_set(&d, 1, &Target::Pass.region(&env()), None, &env());
        match r {
            Region::Polygon(p) => {
                assert_eq!(p.vertices().len(), 2);
                assert!(p.contains(&Vector2::new(-10.0, 14.0), 1e-9));
                assert!(p.contains(&Vector2::new(-8.0, 11.0), 1e-9));
                assert!(!p.contains(&Vector2::new(-10.0, 12.0), 1e-9));
            }
            other => panic!("expected polygon, got {other:?}"),
        }
    }

    #[test]
    fn timing_rule() {
        // green 150, yellow 5, red 25, light red at steps 155..180
        let l = TrafficLight { position: 200.0, green: 150, yellow: 5, red: 25, offset: 0 };
        let t = terminal_timing(&l, 0, 21, 5, true);
        assert_eq!(t, TerminalTiming { t_red: None, t_green: 16 });
        let t = terminal_timing(&l, 150, 185, 5, true);
        assert_eq!(t, TerminalTiming { t_red: Some(25), t_green: 30 });
        let t = terminal_timing(&l, 160, 170, 5, true);
        assert_eq!(t.t_red, Some(15));
        assert_eq!(t.t_green, 5);
    }
}
