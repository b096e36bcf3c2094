//! Recorded data, the learned terminal cost, noise discretization and the
//! data-driven robust controllable sets.

mod dataset;
mod init;
mod noise;
mod sets;
mod update;
mod value;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AxisSegment, GeometryError};
use crate::plant::SystemMatrices;
use crate::solver::SolverError;
use crate::traffic::CollisionParams;

pub use dataset::{DataRow, Dataset};
pub use init::{build_initial_dataset, init_cost_to_go, init_tube_plan, tube_width, TubePlan};
pub use noise::{discretize_terminal_noise, sample_terminal_noise, NoiseDiscretization};
pub use sets::{pass_set, robust_controllable_set, terminal_sets, terminal_timing, SetData, TerminalTiming, Target};
pub use update::{augment_dataset, shift_rows, update_cost_to_go, UpdateStats};
pub use value::{eval_value_function, TargetSet, ValueFunction};

#[derive(Debug, Error)]
pub enum LearningError {
    #[error("initialization plan infeasible: {0}")]
    InitPlanInfeasible(String),
    #[error("bad noise discretization: {0}")]
    BadDiscretization(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Vehicle envelope and the robustness parameters shared by learning and control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Envelope {
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Measurement-noise support `W` on position.
    pub w_lo: f64,
    pub w_hi: f64,
    /// Observer gain `L`.
    pub gain: f64,
    /// Prediction horizon `N`.
    pub horizon: usize,
    pub collision: CollisionParams,
    pub ts: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        Self {
            v_max: 20.0,
            a_min: -3.0,
            a_max: 2.5,
            w_lo: -3.0,
            w_hi: 3.0,
            gain: 0.05,
            horizon: 5,
            collision: CollisionParams::default(),
            ts: 1.0,
        }
    }
}

impl Envelope {
    pub fn w(&self) -> AxisSegment {
        AxisSegment {
            lo: self.w_lo,
            hi: self.w_hi,
        }
    }

    /// One-step lumped-noise support `2L·W`.
    pub fn step_noise(&self) -> AxisSegment {
        self.w().scaled(2.0 * self.gain)
    }

    /// `2LN·W`.
    pub fn terminal_noise(&self) -> AxisSegment {
        self.w().scaled(2.0 * self.gain * self.horizon as f64)
    }

    pub fn sys(&self) -> SystemMatrices {
        SystemMatrices::zoh(self.ts)
    }
}
