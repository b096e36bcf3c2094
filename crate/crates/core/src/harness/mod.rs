//! Scenario presets, closed-loop episodes, the learning loop, controller
//! comparison and file outputs.

mod compare;
mod episode;
mod learn;
mod output;
mod scenario;

use thiserror::Error;

use crate::controller::ControlError;
use crate::learning::LearningError;
use crate::plant::PlantError;
use crate::traffic::TrafficError;

pub use compare::{compare_controllers, match_cruise_speed, CompareRow};
pub use episode::{audit_log, instance_for, run_episode, Driver, Episode, EpisodeReport, StepLog, Violations};
pub use learn::{initial_model, model_from_dataset, run_learning, CurvePoint, ErrorPolicy, LearnOptions, LearningRun};
pub use output::{config_hash, read_log_csv, write_csv, write_json, Manifest};
pub use scenario::{ControllerId, DeadlineRule, Instance, LeadSpec, LearningSpec, Law, RouteSpec, Scenario};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("episode {stream} failed: {message}")]
    Episode { stream: u64, message: String },
}
