//! Scenario configuration, coupled simulation runs, metrics and output files.

pub mod compare;
pub mod config;
pub mod metrics;
pub mod output;
pub mod scenario;

pub use compare::{compare, CompareReport, CompareRow, Dominance, MeanGrids};
pub use config::{ControllerKind, SimConfig};
pub use metrics::{aor, objective_eval, peor, ControlEvent, FreshnessMetrics, NeighborRecord, ObjectiveReport, RateGrid};
pub use output::{read_control_events, write_outputs};
pub use scenario::{run_scenario, ScenarioResult, Summary};
