//! Scenario engine. Loops run on the pipelined timeline over the simulated
//! network; metrics and batch helpers sit next to it.

mod batch;
mod engine;
mod metrics;
mod output;
mod scenario;

pub use batch::{derive_seed, find_critical_loss, run_batch, LossAxis, MIN_PROBE};
pub use engine::{
    run_scenario, run_sync_scenario, PlantRecord, RemoteSim, RoundRecord, StepRecord, SyncSim, TerminationRecord,
    Trace, SYNC_MODE,
};
pub use metrics::{compute_metrics, traveled_distance, Distribution, Metrics, PlantMetrics, SyncErrorStats};
pub use output::{write_metrics_json, write_network_csv, write_trace_csv};
pub use scenario::{
    cartpole_plant, ControllerConfig, DiscreteModel, GainDesign, HoldScript, LoopConfig, ModeChangeScript, ModeConfig,
    NetworkConfig, NoiseConfig, PlantConfig, PlantModel, PoleSpec, RunConfig, Scenario,
};
