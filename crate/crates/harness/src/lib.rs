//! Experiment driver: configuration, training campaigns, prediction
//! benchmarks, evaluation dumps and model-variance traces.

pub mod bench;
pub mod campaign;
pub mod config;
pub mod trajectories;
pub mod variance;

pub use bench::{bench_prediction_methods, BenchRow};
pub use campaign::{run_campaign, CampaignSummary, SummaryEntry};
pub use config::{BenchMethod, ExperimentConfig};
pub use trajectories::{dump_trajectories, TrajectoryReport};
pub use variance::{variance_trace, VariancePoint};
